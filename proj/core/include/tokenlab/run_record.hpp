#pragma once

#include <cstdint>
#include <string>

namespace tokenlab {

// Outcome of one (variant, task, seed) training run.
struct RunRecord {
  std::string variant;
  std::string task;
  std::int64_t seed = 0;
  double auroc = 0;  // test-split AUROC in [0,1]
  std::int64_t trainable_params = 0;
  double wall_seconds = 0;
  std::string status = "ok";  // "ok" or "failed(<reason>)"

  bool ok() const { return status == "ok"; }
};

}  // namespace tokenlab
