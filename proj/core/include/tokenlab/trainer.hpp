#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tokenlab/config.hpp"
#include "tokenlab/embedding.hpp"
#include "tokenlab/event_model.hpp"
#include "tokenlab/model.hpp"
#include "tokenlab/pseudo_encoder.hpp"
#include "tokenlab/run_record.hpp"

namespace tokenlab::train {

// External state a tokenizer pathway needs: the frozen cache, or the
// encoder spec plus mapping for the trainable pseudo-encoder.
struct TokenizerBackend {
  const pseudo::EmbeddingCache* cache = nullptr;
  const pseudo::DescriptionEncoderSpec* encoder = nullptr;
  const pseudo::MappingTable* mapping = nullptr;
};

// Exact count over parameter groups with the trainable flag set: frozen
// cache rows are excluded, ablated encoders are not instantiated.
std::int64_t count_trainable_params(const emb::TokenizerSpec& tok,
                                    const model::ModelConfig& cfg,
                                    std::int64_t vocab_size);

struct TrainHooks {
  // called after the final epoch with the untouched-by-training cache bytes
  // check inputs; used by tests, normally empty
  std::string checkpoint_path;  // save the best model when non-empty
  int override_epochs = 0;      // 0 = use train config
};

// Supervised training: subject-level 70/15/15 split from the seed, BCE loss,
// SGD with momentum and cosine decay, best-validation-AUROC checkpointing,
// test AUROC in the returned record.
RunRecord train(const Cohort& cohort, std::string_view task_id,
                const emb::TokenizerSpec& tok, const model::ModelConfig& mcfg,
                const model::TrainConfig& tcfg, const TokenizerBackend& backend,
                const TrainHooks& hooks = {});

struct GradCheckResult {
  double max_param_rel = 0;   // analytic vs central difference over parameters
  double max_input_rel = 0;   // time/value scalar input paths
  std::int64_t param_probes = 0;
};

// Central finite differences (step 1e-5) against the analytic backward pass
// on a small batch, double precision, dropout disabled. Probes a random 1%
// of each parameter group, capped per group so the whole suite stays fast.
GradCheckResult grad_check(const model::ModelConfig& mcfg,
                           const emb::TokenizerSpec& tok,
                           const TokenizerBackend& backend, const Cohort& sample,
                           std::string_view task_id, std::int64_t seed);

// Checkpoint file: TLMODEL1 magic, config block, parameter groups as
// (name, shape, float32 payload), FNV-1a digest terminated.
struct CheckpointGroup {
  std::string name;
  std::vector<std::uint32_t> shape;
  std::vector<float> values;
};
struct Checkpoint {
  config::Doc config;
  std::vector<CheckpointGroup> groups;
};
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);  // verifies the digest

}  // namespace tokenlab::train
