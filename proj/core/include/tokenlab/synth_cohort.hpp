#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "tokenlab/config.hpp"
#include "tokenlab/event_model.hpp"

namespace tokenlab::synth {

// Per-task channel weights for the planted label score
//   r = w_code * z_count + w_value * z_labmean + w_time * burst + noise.
struct TaskSpec {
  std::string task_id;
  double w_code = 1;
  double w_value = 0;
  double w_time = 0;
  double noise_scale = 1;  // multiplies GeneratorSpec::noise_std
};

struct GeneratorSpec {
  std::int64_t n_patients = 0;
  std::int64_t vocab_size = 1200;
  std::int64_t seq_len_min = 12;
  std::int64_t seq_len_max = 36;
  std::vector<TaskSpec> tasks;
  double noise_std = 1.0;
  double label_prevalence = 0.2;
  std::int64_t seed = 1;

  void validate() const;  // throws std::invalid_argument
};

// Fixed generative constants. Every patient gets kLabEvents measurements of
// the designated lab code; bursts rewrite kBurstGapsMin..Max consecutive
// gaps to under kBurstGapMax minutes; the detector looks for
// kDetectRunGaps consecutive gaps under kGapThreshold minutes.
inline constexpr int kLabEvents = 3;
inline constexpr double kRiskCodeFraction = 0.05;
inline constexpr double kMeanGapMinutes = 60.0;
inline constexpr double kGapThreshold = 5.0;
inline constexpr int kDetectRunGaps = 3;
inline constexpr int kBurstGapsMin = 3;
inline constexpr int kBurstGapsMax = 5;
inline constexpr double kBurstGapLow = 0.5;
inline constexpr double kBurstGapHigh = 4.5;

// All event times and values are quantized to this grid so that file
// round-trips and prefix sums are exact in double precision.
inline constexpr double kTimeQuantum = 1.0 / 1024.0;
double quantize(double x);

struct SynthVocabulary {
  Vocabulary vocab;
  std::vector<std::uint32_t> risk_ids;  // ascending
  std::uint32_t lab_id = 0;
};

// Deterministic vocabulary of `vocab_size` code strings over clinical
// families; ~5% risk codes, one lab code.
SynthVocabulary build_synth_vocabulary(std::int64_t vocab_size);

// Analytic standardization constants and the label threshold for one task.
// These come from the generative distributions, never from a sample.
struct TaskConstants {
  double w_code = 0, w_value = 0, w_time = 0;
  double noise = 0;          // effective noise std for this task
  double mu_count = 0;       // E[risk-code count]
  double sigma_count = 1;    // sd of risk-code count
  double sigma_labmean = 1;  // sd of the mean lab value
  double threshold = 0;      // (1 - prevalence) quantile of the score
};
TaskConstants task_constants(const GeneratorSpec& spec, const TaskSpec& task);

// Deterministic given spec.seed; patients are keyed individually so sharded
// generation is independent of worker count.
Cohort generate_cohort(const GeneratorSpec& spec);

struct ChannelMask {
  bool use_code = true;
  bool use_value = true;
  bool use_time = true;
};

struct OracleEstimate {
  double auroc = 0;
  double se = 0;
  std::int64_t n_samples = 0;
};

// Monte Carlo estimate of the AUROC of the posterior score restricted to the
// unmasked channels, with standard error over sample batches.
OracleEstimate bayes_optimal_auroc(const GeneratorSpec& spec,
                                   std::string_view task_id, ChannelMask mask,
                                   std::int64_t n_samples = 125000);

// Shipped single-task presets and the four-task bundle.
std::vector<std::string> preset_names();
GeneratorSpec preset(std::string_view name, std::int64_t n_patients,
                     std::int64_t seed);

// Planted time signal for falsification runs; deliberately not a preset.
GeneratorSpec falsification_spec(std::int64_t n_patients, std::int64_t seed);

// Spec file: plain-text `key = value` lines plus [task NAME] sections.
GeneratorSpec spec_from_config(const config::Doc& doc);
std::string spec_to_config(const GeneratorSpec& spec);

}  // namespace tokenlab::synth
