#pragma once

#include <cstdint>
#include <vector>

#include "tokenlab/run_record.hpp"

namespace tokenlab::stats {

// Mann-Whitney AUROC: (concordant + 0.5 * tied) / (P * N), computed by rank
// sums in O(n log n). Throws std::invalid_argument on single-class input.
double auroc(const std::vector<double>& scores, const std::vector<bool>& labels);

struct PairedSample {
  std::int64_t seed = 0;
  double value_a = 0;
  double value_b = 0;
};

enum class Direction { up, down, none };

struct TestResult {
  double statistic = 0;    // W: sum of positive-difference ranks (b - a)
  double p_two_sided = 1;
  double p_corrected = 1;  // min(1, m * p) once a family size is applied
  int n_effective = 0;     // pairs with nonzero difference
  Direction direction = Direction::none;
};

// Paired two-sided Wilcoxon signed-rank test on differences b - a.
// Zero differences are dropped. Exact p by full sign-assignment distribution
// for n_effective <= kWilcoxonExactLimit, normal approximation with
// tie-corrected variance above. n_effective == 0 yields p = 1, direction none.
inline constexpr int kWilcoxonExactLimit = 25;
TestResult wilcoxon_signed_rank(const std::vector<PairedSample>& pairs);

double bonferroni(double p, int m);

struct SeedPairing {
  std::vector<PairedSample> pairs;          // inner join on seed, a-side order
  std::vector<std::int64_t> unmatched_a;
  std::vector<std::int64_t> unmatched_b;
};

// Inner join of two run lists on seed. Only records with ok() status enter
// the join. Throws on a duplicate seed within one side.
SeedPairing pair_by_seed(const std::vector<RunRecord>& runs_a,
                         const std::vector<RunRecord>& runs_b);

struct Summary {
  double mean = 0;
  double sd = 0;
};

// Mean and sample standard deviation (n-1 denominator); throws for n < 2.
Summary summarize(const std::vector<double>& values);

}  // namespace tokenlab::stats
