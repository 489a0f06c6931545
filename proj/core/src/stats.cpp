#include "tokenlab/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <stdexcept>

namespace tokenlab::stats {

double auroc(const std::vector<double>& scores, const std::vector<bool>& labels) {
  if (scores.size() != labels.size())
    throw std::invalid_argument("auroc: scores and labels differ in length");
  const std::size_t n = scores.size();
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(scores[i]))
      throw std::invalid_argument("auroc: non-finite score");
    if (labels[i]) ++n_pos;
  }
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0)
    throw std::invalid_argument("auroc: needs at least one positive and one negative");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&scores](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // midrank sum over positives
  double rank_sum_pos = 0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    // ranks i+1 .. j, midrank = (i + j + 1) / 2
    double midrank = 0.5 * static_cast<double>(i + j + 1);
    for (std::size_t k = i; k < j; ++k)
      if (labels[order[k]]) rank_sum_pos += midrank;
    i = j;
  }
  double np = static_cast<double>(n_pos);
  double nn = static_cast<double>(n_neg);
  return (rank_sum_pos - np * (np + 1) * 0.5) / (np * nn);
}

namespace {

double normal_sf(double z) { return 0.5 * std::erfc(z / std::sqrt(2.0)); }

}  // namespace

TestResult wilcoxon_signed_rank(const std::vector<PairedSample>& pairs) {
  if (pairs.empty()) throw std::invalid_argument("wilcoxon: needs at least one pair");
  std::vector<double> diffs;
  diffs.reserve(pairs.size());
  for (const auto& p : pairs) {
    if (!std::isfinite(p.value_a) || !std::isfinite(p.value_b))
      throw std::invalid_argument("wilcoxon: non-finite value");
    double d = p.value_b - p.value_a;
    if (d != 0) diffs.push_back(d);
  }

  TestResult res;
  res.n_effective = static_cast<int>(diffs.size());
  if (diffs.empty()) {
    res.p_two_sided = 1.0;
    res.p_corrected = 1.0;
    return res;
  }

  const std::size_t n = diffs.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&diffs](std::size_t a, std::size_t b) {
    return std::fabs(diffs[a]) < std::fabs(diffs[b]);
  });

  // midranks in doubled units so ties stay integral
  std::vector<long> rank2(n, 0);
  std::vector<long> tie_sizes;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && std::fabs(diffs[order[j]]) == std::fabs(diffs[order[i]])) ++j;
    long r2 = static_cast<long>(i + j + 1);  // 2 * midrank
    for (std::size_t k = i; k < j; ++k) rank2[order[k]] = r2;
    tie_sizes.push_back(static_cast<long>(j - i));
    i = j;
  }

  long w2 = 0;  // 2 * W
  for (std::size_t k = 0; k < n; ++k)
    if (diffs[k] > 0) w2 += rank2[k];
  res.statistic = 0.5 * static_cast<double>(w2);

  const long total2 = static_cast<long>(n * (n + 1));  // sum of all doubled ranks
  const long mu2 = total2 / 2;                         // 2 * E[W]; n(n+1)/2 is integral

  if (n <= static_cast<std::size_t>(kWilcoxonExactLimit)) {
    // exact null distribution of 2W over all sign assignments
    std::vector<std::uint64_t> dp(static_cast<std::size_t>(total2) + 1, 0);
    dp[0] = 1;
    for (std::size_t k = 0; k < n; ++k) {
      long r2 = rank2[k];
      for (long s = total2; s >= r2; --s) dp[s] += dp[s - r2];
    }
    long dev2 = std::labs(2 * w2 - 2 * mu2);  // 4 * |W - mu|, keeps everything integral
    std::uint64_t count = 0;
    for (long s = 0; s <= total2; ++s)
      if (std::labs(2 * s - 2 * mu2) >= dev2) count += dp[s];
    res.p_two_sided =
        static_cast<double>(count) / std::ldexp(1.0, static_cast<int>(n));
  } else {
    double nn = static_cast<double>(n);
    double var = nn * (nn + 1) * (2 * nn + 1) / 24.0;
    for (long t : tie_sizes)
      var -= static_cast<double>(t * t * t - t) / 48.0;
    double w = 0.5 * static_cast<double>(w2);
    double mu = 0.5 * static_cast<double>(mu2);
    double z = (w - mu) / std::sqrt(var);
    res.p_two_sided = std::min(1.0, 2.0 * normal_sf(std::fabs(z)));
  }
  res.p_corrected = res.p_two_sided;

  if (w2 > mu2)
    res.direction = Direction::up;
  else if (w2 < mu2)
    res.direction = Direction::down;
  else
    res.direction = Direction::none;
  return res;
}

double bonferroni(double p, int m) {
  if (p < 0 || p > 1) throw std::invalid_argument("bonferroni: p outside [0,1]");
  if (m < 1) throw std::invalid_argument("bonferroni: family size must be >= 1");
  return std::min(1.0, static_cast<double>(m) * p);
}

SeedPairing pair_by_seed(const std::vector<RunRecord>& runs_a,
                         const std::vector<RunRecord>& runs_b) {
  std::set<std::int64_t> seen_a, seen_b;
  for (const auto& r : runs_a)
    if (r.ok() && !seen_a.insert(r.seed).second)
      throw std::invalid_argument("pair_by_seed: duplicate seed " +
                                  std::to_string(r.seed) + " on side a");
  for (const auto& r : runs_b)
    if (r.ok() && !seen_b.insert(r.seed).second)
      throw std::invalid_argument("pair_by_seed: duplicate seed " +
                                  std::to_string(r.seed) + " on side b");

  SeedPairing out;
  for (const auto& a : runs_a) {
    if (!a.ok()) continue;
    if (seen_b.count(a.seed)) {
      const RunRecord* b = nullptr;
      for (const auto& r : runs_b)
        if (r.ok() && r.seed == a.seed) {
          b = &r;
          break;
        }
      out.pairs.push_back({a.seed, a.auroc, b->auroc});
    } else {
      out.unmatched_a.push_back(a.seed);
    }
  }
  for (const auto& b : runs_b)
    if (b.ok() && !seen_a.count(b.seed)) out.unmatched_b.push_back(b.seed);
  return out;
}

Summary summarize(const std::vector<double>& values) {
  if (values.size() < 2)
    throw std::invalid_argument("summarize: needs n >= 2 for a standard deviation");
  double mean = std::accumulate(values.begin(), values.end(), 0.0) /
                static_cast<double>(values.size());
  double ss = 0;
  for (double v : values) ss += (v - mean) * (v - mean);
  Summary s;
  s.mean = mean;
  s.sd = std::sqrt(ss / static_cast<double>(values.size() - 1));
  return s;
}

}  // namespace tokenlab::stats
