#include <doctest.h>

#include <cmath>

#include "support/oracles.hpp"
#include "tokenlab/rng.hpp"
#include "tokenlab/stats.hpp"

using namespace tokenlab;
using stats::Direction;

TEST_CASE("auroc on the spec examples") {
  CHECK(stats::auroc({0.9, 0.8, 0.3, 0.2}, {true, true, false, false}) == 1.0);
  CHECK(stats::auroc({0.5, 0.5, 0.5, 0.5}, {true, false, true, false}) == 0.5);
  CHECK(stats::auroc({0.9, 0.2, 0.8, 0.3}, {true, false, false, true}) == 0.75);
  CHECK(stats::auroc({0.1, 0.9}, {true, false}) == 0.0);
}

TEST_CASE("auroc rejects single-class and non-finite input") {
  CHECK_THROWS_AS(stats::auroc({0.1, 0.2}, {true, true}), std::invalid_argument);
  CHECK_THROWS_AS(stats::auroc({0.1, 0.2}, {false, false}), std::invalid_argument);
  double inf = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(stats::auroc({0.1, inf}, {true, false}), std::invalid_argument);
}

TEST_CASE("auroc equals brute-force pair counting, bit for bit") {
  rng::CounterRng g(314);
  for (int iter = 0; iter < 300; ++iter) {
    int n = 2 + static_cast<int>(g.next_below(199));
    std::vector<double> scores(n);
    std::vector<bool> labels(n);
    bool any_pos = false, any_neg = false;
    for (int i = 0; i < n; ++i) {
      // coarse grid to force plenty of ties
      scores[i] = static_cast<double>(g.next_below(12)) / 4.0;
      labels[i] = g.next_double() < 0.4;
      (labels[i] ? any_pos : any_neg) = true;
    }
    if (!any_pos || !any_neg) continue;
    CHECK(stats::auroc(scores, labels) == testsupport::brute_auroc(scores, labels));
  }
}

TEST_CASE("auroc is invariant under strictly monotone score transforms") {
  rng::CounterRng g(99);
  for (int iter = 0; iter < 50; ++iter) {
    int n = 5 + static_cast<int>(g.next_below(60));
    std::vector<double> scores(n), warped(n);
    std::vector<bool> labels(n);
    bool any_pos = false, any_neg = false;
    for (int i = 0; i < n; ++i) {
      scores[i] = static_cast<double>(g.next_below(9)) - 4.0;
      warped[i] = std::exp(0.5 * scores[i]) + 3.0;
      labels[i] = g.next_double() < 0.5;
      (labels[i] ? any_pos : any_neg) = true;
    }
    if (!any_pos || !any_neg) continue;
    CHECK(stats::auroc(scores, labels) == stats::auroc(warped, labels));
  }
}

TEST_CASE("wilcoxon: ten positive differences give p = 2/1024") {
  std::vector<stats::PairedSample> pairs;
  for (int s = 1; s <= 10; ++s)
    pairs.push_back({s, 71.0 + 0.1 * s, 81.0 + 0.2 * s});  // b - a ~ +10 points
  auto r = stats::wilcoxon_signed_rank(pairs);
  CHECK(r.n_effective == 10);
  CHECK(r.statistic == 55.0);
  CHECK(r.p_two_sided == 2.0 / 1024.0);
  CHECK(r.direction == Direction::up);
  // survives a family of four
  CHECK(stats::bonferroni(r.p_two_sided, 4) == 8.0 / 1024.0);
  CHECK(stats::bonferroni(r.p_two_sided, 4) < 0.05);
}

TEST_CASE("wilcoxon: identical pairs yield n_effective 0 and p 1") {
  std::vector<stats::PairedSample> pairs;
  for (int s = 0; s < 8; ++s) pairs.push_back({s, 0.75, 0.75});
  auto r = stats::wilcoxon_signed_rank(pairs);
  CHECK(r.n_effective == 0);
  CHECK(r.p_two_sided == 1.0);
  CHECK(r.direction == Direction::none);
}

TEST_CASE("wilcoxon antisymmetry: swapping sides flips direction, keeps p") {
  rng::CounterRng g(555);
  for (int iter = 0; iter < 100; ++iter) {
    int n = 1 + static_cast<int>(g.next_below(14));
    std::vector<stats::PairedSample> ab, ba;
    for (int i = 0; i < n; ++i) {
      double a = static_cast<double>(g.next_below(7)) / 2.0;
      double b = static_cast<double>(g.next_below(7)) / 2.0;
      ab.push_back({i, a, b});
      ba.push_back({i, b, a});
    }
    auto r1 = stats::wilcoxon_signed_rank(ab);
    auto r2 = stats::wilcoxon_signed_rank(ba);
    CHECK(r1.p_two_sided == r2.p_two_sided);
    if (r1.direction == Direction::up) CHECK(r2.direction == Direction::down);
    if (r1.direction == Direction::down) CHECK(r2.direction == Direction::up);
    if (r1.direction == Direction::none) CHECK(r2.direction == Direction::none);
  }
}

TEST_CASE("wilcoxon exact p equals full sign enumeration for n <= 12") {
  rng::CounterRng g(808);
  int checked = 0;
  for (int iter = 0; iter < 200; ++iter) {
    int n = 1 + static_cast<int>(g.next_below(12));
    std::vector<stats::PairedSample> pairs;
    std::vector<double> diffs;
    for (int i = 0; i < n; ++i) {
      // small integer grid: many ties, some zeros
      double d = (static_cast<double>(g.next_below(9)) - 4.0) / 2.0;
      pairs.push_back({i, 10.0, 10.0 + d});
      if (d != 0) diffs.push_back(d);
    }
    auto r = stats::wilcoxon_signed_rank(pairs);
    CHECK(r.p_two_sided == testsupport::wilcoxon_enum_p(diffs));
    ++checked;
  }
  CHECK(checked == 200);
}

TEST_CASE("wilcoxon normal approximation matches a frozen scipy reference") {
  // 29 nonzero differences (ties included); scipy.stats.wilcoxon with
  // mode='approx', correction=False gives W+ = 284.5 and the p below.
  std::vector<double> d = {-0.2, 1.8,  0.3,  -0.5, 1.0, -0.7, 0.5,  -1.3, -0.8, 0.5,
                           0.9,  0.4,  0.2,  0.1,  -0.9, -0.3, -0.1, 1.1,  0.6,  -1.1,
                           0.6,  -0.2, 0.8,  1.1,  1.0,  -0.4, 0.1,  0.6,  1.1};
  std::vector<stats::PairedSample> pairs;
  for (std::size_t i = 0; i < d.size(); ++i)
    pairs.push_back({static_cast<std::int64_t>(i), 0.0, d[i]});
  auto r = stats::wilcoxon_signed_rank(pairs);
  CHECK(r.n_effective == 29);
  CHECK(r.statistic == 284.5);
  CHECK(r.p_two_sided == doctest::Approx(0.1470393637071653).epsilon(1e-12));
  CHECK(r.direction == Direction::up);
}

TEST_CASE("bonferroni arithmetic and clamping") {
  CHECK(stats::bonferroni(0.01, 4) == doctest::Approx(0.04).epsilon(1e-15));
  CHECK(stats::bonferroni(0.5, 4) == 1.0);
  CHECK(stats::bonferroni(0.00195, 4) == doctest::Approx(0.0078).epsilon(1e-12));
  CHECK(stats::bonferroni(0.0, 1) == 0.0);
  CHECK_THROWS_AS(stats::bonferroni(-0.1, 2), std::invalid_argument);
  CHECK_THROWS_AS(stats::bonferroni(0.5, 0), std::invalid_argument);
}

namespace {

std::vector<RunRecord> make_runs(const std::vector<std::int64_t>& seeds,
                                 double base) {
  std::vector<RunRecord> out;
  for (auto s : seeds) {
    RunRecord r;
    r.variant = "v";
    r.task = "t";
    r.seed = s;
    r.auroc = base + 0.001 * static_cast<double>(s);
    out.push_back(r);
  }
  return out;
}

}  // namespace

TEST_CASE("pair_by_seed joins on the seed intersection") {
  auto a = make_runs({1, 2, 3, 4, 5, 6, 7, 8, 9, 10}, 0.7);
  auto b = make_runs({1, 2, 3, 4, 5, 6, 7, 8, 9, 10}, 0.8);
  auto joined = stats::pair_by_seed(a, b);
  CHECK(joined.pairs.size() == 10);
  CHECK(joined.unmatched_a.empty());
  CHECK(joined.unmatched_b.empty());

  auto c = make_runs({6, 7, 8, 9, 10, 11, 12, 13, 14, 15}, 0.8);
  auto partial = stats::pair_by_seed(a, c);
  CHECK(partial.pairs.size() == 5);
  CHECK(partial.unmatched_a.size() == 5);
  CHECK(partial.unmatched_b.size() == 5);

  auto dup = a;
  dup.push_back(a[0]);
  CHECK_THROWS_AS(stats::pair_by_seed(dup, b), std::invalid_argument);
}

TEST_CASE("pair_by_seed equals a naive nested-loop join on random subsets") {
  rng::CounterRng g(4242);
  for (int iter = 0; iter < 50; ++iter) {
    std::vector<std::int64_t> sa, sb;
    for (std::int64_t s = 0; s < 20; ++s) {
      if (g.next_double() < 0.5) sa.push_back(s);
      if (g.next_double() < 0.5) sb.push_back(s);
    }
    if (sa.empty() || sb.empty()) continue;
    auto a = make_runs(sa, 0.7);
    auto b = make_runs(sb, 0.8);
    auto joined = stats::pair_by_seed(a, b);

    std::size_t naive = 0;
    for (const auto& ra : a)
      for (const auto& rb : b)
        if (ra.seed == rb.seed) ++naive;
    CHECK(joined.pairs.size() == naive);
    CHECK(joined.pairs.size() + joined.unmatched_a.size() == a.size());
    CHECK(joined.pairs.size() + joined.unmatched_b.size() == b.size());
    for (const auto& p : joined.pairs) CHECK(p.value_b - p.value_a ==
                                             doctest::Approx(0.1).epsilon(1e-9));
  }
}

TEST_CASE("failed runs never enter the pairing") {
  auto a = make_runs({1, 2, 3}, 0.7);
  auto b = make_runs({1, 2, 3}, 0.8);
  b[1].status = "failed(divergence at epoch 3)";
  auto joined = stats::pair_by_seed(a, b);
  CHECK(joined.pairs.size() == 2);
  REQUIRE(joined.unmatched_a.size() == 1);
  CHECK(joined.unmatched_a[0] == 2);
}

TEST_CASE("summarize mean and sample sd") {
  auto s = stats::summarize({82.3, 82.3});
  CHECK(s.mean == 82.3);
  CHECK(s.sd == 0.0);

  auto t = stats::summarize({80.0, 84.0});
  CHECK(t.mean == 82.0);
  CHECK(t.sd == doctest::Approx(2.8284271247461903).epsilon(1e-15));

  auto u = stats::summarize({5.5, 5.5, 5.5, 5.5});
  CHECK(u.sd == 0.0);

  CHECK_THROWS_AS(stats::summarize({1.0}), std::invalid_argument);
}
