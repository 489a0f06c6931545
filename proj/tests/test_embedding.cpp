#include <doctest.h>

#include <cmath>

#include "tokenlab/embedding.hpp"
#include "tokenlab/rng.hpp"

using namespace tokenlab;
using emb::MatX;
using emb::VecX;

namespace {

double rel_err(double a, double b) {
  return std::fabs(a - b) / std::max({std::fabs(a), std::fabs(b), 1e-8});
}

// for single-parameter probes: saturated units have gradients near zero and
// the central difference loses everything to cancellation, so allow a small
// absolute floor on top of the relative tolerance
bool grad_close(double analytic, double fd) {
  return std::fabs(analytic - fd) <= 1e-6 * std::max(std::fabs(analytic), std::fabs(fd)) + 1e-9;
}

// central finite difference of u . f(x)
template <typename F>
double fd_input_grad(F&& f, const VecX<double>& u, double x, double h = 1e-5) {
  return (u.dot(f(x + h)) - u.dot(f(x - h))) / (2 * h);
}

Event make_event(std::uint32_t code, double dt, double value, bool has_value) {
  Event e;
  e.code_id = code;
  e.time_delta = dt;
  e.value = value;
  e.has_value = has_value;
  return e;
}

emb::EventEmbedParams<double> make_embed_params(const MatX<double>* table, int d,
                                                emb::TimeEncoderKind kind,
                                                std::uint64_t seed) {
  emb::EventEmbedParams<double> p;
  p.code_vectors = table;
  p.time_enc.kind = kind;
  p.time_enc.cve = emb::init_cve<double>(d, rng::key_of({seed, 1}));
  p.time_enc.t2v = emb::init_time2vec<double>(6, d, rng::key_of({seed, 2}));
  p.time_enc.lete = emb::init_lete<double>(0.5, d, rng::key_of({seed, 3}));
  p.cve_value = emb::init_cve<double>(d, rng::key_of({seed, 4}));
  p.value_stats = emb::ValueStats<double>::identity(table->rows());
  return p;
}

}  // namespace

TEST_CASE("cve: zero input with zero bias gives the zero vector") {
  auto p = emb::init_cve<double>(32, 7);
  p.b1.setZero();
  CHECK(emb::cve_forward(0.0, p).norm() == 0.0);

  auto q = emb::init_cve<double>(32, 8);
  q.w2.setZero();
  CHECK(emb::cve_forward(3.7, q).norm() == 0.0);

  CHECK(p.w1.size() == emb::cve_hidden_size(32));
  CHECK(emb::cve_hidden_size(128) == 12);
  CHECK_THROWS_AS(emb::cve_forward(std::nan(""), p), std::invalid_argument);
}

TEST_CASE("cve gradients match central finite differences") {
  rng::CounterRng g(11);
  for (int iter = 0; iter < 20; ++iter) {
    auto p = emb::init_cve<double>(24, g.next_u64());
    p.b1 = VecX<double>::NullaryExpr(p.b1.size(), [&](auto) { return g.next_normal(); });
    double x = g.next_normal() * 2;
    VecX<double> u =
        VecX<double>::NullaryExpr(24, [&](auto) { return g.next_normal(); });

    auto grad = emb::init_cve<double>(24, 0);
    grad.w1.setZero();
    grad.b1.setZero();
    grad.w2.setZero();
    double dx = emb::cve_backward(x, p, u, grad);
    double dx_fd = fd_input_grad([&](double t) { return emb::cve_forward(t, p); }, u, x);
    CHECK(rel_err(dx, dx_fd) < 1e-6);

    // spot-check parameter gradients
    for (int probe = 0; probe < 6; ++probe) {
      double h = 1e-5;
      int which = static_cast<int>(g.next_below(3));
      auto pp = p;
      double *slot = nullptr, analytic = 0;
      if (which == 0) {
        int i = static_cast<int>(g.next_below(pp.w1.size()));
        slot = &pp.w1[i];
        analytic = grad.w1[i];
      } else if (which == 1) {
        int i = static_cast<int>(g.next_below(pp.b1.size()));
        slot = &pp.b1[i];
        analytic = grad.b1[i];
      } else {
        int i = static_cast<int>(g.next_below(pp.w2.rows()));
        int j = static_cast<int>(g.next_below(pp.w2.cols()));
        slot = &pp.w2(i, j);
        analytic = grad.w2(i, j);
      }
      double keep = *slot;
      *slot = keep + h;
      double up = u.dot(emb::cve_forward(x, pp));
      *slot = keep - h;
      double dn = u.dot(emb::cve_forward(x, pp));
      CHECK(grad_close(analytic, (up - dn) / (2 * h)));
    }
  }
}

TEST_CASE("time2vec: sinusoid features stay in [-1,1] and vanish at zero phase") {
  auto p = emb::init_time2vec<double>(5, 16, 99);
  for (double t : {0.0, 0.3, 2.0, 7.5, 123.0}) {
    auto f = emb::time2vec_features(t, p);
    REQUIRE(f.size() == 6);
    for (int i = 1; i < 6; ++i) {
      CHECK(f[i] <= 1.0);
      CHECK(f[i] >= -1.0);
    }
  }
  // pick t so that w_0 t + b_0 = 0
  double t0 = -p.periodic_b[0] / p.periodic_w[0];
  CHECK(std::fabs(emb::time2vec_features(t0, p)[1]) < 1e-12);
}

TEST_CASE("time2vec sinusoids are periodic in 2*pi over the frequency") {
  auto p = emb::init_time2vec<double>(4, 16, 5);
  for (int i = 0; i < 4; ++i) {
    double t = 1.7;
    double period = 2 * M_PI / p.periodic_w[i];
    auto a = emb::time2vec_features(t, p);
    auto b = emb::time2vec_features(t + period, p);
    CHECK(std::fabs(a[i + 1] - b[i + 1]) <= 1e-9);
  }
}

TEST_CASE("time2vec gradients match finite differences") {
  rng::CounterRng g(13);
  for (int iter = 0; iter < 10; ++iter) {
    auto p = emb::init_time2vec<double>(3, 20, g.next_u64());
    double t = g.next_double() * 5;
    VecX<double> u =
        VecX<double>::NullaryExpr(20, [&](auto) { return g.next_normal(); });
    auto grad = emb::init_time2vec<double>(3, 20, 0);
    grad.linear_w = grad.linear_b = 0;
    grad.periodic_w.setZero();
    grad.periodic_b.setZero();
    grad.proj.setZero();
    double dt = emb::time2vec_backward(t, p, u, grad);
    double dt_fd =
        fd_input_grad([&](double x) { return emb::time2vec_forward(x, p); }, u, t);
    CHECK(rel_err(dt, dt_fd) < 1e-6);

    double h = 1e-5;
    auto pp = p;
    pp.linear_w += h;
    double up = u.dot(emb::time2vec_forward(t, pp));
    pp.linear_w -= 2 * h;
    double dn = u.dot(emb::time2vec_forward(t, pp));
    CHECK(rel_err(grad.linear_w, (up - dn) / (2 * h)) < 1e-6);
  }
}

TEST_CASE("lete: dimension split follows the fourier fraction") {
  auto p = emb::init_lete<double>(0.5, 128, 3);
  CHECK(p.fourier_dims() == 64);
  CHECK(p.dim() == 128);
  auto q = emb::init_lete<double>(0.25, 128, 3);
  CHECK(q.fourier_dims() == 32);

  CHECK(emb::lete_preset_fraction("balanced") == 0.5);
  CHECK(emb::lete_preset_fraction("spline-heavy") == 0.25);
  CHECK(emb::lete_preset_fraction("fourier-heavy") == 0.75);
  CHECK_THROWS_AS(emb::lete_preset_fraction("wavy"), std::invalid_argument);
}

TEST_CASE("lete: zero perceptron weights leave only the bias, independent of t") {
  auto p = emb::init_lete<double>(0.5, 32, 5);
  p.sw1.setZero();
  p.sw2.setZero();
  p.sb2.setConstant(0.25);
  auto a = emb::lete_forward(1.0, p);
  auto b = emb::lete_forward(100.0, p);
  CHECK((a.tail(16).array() == 0.25).all());
  CHECK(a.tail(16) == b.tail(16));
}

TEST_CASE("lete gradients match finite differences") {
  rng::CounterRng g(17);
  for (int iter = 0; iter < 10; ++iter) {
    auto p = emb::init_lete<double>(0.5, 24, g.next_u64());
    double t = g.next_double() * 40;
    VecX<double> u =
        VecX<double>::NullaryExpr(24, [&](auto) { return g.next_normal(); });
    auto grad = emb::init_lete<double>(0.5, 24, 0);
    grad.freqs.setZero();
    grad.phases.setZero();
    grad.sw1.setZero();
    grad.sb1.setZero();
    grad.sw2.setZero();
    grad.sb2.setZero();
    double dt = emb::lete_backward(t, p, u, grad);
    double dt_fd =
        fd_input_grad([&](double x) { return emb::lete_forward(x, p); }, u, t);
    CHECK(rel_err(dt, dt_fd) < 1e-6);

    double h = 1e-5;
    auto pp = p;
    pp.freqs[1] += h;
    double up = u.dot(emb::lete_forward(t, pp));
    pp.freqs[1] -= 2 * h;
    double dn = u.dot(emb::lete_forward(t, pp));
    CHECK(rel_err(grad.freqs[1], (up - dn) / (2 * h)) < 1e-6);
  }
}

TEST_CASE("tokenizer spec validation and field serialization") {
  auto triplet = emb::TokenizerSpec::triplet_default();
  CHECK_NOTHROW(triplet.validate());

  auto bad = triplet;
  bad.code_source = emb::CodeSourceKind::frozen_cache;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

  auto text = emb::TokenizerSpec::textcode_default("tiny-clinical",
                                                   emb::CodeSourceKind::frozen_cache);
  CHECK_NOTHROW(text.validate());
  bad = text;
  bad.mapping_mode = "sparse";
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = text;
  bad.encoder.clear();
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

  auto fields = text.serialize_fields();
  REQUIRE(fields.size() == 6);
  CHECK(fields[0].second == "textcode");
  CHECK(fields[4].second == "frozen(tiny-clinical)");

  auto other = text;
  other.code_source = emb::CodeSourceKind::trainable_encoder;
  auto diff = emb::spec_field_diff(text, other);
  REQUIRE(diff.size() == 1);
  CHECK(diff[0] == "code_source");
}

TEST_CASE("embed_event: ablation identities are bit-exact") {
  const int d = 32;
  rng::CounterRng g(23);
  MatX<double> table =
      MatX<double>::NullaryExpr(50, d, [&](auto, auto) { return g.next_normal() * 0.1; });

  for (auto kind : {emb::TimeEncoderKind::cve, emb::TimeEncoderKind::time2vec,
                    emb::TimeEncoderKind::lete}) {
    auto p = make_embed_params(&table, d, kind, 1000 + static_cast<int>(kind));
    for (int iter = 0; iter < 200; ++iter) {
      auto ev = make_event(static_cast<std::uint32_t>(g.next_below(50)),
                           g.next_exponential(60.0), g.next_normal() * 3,
                           g.next_double() < 0.5);

      auto code_only = p;
      code_only.ablation = {false, false};
      VecX<double> base = emb::embed_event(ev, code_only);
      CHECK(base == emb::embed_code_term(ev, p));

      // no-time output is bit-invariant to the time delta
      auto no_time = p;
      no_time.ablation = {false, true};
      auto ev2 = ev;
      ev2.time_delta = ev.time_delta + 500.0;
      CHECK(emb::embed_event(ev, no_time) == emb::embed_event(ev2, no_time));

      // no-value output is bit-invariant to the value
      auto no_value = p;
      no_value.ablation = {true, false};
      auto ev3 = ev;
      ev3.value = ev.value + 10.0;
      ev3.has_value = ev.has_value;
      CHECK(emb::embed_event(ev, no_value) == emb::embed_event(ev3, no_value));

      // additive decomposition in the fixed summation order
      auto full = p;
      full.ablation = {true, true};
      VecX<double> sum = emb::embed_code_term(ev, p);
      sum += emb::embed_time_term(ev, p);
      sum += emb::embed_value_term(ev, p);
      CHECK(emb::embed_event(ev, full) == sum);

      // difference form only holds to rounding
      VecX<double> diff = emb::embed_event(ev, full) - emb::embed_event(ev, no_time);
      CHECK((diff - emb::embed_time_term(ev, p)).template lpNorm<Eigen::Infinity>() <
            1e-12);
    }
  }
}

TEST_CASE("missing values embed exactly like a zero measurement") {
  const int d = 16;
  rng::CounterRng g(31);
  MatX<double> table =
      MatX<double>::NullaryExpr(10, d, [&](auto, auto) { return g.next_normal(); });
  auto p = make_embed_params(&table, d, emb::TimeEncoderKind::cve, 77);
  p.value_stats.mean.setConstant(0.0);

  auto missing = make_event(3, 5.0, 0.0, false);
  auto zero = make_event(3, 5.0, 0.0, true);
  CHECK(emb::embed_event(missing, p) == emb::embed_event(zero, p));
}

TEST_CASE("triplet embedding equals a naive scalar re-implementation") {
  const int d = 24;
  rng::CounterRng g(41);
  MatX<double> table =
      MatX<double>::NullaryExpr(20, d, [&](auto, auto) { return g.next_normal(); });
  auto p = make_embed_params(&table, d, emb::TimeEncoderKind::cve, 4242);

  for (int iter = 0; iter < 100; ++iter) {
    auto ev = make_event(static_cast<std::uint32_t>(g.next_below(20)),
                         g.next_exponential(45.0), g.next_normal(),
                         g.next_double() < 0.5);
    VecX<double> got = emb::embed_event(ev, p);

    // independent re-implementation with plain loops
    std::vector<double> want(d);
    for (int j = 0; j < d; ++j) want[j] = table(ev.code_id, j);
    auto add_cve = [&](const emb::CveParams<double>& c, double x) {
      int h = static_cast<int>(c.w1.size());
      for (int j = 0; j < d; ++j) {
        double acc = 0;
        for (int k = 0; k < h; ++k)
          acc += std::tanh(c.w1[k] * x * c.input_scale + c.b1[k]) * c.w2(k, j);
        want[j] += acc;
      }
    };
    add_cve(p.time_enc.cve, std::log1p(ev.time_delta));
    add_cve(p.cve_value, ev.has_value ? ev.value : 0.0);

    for (int j = 0; j < d; ++j) CHECK(rel_err(got[j], want[j]) < 1e-12);
  }
}

TEST_CASE("embed_event rejects out-of-range codes") {
  const int d = 8;
  MatX<double> table = MatX<double>::Zero(4, d);
  auto p = make_embed_params(&table, d, emb::TimeEncoderKind::cve, 1);
  CHECK_THROWS_AS(emb::embed_event(make_event(4, 0, 0, false), p), std::out_of_range);
}
