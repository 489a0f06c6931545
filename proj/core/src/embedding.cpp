#include "tokenlab/embedding.hpp"

#include <cmath>
#include <stdexcept>

#include "tokenlab/rng.hpp"

namespace tokenlab::emb {

namespace {

template <typename T>
VecX<T> normal_vec(rng::CounterRng& g, int n, double scale) {
  VecX<T> v(n);
  for (int i = 0; i < n; ++i) v[i] = static_cast<T>(g.next_normal() * scale);
  return v;
}

template <typename T>
MatX<T> normal_mat(rng::CounterRng& g, int rows, int cols, double scale) {
  MatX<T> m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = static_cast<T>(g.next_normal() * scale);
  return m;
}

}  // namespace

template <typename T>
CveParams<T> init_cve(int token_dim, std::uint64_t key) {
  rng::CounterRng g(key);
  const int h = cve_hidden_size(token_dim);
  CveParams<T> p;
  p.input_scale = 1;
  p.w1 = normal_vec<T>(g, h, 1.0);
  p.b1 = VecX<T>::Zero(h);
  p.w2 = normal_mat<T>(g, h, token_dim, 1.0 / std::sqrt(static_cast<double>(h) *
                                                        static_cast<double>(token_dim)));
  return p;
}

template <typename T>
VecX<T> cve_forward(T x, const CveParams<T>& p) {
  if (!std::isfinite(static_cast<double>(x)))
    throw std::invalid_argument("cve_forward: non-finite input");
  VecX<T> u = ((p.w1.array() * (x * p.input_scale)) + p.b1.array()).tanh();
  return p.w2.transpose() * u.matrix();
}

template <typename T>
T cve_backward(T x, const CveParams<T>& p, const VecX<T>& dout, CveParams<T>& grad) {
  const T xs = x * p.input_scale;
  VecX<T> u = ((p.w1.array() * xs) + p.b1.array()).tanh();
  VecX<T> du = p.w2 * dout;
  VecX<T> dz = du.array() * (T(1) - u.array().square());
  grad.w1 += dz * xs;
  grad.b1 += dz;
  grad.w2 += u * dout.transpose();
  return dz.dot(p.w1) * p.input_scale;
}

template <typename T>
Time2VecParams<T> init_time2vec(int k, int token_dim, std::uint64_t key) {
  if (k < 1) throw std::invalid_argument("time2vec: k must be >= 1");
  rng::CounterRng g(key);
  Time2VecParams<T> p;
  p.linear_w = 1;
  p.linear_b = 0;
  p.periodic_w = normal_vec<T>(g, k, 1.0);
  p.periodic_b = normal_vec<T>(g, k, 1.0);
  p.proj = normal_mat<T>(
      g, k + 1, token_dim,
      1.0 / std::sqrt(static_cast<double>(k + 1) * static_cast<double>(token_dim)));
  return p;
}

template <typename T>
VecX<T> time2vec_features(T t, const Time2VecParams<T>& p) {
  const int k = p.k();
  VecX<T> f(k + 1);
  f[0] = p.linear_w * t + p.linear_b;
  for (int i = 0; i < k; ++i)
    f[i + 1] = std::sin(p.periodic_w[i] * t + p.periodic_b[i]);
  return f;
}

template <typename T>
VecX<T> time2vec_forward(T t, const Time2VecParams<T>& p) {
  return p.proj.transpose() * time2vec_features(t, p);
}

template <typename T>
T time2vec_backward(T t, const Time2VecParams<T>& p, const VecX<T>& dout,
                    Time2VecParams<T>& grad) {
  const int k = p.k();
  VecX<T> f = time2vec_features(t, p);
  VecX<T> df = p.proj * dout;
  grad.proj += f * dout.transpose();
  grad.linear_w += df[0] * t;
  grad.linear_b += df[0];
  T dt = df[0] * p.linear_w;
  for (int i = 0; i < k; ++i) {
    T c = std::cos(p.periodic_w[i] * t + p.periodic_b[i]);
    grad.periodic_w[i] += df[i + 1] * c * t;
    grad.periodic_b[i] += df[i + 1] * c;
    dt += df[i + 1] * c * p.periodic_w[i];
  }
  return dt;
}

double lete_preset_fraction(std::string_view preset) {
  if (preset == "spline-heavy") return 0.25;
  if (preset == "balanced") return 0.5;
  if (preset == "fourier-heavy") return 0.75;
  throw std::invalid_argument("unknown LeTE preset: " + std::string(preset));
}

template <typename T>
LeTEParams<T> init_lete(double fourier_frac, int token_dim, std::uint64_t key) {
  if (!(fourier_frac > 0 && fourier_frac < 1))
    throw std::invalid_argument("lete: fourier_frac must lie in (0,1)");
  rng::CounterRng g(key);
  const int n_f = static_cast<int>(std::floor(fourier_frac * token_dim));
  const int n_s = token_dim - n_f;
  const int h = kLeteSplineHidden;
  LeTEParams<T> p;
  p.freqs = normal_vec<T>(g, n_f, 1.0);
  p.phases = normal_vec<T>(g, n_f, 1.0);
  p.sw1 = normal_vec<T>(g, h, 1.0);
  p.sb1 = VecX<T>::Zero(h);
  p.sw2 = normal_mat<T>(g, h, n_s,
                        1.0 / std::sqrt(static_cast<double>(h) * static_cast<double>(n_s)));
  p.sb2 = VecX<T>::Zero(n_s);
  return p;
}

template <typename T>
VecX<T> lete_forward(T raw_t, const LeTEParams<T>& p) {
  const T tau = std::log1p(raw_t);
  const int n_f = p.fourier_dims();
  VecX<T> out(p.dim());
  for (int j = 0; j < n_f; ++j) {
    T arg = p.freqs[j] * tau + p.phases[j];
    out[j] = (j % 2 == 0) ? std::cos(arg) : std::sin(arg);
  }
  VecX<T> hidden = ((p.sw1.array() * tau) + p.sb1.array()).tanh();
  out.tail(p.dim() - n_f) = p.sw2.transpose() * hidden.matrix() + p.sb2;
  return out;
}

template <typename T>
T lete_backward(T raw_t, const LeTEParams<T>& p, const VecX<T>& dout,
                LeTEParams<T>& grad) {
  const T tau = std::log1p(raw_t);
  const int n_f = p.fourier_dims();
  const int n_s = p.dim() - n_f;
  T dtau = 0;
  for (int j = 0; j < n_f; ++j) {
    T arg = p.freqs[j] * tau + p.phases[j];
    T deriv = (j % 2 == 0) ? -std::sin(arg) : std::cos(arg);
    T darg = dout[j] * deriv;
    grad.freqs[j] += darg * tau;
    grad.phases[j] += darg;
    dtau += darg * p.freqs[j];
  }
  VecX<T> hidden = ((p.sw1.array() * tau) + p.sb1.array()).tanh();
  VecX<T> dspline = dout.tail(n_s);
  grad.sw2 += hidden * dspline.transpose();
  grad.sb2 += dspline;
  VecX<T> dh = p.sw2 * dspline;
  VecX<T> dz = dh.array() * (T(1) - hidden.array().square());
  grad.sw1 += dz * tau;
  grad.sb1 += dz;
  dtau += dz.dot(p.sw1);
  return dtau / (T(1) + raw_t);
}

template <typename T>
void cve_forward_batch(const VecX<T>& x, const CveParams<T>& p, MatX<T>& add_into) {
  MatX<T> u;
  u.noalias() = (x * p.input_scale) * p.w1.transpose();
  u.rowwise() += p.b1.transpose();
  u = u.array().tanh();
  add_into.noalias() += u * p.w2;
}

template <typename T>
void cve_backward_batch(const VecX<T>& x, const CveParams<T>& p, const MatX<T>& dout,
                        CveParams<T>& grad) {
  VecX<T> xs = x * p.input_scale;
  MatX<T> u;
  u.noalias() = xs * p.w1.transpose();
  u.rowwise() += p.b1.transpose();
  u = u.array().tanh();
  MatX<T> dz;
  dz.noalias() = dout * p.w2.transpose();
  dz.array() *= T(1) - u.array().square();
  grad.w2.noalias() += u.transpose() * dout;
  grad.w1.noalias() += dz.transpose() * xs;
  grad.b1 += dz.colwise().sum().transpose();
}

namespace {

template <typename T>
MatX<T> time2vec_features_batch(const VecX<T>& t, const Time2VecParams<T>& p) {
  const int n = static_cast<int>(t.size());
  MatX<T> f(n, p.k() + 1);
  f.col(0) = p.linear_w * t.array() + p.linear_b;
  f.rightCols(p.k()).noalias() = t * p.periodic_w.transpose();
  f.rightCols(p.k()).rowwise() += p.periodic_b.transpose();
  f.rightCols(p.k()) = f.rightCols(p.k()).array().sin();
  return f;
}

}  // namespace

template <typename T>
void time_encode_batch(const VecX<T>& raw, const TimeEncoderParams<T>& p,
                       MatX<T>& add_into) {
  switch (p.kind) {
    case TimeEncoderKind::cve: {
      VecX<T> tau = raw.array().log1p();
      cve_forward_batch(tau, p.cve, add_into);
      return;
    }
    case TimeEncoderKind::time2vec: {
      VecX<T> tau = raw.array().log1p();
      add_into.noalias() += time2vec_features_batch(tau, p.t2v) * p.t2v.proj;
      return;
    }
    case TimeEncoderKind::lete: {
      const auto& lp = p.lete;
      VecX<T> tau = raw.array().log1p();
      const int n = static_cast<int>(raw.size());
      const int n_f = lp.fourier_dims();
      MatX<T> args;
      args.noalias() = tau * lp.freqs.transpose();
      args.rowwise() += lp.phases.transpose();
      for (int j = 0; j < n_f; ++j) {
        if (j % 2 == 0)
          add_into.col(j) += args.col(j).array().cos().matrix();
        else
          add_into.col(j) += args.col(j).array().sin().matrix();
      }
      MatX<T> hidden;
      hidden.noalias() = tau * lp.sw1.transpose();
      hidden.rowwise() += lp.sb1.transpose();
      hidden = hidden.array().tanh();
      add_into.rightCols(lp.dim() - n_f).noalias() += hidden * lp.sw2;
      add_into.rightCols(lp.dim() - n_f).rowwise() += lp.sb2.transpose();
      (void)n;
      return;
    }
  }
  throw std::logic_error("bad time encoder kind");
}

template <typename T>
void time_encode_backward_batch(const VecX<T>& raw, const TimeEncoderParams<T>& p,
                                const MatX<T>& dout, TimeEncoderParams<T>& grad) {
  switch (p.kind) {
    case TimeEncoderKind::cve: {
      VecX<T> tau = raw.array().log1p();
      cve_backward_batch(tau, p.cve, dout, grad.cve);
      return;
    }
    case TimeEncoderKind::time2vec: {
      VecX<T> tau = raw.array().log1p();
      const auto& tp = p.t2v;
      MatX<T> f = time2vec_features_batch(tau, tp);
      MatX<T> df;
      df.noalias() = dout * tp.proj.transpose();
      grad.t2v.proj.noalias() += f.transpose() * dout;
      grad.t2v.linear_w += df.col(0).dot(tau);
      grad.t2v.linear_b += df.col(0).sum();
      MatX<T> c;
      c.noalias() = tau * tp.periodic_w.transpose();
      c.rowwise() += tp.periodic_b.transpose();
      c = c.array().cos();
      MatX<T> darg = df.rightCols(tp.k()).array() * c.array();
      grad.t2v.periodic_w.noalias() += darg.transpose() * tau;
      grad.t2v.periodic_b += darg.colwise().sum().transpose();
      return;
    }
    case TimeEncoderKind::lete: {
      const auto& lp = p.lete;
      auto& gl = grad.lete;
      VecX<T> tau = raw.array().log1p();
      const int n_f = lp.fourier_dims();
      const int n_s = lp.dim() - n_f;
      MatX<T> args;
      args.noalias() = tau * lp.freqs.transpose();
      args.rowwise() += lp.phases.transpose();
      MatX<T> dargs(args.rows(), n_f);
      for (int j = 0; j < n_f; ++j) {
        if (j % 2 == 0)
          dargs.col(j) = -dout.col(j).array() * args.col(j).array().sin();
        else
          dargs.col(j) = dout.col(j).array() * args.col(j).array().cos();
      }
      gl.freqs.noalias() += dargs.transpose() * tau;
      gl.phases += dargs.colwise().sum().transpose();
      MatX<T> hidden;
      hidden.noalias() = tau * lp.sw1.transpose();
      hidden.rowwise() += lp.sb1.transpose();
      hidden = hidden.array().tanh();
      auto dspline = dout.rightCols(n_s);
      gl.sw2.noalias() += hidden.transpose() * dspline;
      gl.sb2 += dspline.colwise().sum().transpose();
      MatX<T> dz;
      dz.noalias() = dspline * lp.sw2.transpose();
      dz.array() *= T(1) - hidden.array().square();
      gl.sw1.noalias() += dz.transpose() * tau;
      gl.sb1 += dz.colwise().sum().transpose();
      return;
    }
  }
  throw std::logic_error("bad time encoder kind");
}

void TokenizerSpec::validate() const {
  if (pathway == Pathway::triplet) {
    if (code_source != CodeSourceKind::trainable_table)
      throw std::invalid_argument("triplet requires the trainable embedding table");
    if (!encoder.empty() || !mapping_mode.empty())
      throw std::invalid_argument("triplet takes no encoder or mapping");
  } else {
    if (code_source == CodeSourceKind::trainable_table)
      throw std::invalid_argument(
          "textcode requires a frozen cache or a trainable pseudo-encoder");
    if (encoder.empty()) throw std::invalid_argument("textcode requires an encoder name");
    if (mapping_mode != "original" && mapping_mode != "enhanced")
      throw std::invalid_argument("textcode mapping must be original or enhanced");
  }
  if (time_encoder.kind == TimeEncoderKind::time2vec && time_encoder.t2v_k < 1)
    throw std::invalid_argument("time2vec k must be >= 1");
  if (time_encoder.kind == TimeEncoderKind::lete)
    lete_preset_fraction(time_encoder.lete_preset);  // throws on bad preset
}

std::vector<std::pair<std::string, std::string>> TokenizerSpec::serialize_fields()
    const {
  std::string te;
  switch (time_encoder.kind) {
    case TimeEncoderKind::cve:
      te = "cve";
      break;
    case TimeEncoderKind::time2vec:
      te = "t2v(k=" + std::to_string(time_encoder.t2v_k) + ")";
      break;
    case TimeEncoderKind::lete:
      te = "lete(" + time_encoder.lete_preset + ")";
      break;
  }
  std::string cs;
  switch (code_source) {
    case CodeSourceKind::trainable_table:
      cs = "table";
      break;
    case CodeSourceKind::frozen_cache:
      cs = "frozen(" + encoder + ")";
      break;
    case CodeSourceKind::trainable_encoder:
      cs = "trainable(" + encoder + ")";
      break;
  }
  return {
      {"pathway", pathway == Pathway::triplet ? "triplet" : "textcode"},
      {"use_time", ablation.use_time ? "true" : "false"},
      {"use_value", ablation.use_value ? "true" : "false"},
      {"time_encoder", te},
      {"code_source", cs},
      {"mapping", mapping_mode.empty() ? "-" : mapping_mode},
  };
}

TokenizerSpec TokenizerSpec::triplet_default() {
  TokenizerSpec s;
  s.pathway = Pathway::triplet;
  s.code_source = CodeSourceKind::trainable_table;
  return s;
}

TokenizerSpec TokenizerSpec::textcode_default(std::string encoder_name,
                                              CodeSourceKind kind, std::string mapping) {
  TokenizerSpec s;
  s.pathway = Pathway::textcode;
  s.code_source = kind;
  s.encoder = std::move(encoder_name);
  s.mapping_mode = std::move(mapping);
  return s;
}

std::vector<std::string> spec_field_diff(const TokenizerSpec& a, const TokenizerSpec& b) {
  auto fa = a.serialize_fields();
  auto fb = b.serialize_fields();
  std::vector<std::string> diff;
  for (std::size_t i = 0; i < fa.size(); ++i)
    if (fa[i].second != fb[i].second) diff.push_back(fa[i].first);
  return diff;
}

template <typename T>
std::int64_t TimeEncoderParams<T>::param_count() const {
  switch (kind) {
    case TimeEncoderKind::cve:
      return cve.param_count();
    case TimeEncoderKind::time2vec:
      return t2v.param_count();
    case TimeEncoderKind::lete:
      return lete.param_count();
  }
  return 0;
}

template <typename T>
VecX<T> time_encode(T raw_delta, const TimeEncoderParams<T>& p) {
  switch (p.kind) {
    case TimeEncoderKind::cve:
      return cve_forward(static_cast<T>(std::log1p(raw_delta)), p.cve);
    case TimeEncoderKind::time2vec:
      return time2vec_forward(static_cast<T>(std::log1p(raw_delta)), p.t2v);
    case TimeEncoderKind::lete:
      return lete_forward(raw_delta, p.lete);
  }
  throw std::logic_error("bad time encoder kind");
}

template <typename T>
T time_encode_backward(T raw_delta, const TimeEncoderParams<T>& p, const VecX<T>& dout,
                       TimeEncoderParams<T>& grad) {
  switch (p.kind) {
    case TimeEncoderKind::cve: {
      T tau = static_cast<T>(std::log1p(raw_delta));
      T dtau = cve_backward(tau, p.cve, dout, grad.cve);
      return dtau / (T(1) + raw_delta);
    }
    case TimeEncoderKind::time2vec: {
      T tau = static_cast<T>(std::log1p(raw_delta));
      T dtau = time2vec_backward(tau, p.t2v, dout, grad.t2v);
      return dtau / (T(1) + raw_delta);
    }
    case TimeEncoderKind::lete:
      return lete_backward(raw_delta, p.lete, dout, grad.lete);
  }
  throw std::logic_error("bad time encoder kind");
}

template <typename T>
VecX<T> embed_code_term(const Event& ev, const EventEmbedParams<T>& p) {
  if (!p.code_vectors || ev.code_id >= static_cast<std::uint32_t>(p.code_vectors->rows()))
    throw std::out_of_range("embed: code_id outside the vocabulary");
  return p.code_vectors->row(ev.code_id).transpose();
}

template <typename T>
VecX<T> embed_time_term(const Event& ev, const EventEmbedParams<T>& p) {
  return time_encode(static_cast<T>(ev.time_delta), p.time_enc);
}

template <typename T>
VecX<T> embed_value_term(const Event& ev, const EventEmbedParams<T>& p) {
  T x = 0;
  if (ev.has_value) {
    x = (static_cast<T>(ev.value) - p.value_stats.mean[ev.code_id]) *
        p.value_stats.inv_std[ev.code_id];
  }
  return cve_forward(x, p.cve_value);
}

template <typename T>
VecX<T> embed_event(const Event& ev, const EventEmbedParams<T>& p) {
  VecX<T> out = embed_code_term(ev, p);
  if (p.ablation.use_time) out += embed_time_term(ev, p);
  if (p.ablation.use_value) out += embed_value_term(ev, p);
  return out;
}

// explicit instantiations
#define TOKENLAB_INSTANTIATE_EMB(T)                                                   \
  template CveParams<T> init_cve<T>(int, std::uint64_t);                              \
  template VecX<T> cve_forward<T>(T, const CveParams<T>&);                            \
  template T cve_backward<T>(T, const CveParams<T>&, const VecX<T>&, CveParams<T>&);  \
  template Time2VecParams<T> init_time2vec<T>(int, int, std::uint64_t);               \
  template VecX<T> time2vec_features<T>(T, const Time2VecParams<T>&);                 \
  template VecX<T> time2vec_forward<T>(T, const Time2VecParams<T>&);                  \
  template T time2vec_backward<T>(T, const Time2VecParams<T>&, const VecX<T>&,        \
                                  Time2VecParams<T>&);                                \
  template LeTEParams<T> init_lete<T>(double, int, std::uint64_t);                    \
  template VecX<T> lete_forward<T>(T, const LeTEParams<T>&);                          \
  template T lete_backward<T>(T, const LeTEParams<T>&, const VecX<T>&, LeTEParams<T>&); \
  template struct TimeEncoderParams<T>;                                               \
  template VecX<T> time_encode<T>(T, const TimeEncoderParams<T>&);                    \
  template T time_encode_backward<T>(T, const TimeEncoderParams<T>&, const VecX<T>&,  \
                                     TimeEncoderParams<T>&);                          \
  template void cve_forward_batch<T>(const VecX<T>&, const CveParams<T>&, MatX<T>&);  \
  template void cve_backward_batch<T>(const VecX<T>&, const CveParams<T>&,            \
                                      const MatX<T>&, CveParams<T>&);                 \
  template void time_encode_batch<T>(const VecX<T>&, const TimeEncoderParams<T>&,     \
                                     MatX<T>&);                                       \
  template void time_encode_backward_batch<T>(const VecX<T>&,                         \
                                              const TimeEncoderParams<T>&,            \
                                              const MatX<T>&, TimeEncoderParams<T>&); \
  template VecX<T> embed_code_term<T>(const Event&, const EventEmbedParams<T>&);      \
  template VecX<T> embed_time_term<T>(const Event&, const EventEmbedParams<T>&);      \
  template VecX<T> embed_value_term<T>(const Event&, const EventEmbedParams<T>&);     \
  template VecX<T> embed_event<T>(const Event&, const EventEmbedParams<T>&);

TOKENLAB_INSTANTIATE_EMB(float)
TOKENLAB_INSTANTIATE_EMB(double)

#undef TOKENLAB_INSTANTIATE_EMB

}  // namespace tokenlab::emb
