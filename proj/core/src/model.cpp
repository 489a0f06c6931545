#include "tokenlab/model.hpp"

#include <cmath>
#include <memory>
#include <stdexcept>

#include "tokenlab/rng.hpp"

namespace tokenlab::model {

namespace {

constexpr double kLnEps = 1e-5;

// SiLU feed-forward activation: smooth everywhere, vectorizes well.
template <typename T>
MatX<T> silu(const MatX<T>& u) {
  return (u.array() / (T(1) + (-u.array()).exp())).matrix();
}

template <typename T>
MatX<T> silu_grad(const MatX<T>& u) {
  auto sig = T(1) / (T(1) + (-u.array()).exp());
  return (sig * (T(1) + u.array() * (T(1) - sig))).matrix();
}

template <typename T>
MatX<T> normal_mat(rng::CounterRng& g, int rows, int cols, double scale) {
  MatX<T> m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = static_cast<T>(g.next_normal() * scale);
  return m;
}

// row-wise layer norm; saves normalized rows and inverse std for backward
template <typename T>
void layer_norm(const MatX<T>& x, const VecX<T>& g, const VecX<T>& b, MatX<T>& xhat,
                VecX<T>& rstd, MatX<T>& out) {
  const T d = static_cast<T>(x.cols());
  VecX<T> mu = x.rowwise().mean();
  xhat = x.colwise() - mu;
  rstd = ((xhat.rowwise().squaredNorm() / d).array() + T(kLnEps)).rsqrt();
  xhat.array().colwise() *= rstd.array();
  out = (xhat.array().rowwise() * g.transpose().array()).matrix();
  out.rowwise() += b.transpose();
}

template <typename T>
void layer_norm_backward(const MatX<T>& xhat, const VecX<T>& rstd, const VecX<T>& g,
                         const MatX<T>& dout, VecX<T>& dg, VecX<T>& db, MatX<T>& dx) {
  dg += (dout.array() * xhat.array()).colwise().sum().matrix().transpose();
  db += dout.colwise().sum().transpose();
  MatX<T> dxhat = (dout.array().rowwise() * g.transpose().array()).matrix();
  VecX<T> m1 = dxhat.rowwise().mean();
  VecX<T> m2 = (dxhat.array() * xhat.array()).rowwise().mean();
  dx = dxhat;
  dx.colwise() -= m1;
  dx -= (xhat.array().colwise() * m2.array()).matrix();
  dx.array().colwise() *= rstd.array();
}

}  // namespace

void ModelConfig::validate() const {
  if (token_dim < 1 || n_layers < 0 || n_heads < 1 || ffn_dim < 1 || max_seq_len < 1)
    throw std::invalid_argument("model config: sizes must be positive");
  if (token_dim % n_heads != 0)
    throw std::invalid_argument("model config: token_dim must be divisible by n_heads");
  if (!(dropout_rate >= 0 && dropout_rate < 1))
    throw std::invalid_argument("model config: dropout_rate must lie in [0,1)");
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw std::invalid_argument("train config: batch_size must be >= 1");
  if (max_epochs < 1) throw std::invalid_argument("train config: max_epochs must be >= 1");
  if (!(learning_rate > 0)) throw std::invalid_argument("train config: learning_rate must be > 0");
  if (!(momentum >= 0 && momentum < 1))
    throw std::invalid_argument("train config: momentum must lie in [0,1)");
}

template <typename T>
TransformerParams<T> TransformerParams<T>::init(const ModelConfig& cfg,
                                                std::uint64_t key) {
  cfg.validate();
  rng::CounterRng g(key);
  const int d = cfg.token_dim;
  const int f = cfg.ffn_dim;
  const double proj_scale = 1.0 / std::sqrt(static_cast<double>(d));
  TransformerParams<T> p;
  p.cfg = cfg;
  p.pos = normal_mat<T>(g, cfg.max_seq_len, d, 0.02);
  p.layers.resize(cfg.n_layers);
  for (auto& l : p.layers) {
    l.ln1_g = VecX<T>::Ones(d);
    l.ln1_b = VecX<T>::Zero(d);
    l.ln2_g = VecX<T>::Ones(d);
    l.ln2_b = VecX<T>::Zero(d);
    l.wq = normal_mat<T>(g, d, d, proj_scale);
    l.wk = normal_mat<T>(g, d, d, proj_scale);
    l.wv = normal_mat<T>(g, d, d, proj_scale);
    l.wo = normal_mat<T>(g, d, d, proj_scale);
    l.bq = VecX<T>::Zero(d);
    l.bk = VecX<T>::Zero(d);
    l.bv = VecX<T>::Zero(d);
    l.bo = VecX<T>::Zero(d);
    l.w1 = normal_mat<T>(g, d, f, proj_scale);
    l.b1 = VecX<T>::Zero(f);
    l.w2 = normal_mat<T>(g, f, d, 1.0 / std::sqrt(static_cast<double>(f)));
    l.b2 = VecX<T>::Zero(d);
  }
  p.lnf_g = VecX<T>::Ones(d);
  p.lnf_b = VecX<T>::Zero(d);
  p.head_w = VecX<T>::Zero(d);  // zero head: logit 0 at initialization
  p.head_b = 0;
  return p;
}

template <typename T>
TransformerParams<T> TransformerParams<T>::zeros_like(const TransformerParams<T>& o) {
  TransformerParams<T> z;
  z.cfg = o.cfg;
  z.pos = MatX<T>::Zero(o.pos.rows(), o.pos.cols());
  z.layers.resize(o.layers.size());
  for (std::size_t i = 0; i < o.layers.size(); ++i) {
    const auto& l = o.layers[i];
    auto& zl = z.layers[i];
    zl.ln1_g = VecX<T>::Zero(l.ln1_g.size());
    zl.ln1_b = VecX<T>::Zero(l.ln1_b.size());
    zl.ln2_g = VecX<T>::Zero(l.ln2_g.size());
    zl.ln2_b = VecX<T>::Zero(l.ln2_b.size());
    zl.wq = MatX<T>::Zero(l.wq.rows(), l.wq.cols());
    zl.wk = MatX<T>::Zero(l.wk.rows(), l.wk.cols());
    zl.wv = MatX<T>::Zero(l.wv.rows(), l.wv.cols());
    zl.wo = MatX<T>::Zero(l.wo.rows(), l.wo.cols());
    zl.bq = VecX<T>::Zero(l.bq.size());
    zl.bk = VecX<T>::Zero(l.bk.size());
    zl.bv = VecX<T>::Zero(l.bv.size());
    zl.bo = VecX<T>::Zero(l.bo.size());
    zl.w1 = MatX<T>::Zero(l.w1.rows(), l.w1.cols());
    zl.b1 = VecX<T>::Zero(l.b1.size());
    zl.w2 = MatX<T>::Zero(l.w2.rows(), l.w2.cols());
    zl.b2 = VecX<T>::Zero(l.b2.size());
  }
  z.lnf_g = VecX<T>::Zero(o.lnf_g.size());
  z.lnf_b = VecX<T>::Zero(o.lnf_b.size());
  z.head_w = VecX<T>::Zero(o.head_w.size());
  z.head_b = 0;
  return z;
}

template <typename T>
std::int64_t TransformerParams<T>::param_count() const {
  std::int64_t n = pos.size() + lnf_g.size() + lnf_b.size() + head_w.size() + 1;
  for (const auto& l : layers)
    n += l.ln1_g.size() + l.ln1_b.size() + l.ln2_g.size() + l.ln2_b.size() +
         l.wq.size() + l.wk.size() + l.wv.size() + l.wo.size() + l.bq.size() +
         l.bk.size() + l.bv.size() + l.bo.size() + l.w1.size() + l.b1.size() +
         l.w2.size() + l.b2.size();
  return n;
}

template <typename T>
struct LayerStash {
  MatX<T> x;             // block input
  MatX<T> y, y_hat;      // post-LN1 and its normalized rows
  VecX<T> rstd1;
  MatX<T> q, k, v;       // projections
  std::vector<MatX<T>> attn;  // per (seq * head) softmax rows
  MatX<T> ctx;           // concatenated heads
  MatX<T> drop1;         // dropout mask on the attention branch (empty if off)
  MatX<T> x1;            // after the attention residual
  MatX<T> z, z_hat;      // post-LN2
  VecX<T> rstd2;
  MatX<T> u, h;          // FFN pre-activation and gelu output
  MatX<T> drop2;         // dropout mask on the FFN branch
};

template <typename T>
struct ForwardStash {
  BatchShape shape;
  MatX<T> tokens_with_pos;
  std::vector<LayerStash<T>> layers;
  MatX<T> xf, xf_hat;  // final LN
  VecX<T> rstdf;
  MatX<T> pooled;      // n_seq x d
  VecX<T> logits;
};

template <typename T>
ForwardResult<T> transformer_forward(const TransformerParams<T>& p,
                                     const MatX<T>& tokens, const BatchShape& shape,
                                     bool stash_for_backward,
                                     const DropoutSpec& dropout) {
  const int n = shape.rows();
  const int n_seq = shape.n_seqs();
  const int d = p.cfg.token_dim;
  const int heads = p.cfg.n_heads;
  const int dh = p.cfg.head_dim();
  const T alpha = T(1) / std::sqrt(static_cast<T>(dh));
  if (tokens.rows() != n || tokens.cols() != d)
    throw std::invalid_argument("transformer_forward: token matrix shape mismatch");
  if (n == 0) throw std::invalid_argument("empty sequence");
  for (int s = 0; s < n_seq; ++s) {
    if (shape.len(s) <= 0) throw std::invalid_argument("empty sequence");
    if (shape.len(s) > p.cfg.max_seq_len)
      throw std::invalid_argument("sequence longer than max_seq_len");
  }

  auto stash = std::make_shared<ForwardStash<T>>();
  stash->shape = shape;

  MatX<T> x = tokens;
  for (int s = 0; s < n_seq; ++s)
    for (int i = 0; i < shape.len(s); ++i)
      x.row(shape.offsets[s] + i) += p.pos.row(i);
  stash->tokens_with_pos = x;

  const bool use_dropout = dropout.rate > 0;
  if (stash_for_backward) stash->layers.resize(p.layers.size());

  for (std::size_t li = 0; li < p.layers.size(); ++li) {
    const auto& l = p.layers[li];
    LayerStash<T> ls;
    ls.x = x;

    layer_norm(x, l.ln1_g, l.ln1_b, ls.y_hat, ls.rstd1, ls.y);
    ls.q.noalias() = ls.y * l.wq;
    ls.q.rowwise() += l.bq.transpose();
    ls.k.noalias() = ls.y * l.wk;
    ls.k.rowwise() += l.bk.transpose();
    ls.v.noalias() = ls.y * l.wv;
    ls.v.rowwise() += l.bv.transpose();

    ls.ctx.resize(n, d);
    ls.attn.resize(static_cast<std::size_t>(n_seq) * heads);
    for (int s = 0; s < n_seq; ++s) {
      const int o = shape.offsets[s];
      const int len = shape.len(s);
      for (int hd = 0; hd < heads; ++hd) {
        auto qh = ls.q.block(o, hd * dh, len, dh);
        auto kh = ls.k.block(o, hd * dh, len, dh);
        auto vh = ls.v.block(o, hd * dh, len, dh);
        MatX<T> scores(len, len);
        scores.noalias() = qh * kh.transpose();
        scores *= alpha;
        for (int r = 0; r < len; ++r) {
          T mx = scores.row(r).maxCoeff();
          scores.row(r) = (scores.row(r).array() - mx).exp();
          scores.row(r) /= scores.row(r).sum();
        }
        ls.ctx.block(o, hd * dh, len, dh).noalias() = scores * vh;
        if (stash_for_backward)
          ls.attn[static_cast<std::size_t>(s) * heads + hd] = std::move(scores);
      }
    }

    MatX<T> attn_out;
    attn_out.noalias() = ls.ctx * l.wo;
    attn_out.rowwise() += l.bo.transpose();
    if (use_dropout) {
      rng::CounterRng g({dropout.key, static_cast<std::uint64_t>(li), 0});
      ls.drop1.resize(n, d);
      const T keep = T(1) - static_cast<T>(dropout.rate);
      for (int r = 0; r < n; ++r)
        for (int c = 0; c < d; ++c)
          ls.drop1(r, c) = g.next_double() < dropout.rate ? T(0) : T(1) / keep;
      attn_out.array() *= ls.drop1.array();
    }
    MatX<T> x1 = x + attn_out;
    ls.x1 = x1;

    layer_norm(x1, l.ln2_g, l.ln2_b, ls.z_hat, ls.rstd2, ls.z);
    ls.u.noalias() = ls.z * l.w1;
    ls.u.rowwise() += l.b1.transpose();
    ls.h = silu(ls.u);
    MatX<T> ffn_out;
    ffn_out.noalias() = ls.h * l.w2;
    ffn_out.rowwise() += l.b2.transpose();
    if (use_dropout) {
      rng::CounterRng g({dropout.key, static_cast<std::uint64_t>(li), 1});
      ls.drop2.resize(n, d);
      const T keep = T(1) - static_cast<T>(dropout.rate);
      for (int r = 0; r < n; ++r)
        for (int c = 0; c < d; ++c)
          ls.drop2(r, c) = g.next_double() < dropout.rate ? T(0) : T(1) / keep;
      ffn_out.array() *= ls.drop2.array();
    }
    x = x1 + ffn_out;

    if (stash_for_backward)
      stash->layers[li] = std::move(ls);
  }

  layer_norm(x, p.lnf_g, p.lnf_b, stash->xf_hat, stash->rstdf, stash->xf);
  if (!stash_for_backward) stash->xf_hat.resize(0, 0);

  stash->pooled.resize(n_seq, d);
  VecX<T> logits(n_seq);
  for (int s = 0; s < n_seq; ++s) {
    stash->pooled.row(s) =
        stash->xf.middleRows(shape.offsets[s], shape.len(s)).colwise().mean();
    logits[s] = stash->pooled.row(s).dot(p.head_w.transpose()) + p.head_b;
  }
  stash->logits = logits;

  ForwardResult<T> res;
  res.logits = std::move(logits);
  if (stash_for_backward)
    res.stash = std::move(stash);
  else
    res.stash = nullptr;
  return res;
}

template <typename T>
void transformer_backward(const TransformerParams<T>& p, const ForwardStash<T>& stash,
                          const VecX<T>& dlogits, TransformerParams<T>& grads,
                          MatX<T>& dtokens) {
  const BatchShape& shape = stash.shape;
  const int n = shape.rows();
  const int n_seq = shape.n_seqs();
  const int d = p.cfg.token_dim;
  const int heads = p.cfg.n_heads;
  const int dh = p.cfg.head_dim();
  const T alpha = T(1) / std::sqrt(static_cast<T>(dh));

  // head and pooling
  MatX<T> dxf = MatX<T>::Zero(n, d);
  for (int s = 0; s < n_seq; ++s) {
    grads.head_w += dlogits[s] * stash.pooled.row(s).transpose();
    grads.head_b += dlogits[s];
    const T scale = dlogits[s] / static_cast<T>(shape.len(s));
    for (int i = 0; i < shape.len(s); ++i)
      dxf.row(shape.offsets[s] + i) = scale * p.head_w.transpose();
  }

  MatX<T> dx;
  layer_norm_backward(stash.xf_hat, stash.rstdf, p.lnf_g, dxf, grads.lnf_g,
                      grads.lnf_b, dx);

  for (int li = static_cast<int>(p.layers.size()) - 1; li >= 0; --li) {
    const auto& l = p.layers[li];
    const auto& ls = stash.layers[li];
    auto& gl = grads.layers[li];

    // x2 = x1 + drop2 .* (h w2 + b2)
    MatX<T> dffn = dx;
    if (ls.drop2.size()) dffn.array() *= ls.drop2.array();
    MatX<T> dh_;
    dh_.noalias() = dffn * l.w2.transpose();
    gl.w2.noalias() += ls.h.transpose() * dffn;
    gl.b2 += dffn.colwise().sum().transpose();
    MatX<T> du = (dh_.array() * silu_grad(ls.u).array()).matrix();
    gl.w1.noalias() += ls.z.transpose() * du;
    gl.b1 += du.colwise().sum().transpose();
    MatX<T> dz;
    dz.noalias() = du * l.w1.transpose();

    MatX<T> dx1;
    layer_norm_backward(ls.z_hat, ls.rstd2, l.ln2_g, dz, gl.ln2_g, gl.ln2_b, dx1);
    dx1 += dx;  // residual

    // x1 = x + drop1 .* (ctx wo + bo)
    MatX<T> dattn = dx1;
    if (ls.drop1.size()) dattn.array() *= ls.drop1.array();
    MatX<T> dctx;
    dctx.noalias() = dattn * l.wo.transpose();
    gl.wo.noalias() += ls.ctx.transpose() * dattn;
    gl.bo += dattn.colwise().sum().transpose();

    MatX<T> dq = MatX<T>::Zero(n, d), dk = MatX<T>::Zero(n, d),
            dv = MatX<T>::Zero(n, d);
    for (int s = 0; s < n_seq; ++s) {
      const int o = shape.offsets[s];
      const int len = shape.len(s);
      for (int hd = 0; hd < heads; ++hd) {
        const MatX<T>& a = ls.attn[static_cast<std::size_t>(s) * heads + hd];
        auto qh = ls.q.block(o, hd * dh, len, dh);
        auto kh = ls.k.block(o, hd * dh, len, dh);
        auto vh = ls.v.block(o, hd * dh, len, dh);
        auto dctx_h = dctx.block(o, hd * dh, len, dh);

        MatX<T> da(len, len);
        da.noalias() = dctx_h * vh.transpose();
        dv.block(o, hd * dh, len, dh).noalias() += a.transpose() * dctx_h;
        MatX<T> ds(len, len);
        for (int r = 0; r < len; ++r) {
          T dot = a.row(r).dot(da.row(r));
          ds.row(r) = a.row(r).array() * (da.row(r).array() - dot);
        }
        ds *= alpha;
        dq.block(o, hd * dh, len, dh).noalias() += ds * kh;
        dk.block(o, hd * dh, len, dh).noalias() += ds.transpose() * qh;
      }
    }

    MatX<T> dy;
    dy.noalias() = dq * l.wq.transpose();
    dy.noalias() += dk * l.wk.transpose();
    dy.noalias() += dv * l.wv.transpose();
    gl.wq.noalias() += ls.y.transpose() * dq;
    gl.bq += dq.colwise().sum().transpose();
    gl.wk.noalias() += ls.y.transpose() * dk;
    gl.bk += dk.colwise().sum().transpose();
    gl.wv.noalias() += ls.y.transpose() * dv;
    gl.bv += dv.colwise().sum().transpose();

    MatX<T> dx_ln;
    layer_norm_backward(ls.y_hat, ls.rstd1, l.ln1_g, dy, gl.ln1_g, gl.ln1_b, dx_ln);
    dx = dx_ln + dx1;
  }

  // positions
  for (int s = 0; s < n_seq; ++s)
    for (int i = 0; i < shape.len(s); ++i)
      grads.pos.row(i) += dx.row(shape.offsets[s] + i);
  dtokens = std::move(dx);
}

template <typename T>
T forward_single(const TransformerParams<T>& p, const MatX<T>& tokens,
                 const std::vector<bool>& pad_mask) {
  if (static_cast<std::size_t>(tokens.rows()) != pad_mask.size())
    throw std::invalid_argument("forward_single: pad mask length mismatch");
  if (tokens.cols() != p.cfg.token_dim)
    throw std::invalid_argument("forward_single: token dimension mismatch");
  int real = 0;
  for (bool pad : pad_mask)
    if (!pad) ++real;
  if (real == 0) throw std::invalid_argument("empty sequence");

  MatX<T> packed(real, p.cfg.token_dim);
  int r = 0;
  for (std::size_t i = 0; i < pad_mask.size(); ++i)
    if (!pad_mask[i]) packed.row(r++) = tokens.row(static_cast<int>(i));

  BatchShape shape;
  shape.offsets = {0, real};
  auto res = transformer_forward(p, packed, shape, false);
  return res.logits[0];
}

template <typename T>
T bce_with_logits(const VecX<T>& logits, const std::vector<bool>& labels,
                  VecX<T>* dlogits) {
  if (static_cast<std::size_t>(logits.size()) != labels.size())
    throw std::invalid_argument("bce: size mismatch");
  const int n = static_cast<int>(logits.size());
  if (dlogits) dlogits->resize(n);
  T loss = 0;
  for (int i = 0; i < n; ++i) {
    T z = logits[i];
    T y = labels[i] ? T(1) : T(0);
    loss += std::max(z, T(0)) - z * y + std::log1p(std::exp(-std::fabs(z)));
    if (dlogits) {
      T sig = T(1) / (T(1) + std::exp(-z));
      (*dlogits)[i] = (sig - y) / static_cast<T>(n);
    }
  }
  return loss / static_cast<T>(n);
}

#define TOKENLAB_INSTANTIATE_MODEL(T)                                              \
  template struct TransformerParams<T>;                                            \
  template struct ForwardStash<T>;                                                 \
  template ForwardResult<T> transformer_forward<T>(                                \
      const TransformerParams<T>&, const MatX<T>&, const BatchShape&, bool,        \
      const DropoutSpec&);                                                         \
  template void transformer_backward<T>(const TransformerParams<T>&,              \
                                        const ForwardStash<T>&, const VecX<T>&,   \
                                        TransformerParams<T>&, MatX<T>&);         \
  template T forward_single<T>(const TransformerParams<T>&, const MatX<T>&,       \
                               const std::vector<bool>&);                          \
  template T bce_with_logits<T>(const VecX<T>&, const std::vector<bool>&, VecX<T>*);

TOKENLAB_INSTANTIATE_MODEL(float)
TOKENLAB_INSTANTIATE_MODEL(double)

#undef TOKENLAB_INSTANTIATE_MODEL

}  // namespace tokenlab::model
