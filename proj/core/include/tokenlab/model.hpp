#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "tokenlab/embedding.hpp"

namespace tokenlab::model {

using emb::MatX;
using emb::VecX;

struct ModelConfig {
  int token_dim = 128;
  int n_layers = 2;
  int n_heads = 4;
  int ffn_dim = 256;
  int max_seq_len = 128;
  double dropout_rate = 0.0;

  void validate() const;  // throws std::invalid_argument
  int head_dim() const { return token_dim / n_heads; }
};

enum class Precision { standard, high };  // float32 / float64 arithmetic

struct TrainConfig {
  int batch_size = 64;
  int max_epochs = 10;
  double learning_rate = 3e-4;
  double momentum = 0.9;
  std::int64_t seed = 1;
  Precision precision = Precision::standard;

  void validate() const;
};

template <typename T>
struct LayerParams {
  VecX<T> ln1_g, ln1_b, ln2_g, ln2_b;
  MatX<T> wq, wk, wv, wo;  // d x d
  VecX<T> bq, bk, bv, bo;
  MatX<T> w1;  // d x f
  VecX<T> b1;
  MatX<T> w2;  // f x d
  VecX<T> b2;
};

// Pre-norm transformer encoder with learned positions, masked mean pooling
// and a single-logit head.
template <typename T>
struct TransformerParams {
  ModelConfig cfg;
  MatX<T> pos;  // max_seq_len x d
  std::vector<LayerParams<T>> layers;
  VecX<T> lnf_g, lnf_b;
  VecX<T> head_w;
  T head_b = 0;

  static TransformerParams<T> init(const ModelConfig& cfg, std::uint64_t key);
  static TransformerParams<T> zeros_like(const TransformerParams<T>& other);
  std::int64_t param_count() const;
};

// Ragged batch: `tokens` holds the concatenated real tokens of all
// sequences; sequence s spans rows [offsets[s], offsets[s+1]).
struct BatchShape {
  std::vector<int> offsets;
  int n_seqs() const { return static_cast<int>(offsets.size()) - 1; }
  int rows() const { return offsets.back(); }
  int len(int s) const { return offsets[s + 1] - offsets[s]; }
};

struct DropoutSpec {
  double rate = 0;
  std::uint64_t key = 0;  // ignored when rate == 0
};

template <typename T>
struct ForwardStash;  // opaque activation record, defined in the .cpp

template <typename T>
struct ForwardResult {
  VecX<T> logits;  // one per sequence
  std::shared_ptr<ForwardStash<T>> stash;
};

// Evaluation mode: stash_for_backward=false, no dropout applied.
template <typename T>
ForwardResult<T> transformer_forward(const TransformerParams<T>& p,
                                     const MatX<T>& tokens, const BatchShape& shape,
                                     bool stash_for_backward,
                                     const DropoutSpec& dropout = {});

// Accumulates parameter gradients into `grads`; writes token gradients.
template <typename T>
void transformer_backward(const TransformerParams<T>& p, const ForwardStash<T>& stash,
                          const VecX<T>& dlogits, TransformerParams<T>& grads,
                          MatX<T>& dtokens);

// Single-sequence entry point with an explicit pad mask. Pad positions are
// dropped before any arithmetic, so logits cannot depend on pad content or
// placement. Throws on an all-pad input or if real tokens exceed max_seq_len.
template <typename T>
T forward_single(const TransformerParams<T>& p, const MatX<T>& tokens,
                 const std::vector<bool>& pad_mask);

// Binary cross-entropy with logits; returns mean loss, writes dL/dlogit.
template <typename T>
T bce_with_logits(const VecX<T>& logits, const std::vector<bool>& labels,
                  VecX<T>* dlogits);

}  // namespace tokenlab::model
