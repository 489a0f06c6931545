#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <vector>

#include "tokenlab/event_model.hpp"

namespace tokenlab::emb {

template <typename T>
using VecX = Eigen::Matrix<T, Eigen::Dynamic, 1>;
template <typename T>
using MatX = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;

inline int cve_hidden_size(int token_dim) {
  return static_cast<int>(std::ceil(std::sqrt(static_cast<double>(token_dim))));
}

// Continuous Value Embedding: scalar -> ceil(sqrt(d)) tanh units -> d.
template <typename T>
struct CveParams {
  T input_scale = 1;  // fixed, not trained
  VecX<T> w1, b1;     // h
  MatX<T> w2;         // h x d

  int dim() const { return static_cast<int>(w2.cols()); }
  std::int64_t param_count() const { return w1.size() + b1.size() + w2.size(); }
};

template <typename T>
CveParams<T> init_cve(int token_dim, std::uint64_t key);

template <typename T>
VecX<T> cve_forward(T x, const CveParams<T>& p);

// Accumulates parameter gradients, returns dL/dx.
template <typename T>
T cve_backward(T x, const CveParams<T>& p, const VecX<T>& dout, CveParams<T>& grad);

// Time2Vec: one linear feature + k sinusoids, projected to d.
template <typename T>
struct Time2VecParams {
  T linear_w = 1, linear_b = 0;
  VecX<T> periodic_w, periodic_b;  // k
  MatX<T> proj;                    // (k+1) x d

  int k() const { return static_cast<int>(periodic_w.size()); }
  int dim() const { return static_cast<int>(proj.cols()); }
  std::int64_t param_count() const {
    return 2 + periodic_w.size() + periodic_b.size() + proj.size();
  }
};

template <typename T>
Time2VecParams<T> init_time2vec(int k, int token_dim, std::uint64_t key);

// pre-projection features [linear, sin_1..sin_k]; exposed for tests
template <typename T>
VecX<T> time2vec_features(T t, const Time2VecParams<T>& p);

template <typename T>
VecX<T> time2vec_forward(T t, const Time2VecParams<T>& p);

template <typename T>
T time2vec_backward(T t, const Time2VecParams<T>& p, const VecX<T>& dout,
                    Time2VecParams<T>& grad);

// LeTE: Fourier dims on learnable frequencies over log(1+t), remaining dims
// a two-layer tanh perceptron on log(1+t); takes the raw time delta.
template <typename T>
struct LeTEParams {
  VecX<T> freqs, phases;  // n_fourier
  VecX<T> sw1, sb1;       // hidden
  MatX<T> sw2;            // hidden x n_spline
  VecX<T> sb2;            // n_spline

  int fourier_dims() const { return static_cast<int>(freqs.size()); }
  int dim() const { return fourier_dims() + static_cast<int>(sb2.size()); }
  std::int64_t param_count() const {
    return freqs.size() + phases.size() + sw1.size() + sb1.size() + sw2.size() +
           sb2.size();
  }
};

inline constexpr int kLeteSplineHidden = 16;

// fourier_frac presets: 0.25 spline-heavy, 0.5 balanced, 0.75 fourier-heavy
double lete_preset_fraction(std::string_view preset);

template <typename T>
LeTEParams<T> init_lete(double fourier_frac, int token_dim, std::uint64_t key);

template <typename T>
VecX<T> lete_forward(T raw_t, const LeTEParams<T>& p);

template <typename T>
T lete_backward(T raw_t, const LeTEParams<T>& p, const VecX<T>& dout,
                LeTEParams<T>& grad);

// --- tokenizer configuration ---------------------------------------------

struct AblationMask {
  bool use_time = true;
  bool use_value = true;
};

enum class Pathway { triplet, textcode };
enum class TimeEncoderKind { cve, time2vec, lete };
enum class CodeSourceKind { trainable_table, frozen_cache, trainable_encoder };

struct TimeEncoderSpec {
  TimeEncoderKind kind = TimeEncoderKind::cve;
  int t2v_k = 1;
  std::string lete_preset = "balanced";
};

struct TokenizerSpec {
  Pathway pathway = Pathway::triplet;
  AblationMask ablation;
  TimeEncoderSpec time_encoder;
  CodeSourceKind code_source = CodeSourceKind::trainable_table;
  std::string encoder;       // pseudo-encoder name, textcode only
  std::string mapping_mode;  // "original" | "enhanced", textcode only

  void validate() const;  // throws std::invalid_argument

  // Flat field list used for the controlled-axis diff and for reports.
  std::vector<std::pair<std::string, std::string>> serialize_fields() const;

  static TokenizerSpec triplet_default();
  static TokenizerSpec textcode_default(std::string encoder_name,
                                        CodeSourceKind kind,
                                        std::string mapping = "enhanced");
};

// Fields that differ between two specs, by serialized field name.
std::vector<std::string> spec_field_diff(const TokenizerSpec& a,
                                         const TokenizerSpec& b);

// --- per-event embedding ---------------------------------------------------

// Per-code value standardization statistics (train split only).
template <typename T>
struct ValueStats {
  VecX<T> mean, inv_std;  // per code id; inv_std defaults to 1

  static ValueStats identity(std::size_t vocab_size) {
    ValueStats s;
    s.mean = VecX<T>::Zero(vocab_size);
    s.inv_std = VecX<T>::Ones(vocab_size);
    return s;
  }
};

template <typename T>
struct TimeEncoderParams {
  TimeEncoderKind kind = TimeEncoderKind::cve;
  CveParams<T> cve;
  Time2VecParams<T> t2v;
  LeTEParams<T> lete;

  std::int64_t param_count() const;
};

template <typename T>
VecX<T> time_encode(T raw_delta, const TimeEncoderParams<T>& p);
template <typename T>
T time_encode_backward(T raw_delta, const TimeEncoderParams<T>& p,
                       const VecX<T>& dout, TimeEncoderParams<T>& grad);

// Batched forms used by the trainer: one input per row, encoder outputs are
// accumulated into `add_into` (n x d). Mathematically the per-row encoders
// above; kept separate so the hot path runs on matrix kernels.
template <typename T>
void cve_forward_batch(const VecX<T>& x, const CveParams<T>& p, MatX<T>& add_into);
template <typename T>
void cve_backward_batch(const VecX<T>& x, const CveParams<T>& p, const MatX<T>& dout,
                        CveParams<T>& grad);

// raw time deltas; the log1p transform is applied inside per encoder kind
template <typename T>
void time_encode_batch(const VecX<T>& raw, const TimeEncoderParams<T>& p,
                       MatX<T>& add_into);
template <typename T>
void time_encode_backward_batch(const VecX<T>& raw, const TimeEncoderParams<T>& p,
                                const MatX<T>& dout, TimeEncoderParams<T>& grad);

// Everything embed_event needs. `code_vectors` holds one d-vector per
// vocabulary code: the embedding table for Triplet, or the projected
// description encodings for TextCode.
template <typename T>
struct EventEmbedParams {
  AblationMask ablation;
  const MatX<T>* code_vectors = nullptr;  // vocab x d
  TimeEncoderParams<T> time_enc;
  CveParams<T> cve_value;
  ValueStats<T> value_stats;
};

template <typename T>
VecX<T> embed_code_term(const Event& ev, const EventEmbedParams<T>& p);
template <typename T>
VecX<T> embed_time_term(const Event& ev, const EventEmbedParams<T>& p);
template <typename T>
VecX<T> embed_value_term(const Event& ev, const EventEmbedParams<T>& p);

// code term, plus the unablated time and value terms, in that order.
template <typename T>
VecX<T> embed_event(const Event& ev, const EventEmbedParams<T>& p);

}  // namespace tokenlab::emb
