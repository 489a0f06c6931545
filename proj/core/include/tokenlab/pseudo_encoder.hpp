#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "tokenlab/embedding.hpp"
#include "tokenlab/event_model.hpp"

namespace tokenlab::pseudo {

// Deterministic stand-in for a pretrained description encoder. Words map to
// fixed unit vectors from a counter-based table; `quality` sets the fraction
// of active semantic directions; `word_table_slots` is the hashed word-vector
// table size, which is also the trainable-pathway parameter rows.
struct DescriptionEncoderSpec {
  std::string name;
  int native_dim = 768;
  double quality = 0.25;
  std::uint64_t domain_seed = 0;
  int word_table_slots = 16384;

  int active_dims() const;
};

const std::vector<DescriptionEncoderSpec>& encoder_registry();
const DescriptionEncoderSpec& encoder_by_name(std::string_view name);

std::uint32_t word_slot(std::string_view word, const DescriptionEncoderSpec& spec);

// Unit vector for one table slot. Slots congruent 0 mod 4 are shared across
// domains (partial vocabulary overlap between encoders of equal shape).
Eigen::VectorXd slot_vector(std::uint32_t slot, const DescriptionEncoderSpec& spec);

// L2-normalized mean of the word vectors of `text`. Throws on empty text.
Eigen::VectorXd encode_description(std::string_view text,
                                   const DescriptionEncoderSpec& spec);

struct MappingTable {
  std::vector<std::string> descriptions;  // per code id; fallback = code string
  std::vector<bool> described;            // true where a real description exists
  double coverage = 0;

  const std::string& description_for(std::uint32_t code_id) const {
    return descriptions.at(code_id);
  }
  double recompute_coverage() const;
};

enum class MappingMode { original, enhanced };
MappingMode mapping_mode_from(std::string_view name);

// enhanced: every code gets a synthetic description from its family tokens
// (coverage 1). original: a deterministic 25% quota keeps descriptions, the
// rest fall back to the raw code string.
MappingTable build_mapping(const Vocabulary& vocab, MappingMode mode,
                           std::uint64_t seed);

// Persisted matrix of description encodings, one row per vocabulary index.
// File layout: magic TLCACHE1, little-endian u32 vocab_size, u32 native_dim,
// u64 FNV-1a digest over the float payload, vocab*native float32 row-major,
// then the encoder name as length-prefixed UTF-8.
struct EmbeddingCache {
  std::uint32_t vocab_size = 0;
  std::uint32_t native_dim = 0;
  std::uint64_t digest = 0;
  Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rows;
  std::string encoder_name;
};

EmbeddingCache build_cache(const Vocabulary& vocab, const MappingTable& mapping,
                           const DescriptionEncoderSpec& spec);
void save_cache(const EmbeddingCache& cache, const std::string& path);
EmbeddingCache load_cache(const std::string& path);  // verifies the digest
std::uint64_t cache_payload_digest(const EmbeddingCache& cache);

// Deduplicated frozen lookup: each unique id is projected once
// (projection^T row + bias), results scattered back in input order. Cache
// rows receive no gradient anywhere; only the projection trains.
template <typename T>
std::vector<emb::VecX<T>> frozen_lookup(const std::vector<std::uint32_t>& code_ids,
                                        const EmbeddingCache& cache,
                                        const emb::MatX<T>& projection,
                                        const emb::VecX<T>& projection_bias,
                                        std::size_t* projection_evals = nullptr);

}  // namespace tokenlab::pseudo
