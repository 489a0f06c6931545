#include "tokenlab/pseudo_encoder.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <unordered_map>

#include "tokenlab/rng.hpp"
#include "tokenlab/textio.hpp"

namespace tokenlab::pseudo {

namespace {

constexpr char kMagic[8] = {'T', 'L', 'C', 'A', 'C', 'H', 'E', '1'};
constexpr std::uint64_t kSharedDomainKey = 0x73686172656440ull;  // cross-domain slots

const char* family_phrase(std::string_view family) {
  if (family == "diag") return "diagnosis of";
  if (family == "lab") return "laboratory measurement of";
  if (family == "med") return "medication administration of";
  if (family == "proc") return "procedure performed";
  if (family == "vital") return "vital sign recording of";
  if (family == "infusion") return "infusion of";
  if (family == "adt") return "admission transfer event";
  if (family == "nurse") return "nursing assessment of";
  return "clinical event";
}

template <typename T>
void write_pod(std::string& out, const T& v) {
  const char* p = reinterpret_cast<const char*>(&v);
  out.append(p, sizeof(T));
}

template <typename T>
T read_pod(const std::string& in, std::size_t& off) {
  if (off + sizeof(T) > in.size())
    throw std::runtime_error("cache file truncated");
  T v;
  std::memcpy(&v, in.data() + off, sizeof(T));
  off += sizeof(T);
  return v;
}

}  // namespace

int DescriptionEncoderSpec::active_dims() const {
  return std::max(8, static_cast<int>(std::lround(quality * native_dim)));
}

const std::vector<DescriptionEncoderSpec>& encoder_registry() {
  static const std::vector<DescriptionEncoderSpec> kRegistry = {
      {"tiny-clinical", 768, 0.25, rng::hash_str("clinical"), 16384},
      {"large-clinical", 1024, 0.75, rng::hash_str("clinical"), 32768},
      {"large-general", 1024, 0.65, rng::hash_str("general"), 32768},
  };
  return kRegistry;
}

const DescriptionEncoderSpec& encoder_by_name(std::string_view name) {
  for (const auto& e : encoder_registry())
    if (e.name == name) return e;
  throw std::invalid_argument("unknown encoder: " + std::string(name));
}

std::uint32_t word_slot(std::string_view word, const DescriptionEncoderSpec& spec) {
  return static_cast<std::uint32_t>(rng::hash_str(word) %
                                    static_cast<std::uint64_t>(spec.word_table_slots));
}

Eigen::VectorXd slot_vector(std::uint32_t slot, const DescriptionEncoderSpec& spec) {
  const bool shared = slot % 4 == 0;
  rng::CounterRng g({shared ? kSharedDomainKey : spec.domain_seed, slot,
                     static_cast<std::uint64_t>(spec.native_dim),
                     static_cast<std::uint64_t>(spec.active_dims())});
  Eigen::VectorXd v = Eigen::VectorXd::Zero(spec.native_dim);
  const int active = spec.active_dims();
  for (int i = 0; i < active && i < spec.native_dim; ++i) v[i] = g.next_normal();
  double n = v.norm();
  if (n < 1e-12) {
    v[0] = 1;
    return v;
  }
  return v / n;
}

Eigen::VectorXd encode_description(std::string_view text,
                                   const DescriptionEncoderSpec& spec) {
  auto words = textio::tokenize_words(text);
  if (words.empty())
    throw std::invalid_argument("encode_description: empty text");
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(spec.native_dim);
  for (const auto& w : words) acc += slot_vector(word_slot(w, spec), spec);
  acc /= static_cast<double>(words.size());
  double n = acc.norm();
  if (n < 1e-12) {
    acc.setZero();
    acc[0] = 1;
    return acc;
  }
  return acc / n;
}

double MappingTable::recompute_coverage() const {
  if (descriptions.empty()) return 0;
  double n = 0;
  for (bool d : described) n += d ? 1 : 0;
  return n / static_cast<double>(described.size());
}

MappingMode mapping_mode_from(std::string_view name) {
  if (name == "original") return MappingMode::original;
  if (name == "enhanced") return MappingMode::enhanced;
  throw std::invalid_argument("unknown mapping mode: " + std::string(name));
}

MappingTable build_mapping(const Vocabulary& vocab, MappingMode mode,
                           std::uint64_t seed) {
  const std::size_t n = vocab.size();
  MappingTable t;
  t.descriptions.resize(n);
  t.described.assign(n, false);

  std::vector<std::string> enhanced(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::string& code = vocab.code(static_cast<std::uint32_t>(i));
    auto words = textio::tokenize_words(code);
    std::string desc = family_phrase(words.empty() ? "" : words[0]);
    for (std::size_t w = 1; w < words.size(); ++w) {
      desc += ' ';
      desc += words[w];
    }
    enhanced[i] = std::move(desc);
  }

  if (mode == MappingMode::enhanced) {
    for (std::size_t i = 0; i < n; ++i) {
      t.descriptions[i] = enhanced[i];
      t.described[i] = true;
    }
  } else {
    // exact 25% quota: order codes by keyed hash, keep the first quarter
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      auto ha = rng::hash_str(vocab.code(static_cast<std::uint32_t>(a)), seed);
      auto hb = rng::hash_str(vocab.code(static_cast<std::uint32_t>(b)), seed);
      return ha < hb;
    });
    const std::size_t quota = static_cast<std::size_t>(std::lround(0.25 * n));
    for (std::size_t r = 0; r < n; ++r) {
      std::size_t i = order[r];
      if (r < quota) {
        t.descriptions[i] = enhanced[i];
        t.described[i] = true;
      } else {
        t.descriptions[i] = vocab.code(static_cast<std::uint32_t>(i));  // fallback
      }
    }
  }
  t.coverage = t.recompute_coverage();
  return t;
}

std::uint64_t cache_payload_digest(const EmbeddingCache& cache) {
  return rng::fnv1a(cache.rows.data(), sizeof(float) * cache.rows.size());
}

EmbeddingCache build_cache(const Vocabulary& vocab, const MappingTable& mapping,
                           const DescriptionEncoderSpec& spec) {
  if (mapping.descriptions.size() != vocab.size())
    throw std::invalid_argument("mapping does not cover the vocabulary");
  EmbeddingCache c;
  c.vocab_size = static_cast<std::uint32_t>(vocab.size());
  c.native_dim = static_cast<std::uint32_t>(spec.native_dim);
  c.encoder_name = spec.name;
  c.rows.resize(c.vocab_size, c.native_dim);
  for (std::uint32_t i = 0; i < c.vocab_size; ++i)
    c.rows.row(i) =
        encode_description(mapping.description_for(i), spec).cast<float>().transpose();
  c.digest = cache_payload_digest(c);
  return c;
}

void save_cache(const EmbeddingCache& cache, const std::string& path) {
  std::string out;
  out.reserve(24 + sizeof(float) * cache.rows.size() + cache.encoder_name.size() + 4);
  out.append(kMagic, sizeof(kMagic));
  write_pod(out, cache.vocab_size);
  write_pod(out, cache.native_dim);
  write_pod(out, cache.digest);
  out.append(reinterpret_cast<const char*>(cache.rows.data()),
             sizeof(float) * cache.rows.size());
  std::uint32_t name_len = static_cast<std::uint32_t>(cache.encoder_name.size());
  write_pod(out, name_len);
  out.append(cache.encoder_name);
  textio::write_file(path, out);
}

EmbeddingCache load_cache(const std::string& path) {
  const std::string in = textio::read_file(path);
  if (in.size() < sizeof(kMagic) || std::memcmp(in.data(), kMagic, sizeof(kMagic)) != 0)
    throw std::runtime_error("not a tokenlab cache file: " + path);
  std::size_t off = sizeof(kMagic);
  EmbeddingCache c;
  c.vocab_size = read_pod<std::uint32_t>(in, off);
  c.native_dim = read_pod<std::uint32_t>(in, off);
  c.digest = read_pod<std::uint64_t>(in, off);
  const std::size_t payload = sizeof(float) * static_cast<std::size_t>(c.vocab_size) *
                              c.native_dim;
  if (off + payload > in.size()) throw std::runtime_error("cache file truncated");
  c.rows.resize(c.vocab_size, c.native_dim);
  std::memcpy(c.rows.data(), in.data() + off, payload);
  off += payload;
  std::uint32_t name_len = read_pod<std::uint32_t>(in, off);
  if (off + name_len > in.size()) throw std::runtime_error("cache file truncated");
  c.encoder_name.assign(in.data() + off, name_len);
  if (cache_payload_digest(c) != c.digest)
    throw std::runtime_error("cache digest mismatch: " + path);
  return c;
}

template <typename T>
std::vector<emb::VecX<T>> frozen_lookup(const std::vector<std::uint32_t>& code_ids,
                                        const EmbeddingCache& cache,
                                        const emb::MatX<T>& projection,
                                        const emb::VecX<T>& projection_bias,
                                        std::size_t* projection_evals) {
  std::unordered_map<std::uint32_t, std::size_t> first_use;
  std::vector<std::uint32_t> unique_ids;
  for (auto id : code_ids) {
    if (id >= cache.vocab_size)
      throw std::out_of_range("frozen_lookup: code id outside the cache");
    if (first_use.emplace(id, unique_ids.size()).second) unique_ids.push_back(id);
  }
  std::vector<emb::VecX<T>> projected(unique_ids.size());
  for (std::size_t u = 0; u < unique_ids.size(); ++u) {
    emb::VecX<T> native = cache.rows.row(unique_ids[u]).transpose().cast<T>();
    projected[u] = projection.transpose() * native + projection_bias;
  }
  if (projection_evals) *projection_evals = unique_ids.size();
  std::vector<emb::VecX<T>> out;
  out.reserve(code_ids.size());
  for (auto id : code_ids) out.push_back(projected[first_use[id]]);
  return out;
}

template std::vector<emb::VecX<float>> frozen_lookup<float>(
    const std::vector<std::uint32_t>&, const EmbeddingCache&, const emb::MatX<float>&,
    const emb::VecX<float>&, std::size_t*);
template std::vector<emb::VecX<double>> frozen_lookup<double>(
    const std::vector<std::uint32_t>&, const EmbeddingCache&, const emb::MatX<double>&,
    const emb::VecX<double>&, std::size_t*);

}  // namespace tokenlab::pseudo
