#pragma once

#include <cstdint>
#include <cstring>
#include <initializer_list>
#include <string_view>
#include <vector>

namespace tokenlab::rng {

// splitmix64 finalizer. Bijective on u64, used as the mixing core of every
// keyed / counter-based stream in the project.
constexpr std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

constexpr std::uint64_t hash_combine(std::uint64_t h, std::uint64_t v) {
  return mix(h ^ (v + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2)));
}

std::uint64_t hash_str(std::string_view s, std::uint64_t seed = 0);

inline std::uint64_t key_of(std::initializer_list<std::uint64_t> parts) {
  std::uint64_t h = 0x6a09e667f3bcc909ull;
  for (auto p : parts) h = hash_combine(h, p);
  return h;
}

// Counter-based generator: the i-th output is a pure function of (key, i).
// Streams keyed by (seed, subject), (seed, word), (seed, epoch) etc. are
// independent of each other and of evaluation order.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t key) : key_(key) {}
  CounterRng(std::initializer_list<std::uint64_t> parts) : key_(key_of(parts)) {}

  std::uint64_t next_u64() { return mix(key_ ^ mix(counter_++)); }

  // uniform in [0,1)
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // uniform in (0,1), safe as log() argument
  double next_open_double() {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  // uniform integer in [0, n); n must be > 0
  std::uint64_t next_below(std::uint64_t n) {
    // fixed-point multiply; bias is < 2^-64 per draw which is irrelevant here
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  // standard normal via Box-Muller (cosine branch only, two draws per value)
  double next_normal();

  double next_exponential(double mean);

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

// deterministic Fisher-Yates
template <typename T>
void shuffle(std::vector<T>& v, CounterRng& g) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::size_t j = static_cast<std::size_t>(g.next_below(i));
    std::swap(v[i - 1], v[j]);
  }
}

// FNV-1a 64-bit, used as the content digest in binary file formats.
class Fnv1a {
 public:
  void update(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h_ ^= p[i];
      h_ *= 0x100000001b3ull;
    }
  }
  void update(std::string_view s) { update(s.data(), s.size()); }
  std::uint64_t digest() const { return h_; }

 private:
  std::uint64_t h_ = 0xcbf29ce484222325ull;
};

inline std::uint64_t fnv1a(const void* data, std::size_t n) {
  Fnv1a f;
  f.update(data, n);
  return f.digest();
}

}  // namespace tokenlab::rng
