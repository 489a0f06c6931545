#include "tokenlab/rng.hpp"

#include <cmath>

namespace tokenlab::rng {

std::uint64_t hash_str(std::string_view s, std::uint64_t seed) {
  std::uint64_t h = mix(seed ^ 0x51afd7ed558ccd6dull);
  for (char c : s) h = hash_combine(h, static_cast<unsigned char>(c));
  return hash_combine(h, s.size());
}

double CounterRng::next_normal() {
  double u1 = next_open_double();
  double u2 = next_double();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
}

double CounterRng::next_exponential(double mean) {
  return -mean * std::log(next_open_double());
}

}  // namespace tokenlab::rng
