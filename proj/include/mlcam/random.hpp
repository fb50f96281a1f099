#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace mlcam {

// Draws in [0, 1) from the top 53 bits of the engine output. The standard
// distributions are implementation-defined, so every stochastic choice in
// the library goes through these helpers to keep runs reproducible.
inline double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Uniform in [lo, hi).
inline double uniform(std::mt19937_64& rng, double lo, double hi) {
  return lo + (hi - lo) * uniform01(rng);
}

// Uniform integer in [0, n). Modulo bias is negligible for n << 2^64.
inline std::uint64_t uniform_index(std::mt19937_64& rng, std::uint64_t n) {
  return rng() % n;
}

// Fisher-Yates with the portable draws above.
template <class T>
void deterministic_shuffle(std::vector<T>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(uniform_index(rng, i));
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace mlcam
