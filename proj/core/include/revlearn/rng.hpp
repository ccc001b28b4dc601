#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <vector>

namespace revlearn {

// Counter-based deterministic randomness. Draws are pure functions of
// (seed, stream, counter), so forward and reverse passes replay the same
// values regardless of evaluation order.

inline uint64_t mix64(uint64_t z) {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline uint64_t keyed_u64(uint64_t seed, uint64_t stream, uint64_t counter) {
  return mix64(mix64(mix64(seed) + stream) + counter);
}

// Uniform in (0, 1].
inline double keyed_uniform(uint64_t seed, uint64_t stream, uint64_t counter) {
  return static_cast<double>((keyed_u64(seed, stream, counter) >> 11) + 1) * 0x1.0p-53;
}

// Standard normal via Box-Muller; consumes counters 2c and 2c+1.
inline double keyed_normal(uint64_t seed, uint64_t stream, uint64_t counter) {
  const double u1 = keyed_uniform(seed, stream, 2 * counter);
  const double u2 = keyed_uniform(seed, stream, 2 * counter + 1);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

inline std::vector<double> normal_vec(uint64_t seed, uint64_t stream, size_t n) {
  std::vector<double> out(n);
  for (size_t i = 0; i < n; ++i) out[i] = keyed_normal(seed, stream, i);
  return out;
}

// In-place Fisher-Yates keyed by (seed, stream).
template <typename T>
void keyed_shuffle(std::span<T> xs, uint64_t seed, uint64_t stream) {
  for (size_t i = xs.size(); i > 1; --i) {
    const uint64_t r = keyed_u64(seed, stream, i);
    // multiply-shift range reduction
    const size_t j = static_cast<size_t>((static_cast<unsigned __int128>(r) * i) >> 64);
    std::swap(xs[i - 1], xs[j]);
  }
}

}  // namespace revlearn
