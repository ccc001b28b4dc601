#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "revlearn/errors.hpp"

namespace revlearn {

// Fractional bits of the fixed-point representation. 32 leaves 31 integer
// bits, ample for typical weight magnitudes.
inline constexpr int kDefaultFracBits = 32;

// Wrap-around (two's complement) add/sub. Exactly invertible.
inline int64_t wrap_add(int64_t a, int64_t b) {
  return static_cast<int64_t>(static_cast<uint64_t>(a) + static_cast<uint64_t>(b));
}
inline int64_t wrap_sub(int64_t a, int64_t b) {
  return static_cast<int64_t>(static_cast<uint64_t>(a) - static_cast<uint64_t>(b));
}
inline int64_t wrap_mul(int64_t a, int64_t b) {
  return static_cast<int64_t>(static_cast<uint64_t>(a) * static_cast<uint64_t>(b));
}

// Round-to-nearest-even of x * 2^frac_bits. Throws RangeError when the
// result does not fit a signed 64-bit raw.
int64_t quantize(double x, int frac_bits);

inline double dequantize(int64_t raw, int frac_bits) {
  return std::ldexp(static_cast<double>(raw), -frac_bits);
}

// Vector of fixed-point scalars sharing one radix point. Length is fixed
// over a training run.
struct FixedVec {
  std::vector<int64_t> raw;
  int frac_bits = kDefaultFracBits;

  static FixedVec zeros(size_t n, int frac_bits = kDefaultFracBits);
  static FixedVec from_reals(std::span<const double> xs, int frac_bits = kDefaultFracBits);

  std::vector<double> to_reals() const;
  size_t size() const { return raw.size(); }

  bool operator==(const FixedVec&) const = default;
};

// Elementwise wrap-around addition/subtraction; exact_sub(exact_add(a,b),b)
// restores a bit-exactly.
void exact_add_inplace(FixedVec& a, const FixedVec& b);
void exact_sub_inplace(FixedVec& a, const FixedVec& b);
FixedVec exact_add(FixedVec a, const FixedVec& b);
FixedVec exact_sub(FixedVec a, const FixedVec& b);

}  // namespace revlearn
