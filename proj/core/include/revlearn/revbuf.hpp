#pragma once

#include <boost/multiprecision/cpp_int.hpp>
#include <cstdint>
#include <span>
#include <vector>

#include "revlearn/errors.hpp"

namespace revlearn {

// Momentum decay as an exact rational n/d in (0, 1], canonical (gcd 1),
// denominator capped at 2^16.
struct Ratio {
  uint32_t num = 1;
  uint32_t den = 1;

  Ratio() = default;
  Ratio(uint64_t n, uint64_t d);

  bool is_one() const { return num == den; }
  double value() const { return static_cast<double>(num) / static_cast<double>(den); }
  // (d-n)/d evaluated once here so forward and reverse use identical doubles.
  double one_minus() const {
    return static_cast<double>(den - num) / static_cast<double>(den);
  }

  // Closest rational in (0,1] with denominator <= max_den.
  static Ratio nearest(double gamma, uint32_t max_den = 65536);

  bool operator==(const Ratio&) const = default;
};

// Arbitrary-precision nonnegative integer holding the digits discarded by
// momentum decay. One buffer per vector element.
class InfoBuffer {
 public:
  InfoBuffer() = default;

  bool empty() const { return digits_.is_zero(); }
  // Information content in bits: log2(digits + 1).
  double bits() const;

  // Little-endian byte image of the digits (empty when zero).
  std::vector<uint8_t> to_bytes() const;
  static InfoBuffer from_bytes(std::span<const uint8_t> bytes);

  bool operator==(const InfoBuffer&) const = default;

 private:
  boost::multiprecision::cpp_int digits_ = 0;

  friend void rat_mul(InfoBuffer&, int64_t&, const Ratio&);
  friend void rat_mul_inverse(InfoBuffer&, int64_t&, const Ratio&);
};

// Exactly reversible multiplication of value by n/d. The digit lost to the
// integer division lands in the buffer; a digit drawn from the buffer rides
// along in the value. Negative values use floored division (remainder in
// [0,d)) so the same steps apply verbatim.
void rat_mul(InfoBuffer& buf, int64_t& value, const Ratio& r);

// Exact inverse of rat_mul with the same ratio.
void rat_mul_inverse(InfoBuffer& buf, int64_t& value, const Ratio& r);

inline double bits_stored(const InfoBuffer& buf) { return buf.bits(); }

}  // namespace revlearn
