#include "revlearn/fixed.hpp"

#include <cfenv>
#include <cmath>

namespace revlearn {

int64_t quantize(double x, int frac_bits) {
  const double scaled = std::ldexp(x, frac_bits);
  // nearbyint honours the default FE_TONEAREST mode: ties go to even.
  const double r = std::nearbyint(scaled);
  if (!(std::fabs(r) < 9223372036854775808.0)) {
    throw RangeError("quantize overflow: value " + std::to_string(x) + " with " +
                     std::to_string(frac_bits) + " fractional bits");
  }
  return static_cast<int64_t>(r);
}

FixedVec FixedVec::zeros(size_t n, int frac_bits) {
  FixedVec v;
  v.raw.assign(n, 0);
  v.frac_bits = frac_bits;
  return v;
}

FixedVec FixedVec::from_reals(std::span<const double> xs, int frac_bits) {
  FixedVec v;
  v.frac_bits = frac_bits;
  v.raw.reserve(xs.size());
  for (double x : xs) v.raw.push_back(quantize(x, frac_bits));
  return v;
}

std::vector<double> FixedVec::to_reals() const {
  std::vector<double> out;
  out.reserve(raw.size());
  for (int64_t r : raw) out.push_back(dequantize(r, frac_bits));
  return out;
}

namespace {
void check_compatible(const FixedVec& a, const FixedVec& b) {
  if (a.raw.size() != b.raw.size()) {
    throw ContractViolation("fixed vector length mismatch: " + std::to_string(a.raw.size()) +
                            " vs " + std::to_string(b.raw.size()));
  }
  if (a.frac_bits != b.frac_bits) {
    throw ContractViolation("fixed vector radix point mismatch");
  }
}
}  // namespace

void exact_add_inplace(FixedVec& a, const FixedVec& b) {
  check_compatible(a, b);
  for (size_t i = 0; i < a.raw.size(); ++i) a.raw[i] = wrap_add(a.raw[i], b.raw[i]);
}

void exact_sub_inplace(FixedVec& a, const FixedVec& b) {
  check_compatible(a, b);
  for (size_t i = 0; i < a.raw.size(); ++i) a.raw[i] = wrap_sub(a.raw[i], b.raw[i]);
}

FixedVec exact_add(FixedVec a, const FixedVec& b) {
  exact_add_inplace(a, b);
  return a;
}

FixedVec exact_sub(FixedVec a, const FixedVec& b) {
  exact_sub_inplace(a, b);
  return a;
}

}  // namespace revlearn
