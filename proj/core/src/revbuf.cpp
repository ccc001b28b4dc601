#include "revlearn/revbuf.hpp"

#include <cmath>

#include "revlearn/fixed.hpp"
#include <numeric>

namespace revlearn {

namespace mp = boost::multiprecision;

Ratio::Ratio(uint64_t n, uint64_t d) {
  if (n == 0 || d == 0 || n > d || d > 65536) {
    throw ContractViolation("ratio must satisfy 0 < n <= d <= 65536, got " + std::to_string(n) +
                            "/" + std::to_string(d));
  }
  const uint64_t g = std::gcd(n, d);
  num = static_cast<uint32_t>(n / g);
  den = static_cast<uint32_t>(d / g);
}

Ratio Ratio::nearest(double gamma, uint32_t max_den) {
  if (!(gamma > 0.0) || !(gamma <= 1.0)) {
    throw ContractViolation("gamma must lie in (0,1], got " + std::to_string(gamma));
  }
  if (max_den == 0 || max_den > 65536) {
    throw ContractViolation("max_den must lie in [1, 65536]");
  }
  // Continued-fraction convergents with a final semiconvergent candidate.
  uint64_t p0 = 0, q0 = 1, p1 = 1, q1 = 0;
  double frac = gamma;
  for (int iter = 0; iter < 64; ++iter) {
    const double af = std::floor(frac);
    const uint64_t a = static_cast<uint64_t>(af);
    const uint64_t p2 = a * p1 + p0;
    const uint64_t q2 = a * q1 + q0;
    if (q2 > max_den) {
      // Largest semiconvergent with denominator within bound.
      const uint64_t k = (max_den - q0) / q1;
      const uint64_t ps = k * p1 + p0;
      const uint64_t qs = k * q1 + q0;
      const double best = std::fabs(gamma - static_cast<double>(p1) / static_cast<double>(q1));
      const double semi = std::fabs(gamma - static_cast<double>(ps) / static_cast<double>(qs));
      uint64_t pn = p1, qn = q1;
      if (qs >= 1 && semi < best) {
        pn = ps;
        qn = qs;
      }
      if (pn == 0) return Ratio(1, max_den);  // clamp: gamma must stay positive
      return Ratio(pn, qn);
    }
    p0 = p1;
    q0 = q1;
    p1 = p2;
    q1 = q2;
    const double rem = frac - af;
    if (rem <= 0.0) break;
    frac = 1.0 / rem;
  }
  if (p1 == 0) return Ratio(1, max_den);
  return Ratio(p1, q1);
}

namespace {

inline int64_t floordiv(int64_t a, int64_t d) {
  int64_t q = a / d;
  if ((a % d) < 0) --q;
  return q;
}

inline int64_t floormod(int64_t a, int64_t d) {
  int64_t r = a % d;
  if (r < 0) r += d;
  return r;
}

}  // namespace

void rat_mul(InfoBuffer& buf, int64_t& value, const Ratio& r) {
  if (r.is_one()) return;
  auto& i = buf.digits_;
  const int64_t n = r.num;
  const int64_t d = r.den;

  i *= d;                        // make room for the new digit
  i += floormod(value, d);       // store the digit lost by the division
  value = floordiv(value, d);
  value = wrap_mul(value, n);
  if (n > 1) {
    mp::cpp_int q, rem;
    mp::divide_qr(i, mp::cpp_int(n), q, rem);
    value = wrap_add(value, rem.convert_to<int64_t>());  // digit rides along in the value
    i = std::move(q);
  }
}

void rat_mul_inverse(InfoBuffer& buf, int64_t& value, const Ratio& r) {
  if (r.is_one()) return;
  auto& i = buf.digits_;
  const int64_t n = r.num;
  const int64_t d = r.den;

  if (n > 1) {
    const int64_t rn = floormod(value, n);
    i *= n;
    i += rn;
    value = floordiv(value, n);
  }
  value = wrap_mul(value, d);
  mp::cpp_int q, rem;
  mp::divide_qr(i, mp::cpp_int(d), q, rem);
  value = wrap_add(value, rem.convert_to<int64_t>());
  i = std::move(q);
}

double InfoBuffer::bits() const {
  if (digits_.is_zero()) return 0.0;
  const mp::cpp_int x = digits_ + 1;
  const int m = static_cast<int>(mp::msb(x));
  if (m <= 62) {
    return std::log2(x.convert_to<double>());
  }
  const int shift = m - 52;
  const mp::cpp_int top = x >> shift;
  return std::log2(top.convert_to<double>()) + static_cast<double>(shift);
}

std::vector<uint8_t> InfoBuffer::to_bytes() const {
  std::vector<uint8_t> out;
  if (digits_.is_zero()) return out;
  mp::export_bits(digits_, std::back_inserter(out), 8, /*msv_first=*/false);
  return out;
}

InfoBuffer InfoBuffer::from_bytes(std::span<const uint8_t> bytes) {
  InfoBuffer b;
  if (!bytes.empty()) {
    mp::import_bits(b.digits_, bytes.begin(), bytes.end(), 8, /*msv_first=*/false);
  }
  return b;
}

}  // namespace revlearn
