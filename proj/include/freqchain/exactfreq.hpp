#pragma once

// Exact frequency arithmetic on signed 128-bit counts of micro-hertz.
//
// Optical frequencies near 1.3e15 Hz need ~1.3e21 ticks at 1 uHz resolution,
// well inside the +-1.7e38 range of a 128-bit integer. Every operation here
// is exact or throws; conversions to and from floating point are explicit
// and named as such.

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstdint>
#include <cstdlib>
#include <limits>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "freqchain/error.hpp"

namespace freqchain {

using Int128 = __int128;
using UInt128 = unsigned __int128;

namespace detail {

inline std::string to_string(Int128 v) {
  if (v == 0) return "0";
  const bool negative = v < 0;
  UInt128 u = negative ? UInt128(0) - UInt128(v) : UInt128(v);
  std::string out;
  while (u != 0) {
    out.push_back(char('0' + int(u % 10)));
    u /= 10;
  }
  if (negative) out.push_back('-');
  std::reverse(out.begin(), out.end());
  return out;
}

inline Int128 checked_add(Int128 a, Int128 b) {
  Int128 r;
  if (__builtin_add_overflow(a, b, &r)) throw OverflowError("128-bit overflow in addition");
  return r;
}

inline Int128 checked_sub(Int128 a, Int128 b) {
  Int128 r;
  if (__builtin_sub_overflow(a, b, &r)) throw OverflowError("128-bit overflow in subtraction");
  return r;
}

inline Int128 checked_mul(Int128 a, Int128 b) {
  Int128 r;
  if (__builtin_mul_overflow(a, b, &r)) throw OverflowError("128-bit overflow in multiplication");
  return r;
}

inline Int128 abs128(Int128 v) {
  if (v == std::numeric_limits<Int128>::min()) throw OverflowError("128-bit overflow in abs");
  return v < 0 ? -v : v;
}

inline Int128 gcd128(Int128 a, Int128 b) {
  a = abs128(a);
  b = abs128(b);
  while (b != 0) {
    Int128 t = a % b;
    a = b;
    b = t;
  }
  return a;
}

inline Int128 pow10(int e) {
  Int128 r = 1;
  for (int i = 0; i < e; ++i) r = checked_mul(r, 10);
  return r;
}

// floor(sqrt(n)) for n >= 0.
inline UInt128 isqrt(UInt128 n) {
  if (n < 2) return n;
  auto x = static_cast<UInt128>(std::sqrt(static_cast<long double>(n)));
  // Correct the floating estimate; at most a few steps either way.
  auto sq_gt = [n](UInt128 v) {
    // v*v > n without overflowing.
    return v != 0 && v > n / v;
  };
  while (sq_gt(x)) --x;
  while (!sq_gt(x + 1)) ++x;
  return x;
}

// Floor division with a positive divisor.
inline Int128 floor_div(Int128 a, Int128 b) {
  Int128 q = a / b;
  if ((a % b != 0) && (a < 0)) --q;
  return q;
}

// Division rounding half away from zero, b > 0.
inline Int128 round_div(Int128 a, Int128 b) {
  const Int128 q = abs128(a) / b;
  const Int128 r = abs128(a) % b;
  const Int128 m = (2 * r >= b) ? q + 1 : q;
  return a < 0 ? -m : m;
}

}  // namespace detail

class Frequency {
 public:
  using rep = Int128;
  static constexpr rep kTicksPerHz = 1'000'000;

  constexpr Frequency() = default;

  static constexpr Frequency from_ticks(rep ticks) { return Frequency(ticks); }
  static Frequency from_hz(std::int64_t hz) { return Frequency(detail::checked_mul(hz, kTicksPerHz)); }

  // Lossy: rounds to the nearest tick. Reserved for simulation noise and fit output.
  static Frequency from_hz_rounded(double hz) {
    const long double t = std::round(static_cast<long double>(hz) * 1e6L);
    if (!std::isfinite(t) || std::fabs(t) > 1e36L) throw OverflowError("frequency out of range");
    return Frequency(static_cast<rep>(t));
  }

  constexpr rep ticks() const { return ticks_; }

  // Lossy conversion to floating-point hertz.
  double to_hz() const {
    const rep whole = ticks_ / kTicksPerHz;
    const rep frac = ticks_ % kTicksPerHz;
    return static_cast<double>(whole) + static_cast<double>(frac) / 1e6;
  }

  constexpr auto operator<=>(const Frequency&) const = default;

  Frequency operator-() const { return Frequency(detail::checked_sub(0, ticks_)); }
  Frequency& operator+=(Frequency o) {
    ticks_ = detail::checked_add(ticks_, o.ticks_);
    return *this;
  }
  Frequency& operator-=(Frequency o) {
    ticks_ = detail::checked_sub(ticks_, o.ticks_);
    return *this;
  }
  friend Frequency operator+(Frequency a, Frequency b) { return a += b; }
  friend Frequency operator-(Frequency a, Frequency b) { return a -= b; }
  friend Frequency operator*(Frequency a, Int128 k) { return Frequency(detail::checked_mul(a.ticks_, k)); }
  friend Frequency operator*(Int128 k, Frequency a) { return a * k; }

  Frequency abs() const { return Frequency(detail::abs128(ticks_)); }

 private:
  constexpr explicit Frequency(rep t) : ticks_(t) {}
  rep ticks_ = 0;
};

inline Frequency abs(Frequency f) { return f.abs(); }

// Rational number kept in lowest terms with a positive denominator.
class Ratio {
 public:
  constexpr Ratio() = default;
  Ratio(Int128 num) : num_(num), den_(1) {}  // NOLINT: implicit from integers is intended
  Ratio(Int128 num, Int128 den) : num_(num), den_(den) {
    if (den_ == 0) throw Error("ratio with zero denominator");
    normalize();
  }

  Int128 num() const { return num_; }
  Int128 den() const { return den_; }
  bool is_zero() const { return num_ == 0; }
  bool is_integer() const { return den_ == 1; }

  friend bool operator==(const Ratio&, const Ratio&) = default;
  friend std::strong_ordering operator<=>(const Ratio& a, const Ratio& b) {
    const Int128 l = detail::checked_mul(a.num_, b.den_);
    const Int128 r = detail::checked_mul(b.num_, a.den_);
    return l <=> r;
  }

  Ratio operator-() const { return Ratio(detail::checked_sub(0, num_), den_); }

  friend Ratio operator+(const Ratio& a, const Ratio& b) {
    const Int128 g = detail::gcd128(a.den_, b.den_);
    const Int128 da = a.den_ / g;
    const Int128 db = b.den_ / g;
    return Ratio(detail::checked_add(detail::checked_mul(a.num_, db), detail::checked_mul(b.num_, da)),
                 detail::checked_mul(detail::checked_mul(da, db), g));
  }
  friend Ratio operator-(const Ratio& a, const Ratio& b) { return a + (-b); }
  friend Ratio operator*(const Ratio& a, const Ratio& b) {
    // Cross-reduce first to keep intermediates small.
    const Int128 g1 = detail::gcd128(a.num_, b.den_);
    const Int128 g2 = detail::gcd128(b.num_, a.den_);
    const Int128 n1 = g1 == 0 ? a.num_ : a.num_ / g1;
    const Int128 d2 = g1 == 0 ? b.den_ : b.den_ / g1;
    const Int128 n2 = g2 == 0 ? b.num_ : b.num_ / g2;
    const Int128 d1 = g2 == 0 ? a.den_ : a.den_ / g2;
    return Ratio(detail::checked_mul(n1, n2), detail::checked_mul(d1, d2));
  }
  friend Ratio operator/(const Ratio& a, const Ratio& b) {
    if (b.num_ == 0) throw Error("ratio division by zero");
    return a * Ratio(b.den_, b.num_);
  }
  Ratio& operator+=(const Ratio& o) { return *this = *this + o; }
  Ratio& operator-=(const Ratio& o) { return *this = *this - o; }
  Ratio& operator*=(const Ratio& o) { return *this = *this * o; }

  Ratio abs() const { return Ratio(detail::abs128(num_), den_); }

  std::string to_string() const {
    return den_ == 1 ? detail::to_string(num_) : detail::to_string(num_) + "/" + detail::to_string(den_);
  }

  double to_double() const { return static_cast<double>(num_) / static_cast<double>(den_); }

 private:
  void normalize() {
    if (den_ < 0) {
      num_ = detail::checked_sub(0, num_);
      den_ = detail::checked_sub(0, den_);
    }
    if (num_ == 0) {
      den_ = 1;
      return;
    }
    const Int128 g = detail::gcd128(num_, den_);
    num_ /= g;
    den_ /= g;
  }

  Int128 num_ = 0;
  Int128 den_ = 1;
};

inline std::ostream& operator<<(std::ostream& os, const Ratio& r) { return os << r.to_string(); }

struct UncertainFrequency {
  Frequency value;
  Frequency sigma;  // one standard deviation, never negative

  UncertainFrequency() = default;
  UncertainFrequency(Frequency v, Frequency s) : value(v), sigma(s) {
    if (s < Frequency{}) throw Error("negative uncertainty");
  }
  friend bool operator==(const UncertainFrequency&, const UncertainFrequency&) = default;
};

// ---------------------------------------------------------------------------
// Text format

namespace detail {

struct Unit {
  std::string_view suffix;
  int exponent;  // power of ten relative to Hz
};

inline constexpr Unit kUnits[] = {{"THz", 12}, {"GHz", 9}, {"MHz", 6}, {"kHz", 3}, {"Hz", 0}};

inline bool is_space(char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n'; }

}  // namespace detail

// Parses "[+-]digits[.digits] [unit]" with unit in Hz/kHz/MHz/GHz/THz (Hz if
// omitted). Trailing zeros past the 1 uHz resolution are accepted; any
// nonzero digit there is an error.
inline Frequency parse_frequency(std::string_view text) {
  std::size_t i = 0;
  const std::size_t n = text.size();
  while (i < n && detail::is_space(text[i])) ++i;
  bool negative = false;
  if (i < n && (text[i] == '+' || text[i] == '-')) {
    negative = text[i] == '-';
    ++i;
  }
  const std::size_t int_begin = i;
  while (i < n && text[i] >= '0' && text[i] <= '9') ++i;
  const std::string_view int_digits = text.substr(int_begin, i - int_begin);
  std::string_view frac_digits;
  if (i < n && text[i] == '.') {
    ++i;
    const std::size_t frac_begin = i;
    while (i < n && text[i] >= '0' && text[i] <= '9') ++i;
    frac_digits = text.substr(frac_begin, i - frac_begin);
    if (frac_digits.empty()) throw ParseError("frequency '" + std::string(text) + "': digits expected after '.'");
  }
  if (int_digits.empty()) throw ParseError("frequency '" + std::string(text) + "': digits expected");
  while (i < n && detail::is_space(text[i])) ++i;
  std::string_view rest = text.substr(i);
  while (!rest.empty() && detail::is_space(rest.back())) rest.remove_suffix(1);

  int exponent = 0;
  if (!rest.empty()) {
    bool found = false;
    for (const auto& u : detail::kUnits) {
      if (rest == u.suffix) {
        exponent = u.exponent;
        found = true;
        break;
      }
    }
    if (!found) throw ParseError("frequency '" + std::string(text) + "': unknown unit '" + std::string(rest) + "'");
  }

  const int scale = exponent + 6;  // decimal digits of tick resolution below the unit
  if (static_cast<int>(frac_digits.size()) > scale) {
    for (std::size_t k = scale; k < frac_digits.size(); ++k) {
      if (frac_digits[k] != '0')
        throw ParseError("frequency '" + std::string(text) + "': precision finer than 1 uHz");
    }
    frac_digits = frac_digits.substr(0, scale);
  }

  Int128 ticks = 0;
  for (char c : int_digits) ticks = detail::checked_add(detail::checked_mul(ticks, 10), c - '0');
  ticks = detail::checked_mul(ticks, detail::pow10(scale));
  Int128 frac = 0;
  for (char c : frac_digits) frac = detail::checked_add(detail::checked_mul(frac, 10), c - '0');
  frac = detail::checked_mul(frac, detail::pow10(scale - static_cast<int>(frac_digits.size())));
  ticks = detail::checked_add(ticks, frac);
  return Frequency::from_ticks(negative ? -ticks : ticks);
}

// Canonical form: "-12.5 Hz", "0 Hz", "88376182599976 Hz".
inline std::string format_frequency(Frequency f) {
  const Int128 t = f.ticks();
  const bool negative = t < 0;
  const UInt128 u = negative ? UInt128(0) - UInt128(t) : UInt128(t);
  std::string out = negative ? "-" : "";
  out += detail::to_string(static_cast<Int128>(u / 1'000'000));
  auto frac = static_cast<unsigned>(u % 1'000'000);
  if (frac != 0) {
    std::string digits = std::to_string(frac);
    digits.insert(0, 6 - digits.size(), '0');
    while (digits.back() == '0') digits.pop_back();
    out += "." + digits;
  }
  return out + " Hz";
}

// Decimal number of hertz without unit, trailing zeros kept to 6 places.
// Used for CSV columns.
inline std::string format_hz_fixed(Frequency f) {
  const Int128 t = f.ticks();
  const bool negative = t < 0;
  const UInt128 u = negative ? UInt128(0) - UInt128(t) : UInt128(t);
  std::string digits = std::to_string(static_cast<unsigned>(u % 1'000'000));
  digits.insert(0, 6 - digits.size(), '0');
  return (negative ? "-" : "") + detail::to_string(static_cast<Int128>(u / 1'000'000)) + "." + digits;
}

// Presentation rounding: value in the given unit with a fixed number of
// decimals, rounded half away from zero. grouped=true separates thousands in
// the integer part by spaces ("1 267 402 452 899.92 kHz").
inline std::string format_scaled(Frequency f, std::string_view unit, int decimals, bool grouped = false) {
  int exponent = -1;
  for (const auto& u : detail::kUnits) {
    if (u.suffix == unit) exponent = u.exponent;
  }
  if (exponent < 0) throw Error("unknown unit '" + std::string(unit) + "'");
  const int drop = exponent + 6 - decimals;
  if (drop < 0) throw Error("more decimals than tick resolution");
  const Int128 scaled = detail::round_div(f.ticks(), detail::pow10(drop));
  const bool negative = scaled < 0;
  const Int128 mag = detail::abs128(scaled);
  const Int128 p = detail::pow10(decimals);
  std::string whole = detail::to_string(mag / p);
  if (grouped) {
    for (int pos = static_cast<int>(whole.size()) - 3; pos > 0; pos -= 3) whole.insert(pos, " ");
  }
  std::string out = (negative ? "-" : "") + whole;
  if (decimals > 0) {
    std::string frac = detail::to_string(mag % p);
    frac.insert(0, decimals - frac.size(), '0');
    out += "." + frac;
  }
  return out + " " + std::string(unit);
}

inline std::ostream& operator<<(std::ostream& os, Frequency f) { return os << format_frequency(f); }

// ---------------------------------------------------------------------------
// Linear algebra on frequencies

// Exact f * r. Throws ExactnessError when the product is not a whole tick.
inline Frequency scale_exact(Frequency f, const Ratio& r) {
  const Int128 num = detail::checked_mul(f.ticks(), r.num());
  if (num % r.den() != 0) {
    throw ExactnessError("scaling " + format_frequency(f) + " by " + r.to_string() +
                         " is not an integral number of uHz");
  }
  return Frequency::from_ticks(num / r.den());
}

struct Term {
  Ratio coefficient;
  Frequency value;
};

inline Frequency linear_combine(std::span<const Term> terms) {
  Frequency sum;
  for (const auto& t : terms) sum += scale_exact(t.value, t.coefficient);
  return sum;
}

inline Frequency linear_combine(std::initializer_list<Term> terms) {
  return linear_combine(std::span<const Term>(terms.begin(), terms.size()));
}

// round(sqrt(S)) half up, for an exact rational sum of squares S = P/Q in
// squared ticks. Largest k with (k - 1/2)^2 <= S, i.e. (2k-1)^2 <= floor(4S).
inline Frequency sqrt_rounded(const Ratio& sum_of_squares) {
  if (sum_of_squares < Ratio(0)) throw Error("negative sum of squares");
  const Int128 four_s = detail::checked_mul(sum_of_squares.num(), 4) / sum_of_squares.den();
  const UInt128 m = detail::isqrt(static_cast<UInt128>(four_s));
  return Frequency::from_ticks(static_cast<Int128>((m + 1) / 2));
}

// Root-sum-square of standard uncertainties, rounded half up to the tick.
inline Frequency quadrature(std::span<const Frequency> sigmas) {
  Int128 sum = 0;
  for (Frequency s : sigmas) {
    if (s < Frequency{}) throw Error("negative uncertainty in quadrature");
    sum = detail::checked_add(sum, detail::checked_mul(s.ticks(), s.ticks()));
  }
  return sqrt_rounded(Ratio(sum));
}

inline Frequency quadrature(std::initializer_list<Frequency> sigmas) {
  return quadrature(std::span<const Frequency>(sigmas.begin(), sigmas.size()));
}

}  // namespace freqchain
