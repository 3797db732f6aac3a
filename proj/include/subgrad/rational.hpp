#pragma once

#include <gmpxx.h>

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace subgrad {

/// Exact rational scalar used by the symbolic oracles and for exact replay
/// of the engine. Evaluation defaults to double; anything that decides a
/// branch or a piece exactly runs on Rational.
using Rational = mpq_class;

inline int sign_of(const Rational& q) { return sgn(q); }

inline double to_double(const Rational& q) { return q.get_d(); }

/// Exact: every finite double is a dyadic rational.
inline Rational rational_from_double(double x) { return Rational(x); }

/// mpq_class(num, den) keeps the fraction as given; equality and ordering
/// assume canonical form, so always reduce on construction.
inline Rational make_rational(long num, long den) {
  Rational q(num, den);
  q.canonicalize();
  return q;
}

inline Rational pow_rational(const Rational& base, unsigned e) {
  Rational r(1);
  Rational b = base;
  while (e > 0) {
    if (e & 1u) r *= b;
    e >>= 1u;
    if (e > 0) b *= b;
  }
  return r;
}

/// Accepts integers ("-3"), fractions ("5/8"), decimals ("1.25"), and
/// scientific decimals ("2.5e-3"); all parsed exactly.
inline std::optional<Rational> parse_rational(std::string_view text) {
  if (text.empty()) return std::nullopt;
  std::size_t i = 0;
  bool negative = false;
  if (text[i] == '+' || text[i] == '-') {
    negative = text[i] == '-';
    ++i;
  }
  std::string digits;      // integer+fraction digits, implicit scale
  long frac_digits = 0;    // digits after the decimal point
  bool any_digit = false, seen_dot = false;
  for (; i < text.size(); ++i) {
    char c = text[i];
    if (c >= '0' && c <= '9') {
      digits.push_back(c);
      any_digit = true;
      if (seen_dot) ++frac_digits;
    } else if (c == '.' && !seen_dot) {
      seen_dot = true;
    } else {
      break;
    }
  }
  if (!any_digit) return std::nullopt;

  long exp10 = -frac_digits;
  if (i < text.size() && (text[i] == 'e' || text[i] == 'E')) {
    ++i;
    bool eneg = false;
    if (i < text.size() && (text[i] == '+' || text[i] == '-')) {
      eneg = text[i] == '-';
      ++i;
    }
    if (i >= text.size()) return std::nullopt;
    long e = 0;
    for (; i < text.size(); ++i) {
      if (text[i] < '0' || text[i] > '9') return std::nullopt;
      e = e * 10 + (text[i] - '0');
      if (e > 4096) return std::nullopt;
    }
    exp10 += eneg ? -e : e;
  } else if (i < text.size() && text[i] == '/') {
    if (seen_dot) return std::nullopt;
    std::string_view den = text.substr(i + 1);
    if (den.empty()) return std::nullopt;
    for (char c : den)
      if (c < '0' || c > '9') return std::nullopt;
    mpz_class num(digits, 10);
    mpz_class d(std::string(den), 10);
    if (d == 0) return std::nullopt;
    Rational q(num, d);
    q.canonicalize();
    return negative ? Rational(-q) : q;
  }
  if (i != text.size()) return std::nullopt;

  Rational q{mpz_class(digits, 10)};
  if (exp10 > 0) {
    mpz_class p;
    mpz_ui_pow_ui(p.get_mpz_t(), 10u, static_cast<unsigned long>(exp10));
    q *= Rational(p);
  } else if (exp10 < 0) {
    mpz_class p;
    mpz_ui_pow_ui(p.get_mpz_t(), 10u, static_cast<unsigned long>(-exp10));
    q /= Rational(p);
  }
  return negative ? Rational(-q) : q;
}

inline std::string to_string(const Rational& q) { return q.get_str(); }

inline std::vector<double> to_double_vec(std::span<const Rational> xs) {
  std::vector<double> out;
  out.reserve(xs.size());
  for (const auto& x : xs) out.push_back(to_double(x));
  return out;
}

inline std::vector<Rational> to_rational_vec(std::span<const double> xs) {
  std::vector<Rational> out;
  out.reserve(xs.size());
  for (double x : xs) out.push_back(rational_from_double(x));
  return out;
}

}  // namespace subgrad
