#pragma once

#include <algorithm>
#include <cstddef>
#include <map>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "subgrad/rational.hpp"

namespace subgrad {

/// Thrown when symbolic piece extraction exceeds its configured bounds.
struct ExtractionLimitError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Sparse multivariate polynomial with exact rational coefficients.
/// Variables are 0-based; an exponent vector has one entry per variable.
/// Zero coefficients are never stored.
class Polynomial {
 public:
  using Exponents = std::vector<unsigned>;
  using TermMap = std::map<Exponents, Rational>;

  Polynomial() = default;
  explicit Polynomial(int n_vars) : n_vars_(n_vars) {}

  static Polynomial constant(int n_vars, Rational c) {
    Polynomial p(n_vars);
    if (c != 0) p.terms_[Exponents(static_cast<std::size_t>(n_vars), 0u)] = std::move(c);
    return p;
  }

  static Polynomial variable(int n_vars, int var) {
    Polynomial p(n_vars);
    Exponents e(static_cast<std::size_t>(n_vars), 0u);
    e.at(static_cast<std::size_t>(var)) = 1u;
    p.terms_[std::move(e)] = 1;
    return p;
  }

  int num_vars() const { return n_vars_; }
  bool is_zero() const { return terms_.empty(); }
  std::size_t term_count() const { return terms_.size(); }
  const TermMap& terms() const { return terms_; }

  unsigned total_degree() const {
    unsigned d = 0;
    for (const auto& [e, c] : terms_) {
      unsigned t = 0;
      for (unsigned k : e) t += k;
      d = std::max(d, t);
    }
    return d;
  }

  void add_term(const Exponents& e, const Rational& c) {
    if (c == 0) return;
    auto it = terms_.find(e);
    if (it == terms_.end()) {
      terms_.emplace(e, c);
    } else {
      it->second += c;
      if (it->second == 0) terms_.erase(it);
    }
  }

  Polynomial& operator+=(const Polynomial& o) {
    check_same_vars(o);
    for (const auto& [e, c] : o.terms_) add_term(e, c);
    return *this;
  }

  Polynomial& operator-=(const Polynomial& o) {
    check_same_vars(o);
    for (const auto& [e, c] : o.terms_) add_term(e, -c);
    return *this;
  }

  friend Polynomial operator+(Polynomial a, const Polynomial& b) { return a += b; }
  friend Polynomial operator-(Polynomial a, const Polynomial& b) { return a -= b; }

  friend Polynomial operator*(const Polynomial& a, const Polynomial& b) {
    a.check_same_vars(b);
    Polynomial r(a.n_vars_);
    for (const auto& [ea, ca] : a.terms_) {
      for (const auto& [eb, cb] : b.terms_) {
        Exponents e(ea);
        for (std::size_t i = 0; i < e.size(); ++i) e[i] += eb[i];
        r.add_term(e, ca * cb);
      }
    }
    return r;
  }

  Polynomial& operator*=(const Polynomial& o) { return *this = *this * o; }

  Polynomial& scale(const Rational& c) {
    if (c == 0) {
      terms_.clear();
      return *this;
    }
    for (auto& [e, coef] : terms_) coef *= c;
    return *this;
  }

  friend Polynomial operator-(Polynomial a) { return a.scale(-1); }

  Polynomial pow(unsigned e) const {
    Polynomial r = constant(n_vars_, 1);
    Polynomial b = *this;
    while (e > 0) {
      if (e & 1u) r *= b;
      e >>= 1u;
      if (e > 0) b *= b;
    }
    return r;
  }

  Polynomial derivative(int var) const {
    Polynomial r(n_vars_);
    const auto v = static_cast<std::size_t>(var);
    for (const auto& [e, c] : terms_) {
      if (e[v] == 0) continue;
      Exponents d(e);
      --d[v];
      r.add_term(d, c * static_cast<long>(e[v]));
    }
    return r;
  }

  std::vector<Polynomial> gradient() const {
    std::vector<Polynomial> g;
    g.reserve(static_cast<std::size_t>(n_vars_));
    for (int i = 0; i < n_vars_; ++i) g.push_back(derivative(i));
    return g;
  }

  /// Composition: substitute args[i] for variable i. All args must share a
  /// common variable space, which becomes the result's space.
  Polynomial substitute(std::span<const Polynomial> args, std::size_t max_terms = 0) const {
    if (args.size() != static_cast<std::size_t>(n_vars_))
      throw std::invalid_argument("substitute: wrong argument count");
    const int out_vars = args.empty() ? 0 : args[0].num_vars();
    Polynomial r(out_vars);
    for (const auto& [e, c] : terms_) {
      Polynomial t = constant(out_vars, c);
      for (std::size_t i = 0; i < e.size(); ++i) {
        if (e[i] == 0) continue;
        t *= args[i].pow(e[i]);
        if (max_terms && t.term_count() > max_terms)
          throw ExtractionLimitError("polynomial term limit exceeded during composition");
      }
      r += t;
      if (max_terms && r.term_count() > max_terms)
        throw ExtractionLimitError("polynomial term limit exceeded during composition");
    }
    return r;
  }

  template <class S>
  S evaluate(std::span<const S> x) const {
    if (x.size() != static_cast<std::size_t>(n_vars_))
      throw std::invalid_argument("evaluate: wrong point dimension");
    S acc = S(0);
    for (const auto& [e, c] : terms_) {
      S t = coefficient_as<S>(c);
      for (std::size_t i = 0; i < e.size(); ++i)
        for (unsigned k = 0; k < e[i]; ++k) t = t * x[i];
      acc = acc + t;
    }
    return acc;
  }

  Rational evaluate_exact(std::span<const Rational> x) const { return evaluate<Rational>(x); }

  friend bool operator==(const Polynomial& a, const Polynomial& b) {
    return a.n_vars_ == b.n_vars_ && a.terms_ == b.terms_;
  }

  std::string to_string(const std::string& var_prefix = "x") const {
    if (terms_.empty()) return "0";
    std::ostringstream os;
    bool first = true;
    for (const auto& [e, c] : terms_) {
      Rational a = c;
      if (first) {
        if (a < 0) {
          os << "-";
          a = -a;
        }
      } else {
        os << (a < 0 ? " - " : " + ");
        if (a < 0) a = -a;
      }
      first = false;
      bool unit = a == 1;
      bool any_var = false;
      for (unsigned k : e) any_var = any_var || k > 0;
      if (!unit || !any_var) os << a.get_str();
      bool need_star = !unit || !any_var;
      for (std::size_t i = 0; i < e.size(); ++i) {
        if (e[i] == 0) continue;
        if (need_star) os << "*";
        os << var_prefix << (i + 1);
        if (e[i] > 1) os << "^" << e[i];
        need_star = true;
      }
    }
    return os.str();
  }

 private:
  template <class S>
  static S coefficient_as(const Rational& c) {
    if constexpr (std::is_same_v<S, Rational>)
      return c;
    else
      return static_cast<S>(to_double(c));
  }

  void check_same_vars(const Polynomial& o) const {
    if (n_vars_ != o.n_vars_) throw std::invalid_argument("polynomial variable-count mismatch");
  }

  int n_vars_ = 0;
  TermMap terms_;
};

/// Coefficients of h(x + delta*v) as a dense univariate polynomial in delta,
/// lowest degree first. Exact.
inline std::vector<Rational> delta_expansion(const Polynomial& h, std::span<const Rational> x,
                                             std::span<const Rational> v) {
  if (x.size() != static_cast<std::size_t>(h.num_vars()) || v.size() != x.size())
    throw std::invalid_argument("delta_expansion: dimension mismatch");
  std::vector<Rational> out(1, Rational(0));
  std::vector<Rational> acc, next;
  for (const auto& [e, c] : h.terms()) {
    acc.assign(1, c);
    for (std::size_t i = 0; i < e.size(); ++i) {
      for (unsigned k = 0; k < e[i]; ++k) {
        // multiply acc by (x_i + delta*v_i)
        next.assign(acc.size() + 1, Rational(0));
        for (std::size_t j = 0; j < acc.size(); ++j) {
          next[j] += acc[j] * x[i];
          next[j + 1] += acc[j] * v[i];
        }
        acc.swap(next);
      }
    }
    if (acc.size() > out.size()) out.resize(acc.size(), Rational(0));
    for (std::size_t j = 0; j < acc.size(); ++j) out[j] += acc[j];
  }
  return out;
}

/// lim_{delta->0+} sign(h(x + delta*v)), computed exactly as the sign of the
/// lowest-order nonzero coefficient of the delta expansion; +1 if h vanishes
/// identically along the ray (sign(0)=+1 convention).
inline int limiting_sign(const Polynomial& h, std::span<const Rational> x,
                         std::span<const Rational> v) {
  const auto coeffs = delta_expansion(h, x, v);
  for (const auto& c : coeffs)
    if (c != 0) return sign_of(c);
  return +1;
}

}  // namespace subgrad
