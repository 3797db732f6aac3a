#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <utility>
#include <variant>
#include <vector>

#include "subgrad/meter.hpp"
#include "subgrad/polynomial.hpp"
#include "subgrad/rational.hpp"

namespace subgrad {

/// A literal parsed once and carried in both worlds: exact for rational
/// replay and the symbolic oracles, double for ordinary evaluation.
struct Coefficient {
  Rational exact;
  double value = 0.0;

  Coefficient() : exact(0) {}
  Coefficient(Rational q) : exact(std::move(q)), value(to_double(exact)) {}
  Coefficient(long n) : exact(n), value(static_cast<double>(n)) {}
  Coefficient(int n) : Coefficient(static_cast<long>(n)) {}
};

template <class S>
inline S coeff_cast(const Coefficient& c) {
  if constexpr (std::is_same_v<S, Rational>)
    return c.exact;
  else
    return S(c.value);
}

/// x_k = c0 + sum_i c_i * x_{node_i}. May have zero terms (a constant).
struct AffineInstr {
  Coefficient constant;
  std::vector<std::pair<Coefficient, int>> terms;  // (coefficient, node)
};

/// x_k = c * prod_i x_{node_i}^{e_i}, exponents >= 1, nodes distinct.
struct MonomialInstr {
  Coefficient coefficient;
  std::vector<std::pair<int, unsigned>> factors;  // (node, exponent)
};

/// x_k = f(x_{args...}) for a registered branching library function.
struct LibCallInstr {
  std::string function;
  std::vector<int> args;
};

using Instruction = std::variant<AffineInstr, MonomialInstr, LibCallInstr>;

inline std::vector<int> instruction_parents(const Instruction& instr) {
  std::vector<int> out;
  std::visit(
      [&](const auto& op) {
        using T = std::decay_t<decltype(op)>;
        if constexpr (std::is_same_v<T, AffineInstr>) {
          for (const auto& [c, n] : op.terms) out.push_back(n);
        } else if constexpr (std::is_same_v<T, MonomialInstr>) {
          for (const auto& [n, e] : op.factors) out.push_back(n);
        } else {
          out = op.args;
        }
      },
      instr);
  return out;
}

inline unsigned monomial_total_degree(const MonomialInstr& m) {
  unsigned d = 0;
  for (const auto& [n, e] : m.factors) d += e;
  return d;
}

/// Straight-line SSA program: nodes 1..d are the inputs, instruction i
/// defines node d+1+i, and `output` names the returned node.
struct ProgramDef {
  int input_arity = 0;
  std::vector<Instruction> instructions;
  int output = 0;

  int node_of(std::size_t instr_index) const {
    return input_arity + 1 + static_cast<int>(instr_index);
  }
  int node_count() const { return input_arity + static_cast<int>(instructions.size()); }
};

// ---- shared instruction semantics --------------------------------------
//
// GetVal is any callable int (1-based node) -> S. Charging follows the unit
// cost model: affine with t terms costs t muls + t adds; a monomial of total
// degree E costs E-1 muls, plus one more if its coefficient is not 1.

template <class S, class GetVal>
S eval_affine(const AffineInstr& a, GetVal&& val, CostMeter& meter) {
  S acc = coeff_cast<S>(a.constant);
  for (const auto& [c, n] : a.terms) acc = acc + coeff_cast<S>(c) * val(n);
  meter.multiplications += static_cast<std::int64_t>(a.terms.size());
  meter.additions += static_cast<std::int64_t>(a.terms.size());
  return acc;
}

template <class S, class GetVal>
S eval_monomial(const MonomialInstr& m, GetVal&& val, CostMeter& meter) {
  S acc = coeff_cast<S>(m.coefficient);
  unsigned degree = 0;
  for (const auto& [n, e] : m.factors) {
    degree += e;
    const S x = val(n);
    for (unsigned k = 0; k < e; ++k) acc = acc * x;
  }
  if (degree >= 1) {
    meter.multiplications += static_cast<std::int64_t>(degree) - 1;
    if (m.coefficient.exact != 1) meter.multiplications += 1;
  }
  return acc;
}

/// Local partial derivatives of an affine/monomial instruction with respect
/// to each (distinct) parent, evaluated at the parents' current values.
/// Computing these is not charged to the meter; the dual and reverse passes
/// have their own pinned charging rules.
template <class S, class GetVal>
std::vector<std::pair<int, S>> instr_partials(const Instruction& instr, GetVal&& val) {
  std::vector<std::pair<int, S>> out;
  if (const auto* a = std::get_if<AffineInstr>(&instr)) {
    out.reserve(a->terms.size());
    for (const auto& [c, n] : a->terms) out.emplace_back(n, coeff_cast<S>(c));
  } else if (const auto* m = std::get_if<MonomialInstr>(&instr)) {
    out.reserve(m->factors.size());
    for (std::size_t j = 0; j < m->factors.size(); ++j) {
      const auto [nj, ej] = m->factors[j];
      S p = coeff_cast<S>(m->coefficient) * S(static_cast<long>(ej));
      const S xj = val(nj);
      for (unsigned k = 0; k + 1 < ej; ++k) p = p * xj;
      for (std::size_t i = 0; i < m->factors.size(); ++i) {
        if (i == j) continue;
        const auto [ni, ei] = m->factors[i];
        const S xi = val(ni);
        for (unsigned k = 0; k < ei; ++k) p = p * xi;
      }
      out.emplace_back(nj, std::move(p));
    }
  } else {
    throw std::logic_error("instr_partials: library calls have no local closed form");
  }
  return out;
}

/// Symbolic expansion of an affine/monomial instruction over per-node
/// polynomials in the program inputs.
template <class GetPoly>
Polynomial instr_polynomial(const Instruction& instr, int n_inputs, GetPoly&& poly,
                            std::size_t max_terms = 0) {
  if (const auto* a = std::get_if<AffineInstr>(&instr)) {
    Polynomial acc = Polynomial::constant(n_inputs, a->constant.exact);
    for (const auto& [c, n] : a->terms) {
      Polynomial t = poly(n);
      t.scale(c.exact);
      acc += t;
      if (max_terms && acc.term_count() > max_terms)
        throw ExtractionLimitError("polynomial term limit exceeded");
    }
    return acc;
  }
  if (const auto* m = std::get_if<MonomialInstr>(&instr)) {
    Polynomial acc = Polynomial::constant(n_inputs, m->coefficient.exact);
    for (const auto& [n, e] : m->factors) {
      acc *= poly(n).pow(e);
      if (max_terms && acc.term_count() > max_terms)
        throw ExtractionLimitError("polynomial term limit exceeded");
    }
    return acc;
  }
  throw std::logic_error("instr_polynomial: library call must be expanded by the caller");
}

}  // namespace subgrad
