#pragma once

#include <algorithm>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "subgrad/branch_program.hpp"
#include "subgrad/polynomial.hpp"
#include "subgrad/program.hpp"

namespace subgrad {

struct LibraryFunction {
  std::string name;
  int arity = 0;
  std::shared_ptr<const BranchProgram> program;
  bool claims_qualified = true;
};

class LibraryRegistry {
 public:
  void add(LibraryFunction fn) {
    if (!fn.program) throw std::invalid_argument("library function needs a program");
    if (fn.program->input_arity() != fn.arity)
      throw std::invalid_argument("library function arity does not match its program");
    auto [it, inserted] = fns_.emplace(fn.name, std::move(fn));
    if (!inserted) throw std::invalid_argument("duplicate library function: " + it->first);
  }

  const LibraryFunction* find(const std::string& name) const {
    auto it = fns_.find(name);
    return it == fns_.end() ? nullptr : &it->second;
  }

  const LibraryFunction& at(const std::string& name) const {
    const auto* fn = find(name);
    if (!fn) throw std::out_of_range("unknown library function: " + name);
    return *fn;
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(fns_.size());
    for (const auto& [k, v] : fns_) out.push_back(k);
    return out;
  }

 private:
  std::map<std::string, LibraryFunction> fns_;
};

// ---- builtin branch programs --------------------------------------------

namespace detail {

inline Instruction identity_of(int node) {
  return AffineInstr{Coefficient(0), {{Coefficient(1), node}}};
}

inline Instruction constant_of(Rational c) { return AffineInstr{Coefficient(std::move(c)), {}}; }

/// Emits a straight-line tail computing the univariate polynomial p(x1) and
/// returning it: one monomial node per nonconstant term, then one affine
/// combine node. `next_index` is the first free node index on this path.
inline BranchProgram::StepPtr emit_univariate_tail(const Polynomial& p, int next_index) {
  std::vector<std::pair<Coefficient, int>> terms;
  Coefficient c0(0);
  std::vector<std::pair<Instruction, int>> monos;  // (instr, node)
  int idx = next_index;
  for (const auto& [e, c] : p.terms()) {
    if (e[0] == 0) {
      c0 = Coefficient(c);
    } else {
      monos.emplace_back(MonomialInstr{Coefficient(1), {{1, e[0]}}}, idx);
      terms.emplace_back(Coefficient(c), idx);
      ++idx;
    }
  }
  auto step = make_compute(idx, AffineInstr{std::move(c0), std::move(terms)}, make_return(idx));
  for (auto it = monos.rbegin(); it != monos.rend(); ++it)
    step = make_compute(it->second, std::move(it->first), std::move(step));
  return step;
}

}  // namespace detail

/// Constraint-qualified ladder for a continuous univariate piecewise
/// polynomial: test b_i - x >= 0 in order, evaluate the selected piece.
/// Breakpoints must be strictly increasing and adjacent pieces must agree at
/// them (checked exactly); a discontinuity is rejected.
inline LibraryFunction make_piecewise_poly(std::string name, std::vector<Rational> breakpoints,
                                           std::vector<Polynomial> pieces) {
  if (pieces.empty()) throw std::invalid_argument("piecewise function needs at least one piece");
  if (breakpoints.size() + 1 != pieces.size())
    throw std::invalid_argument("piecewise function needs one more piece than breakpoints");
  for (const auto& p : pieces)
    if (p.num_vars() != 1) throw std::invalid_argument("pieces must be univariate");
  for (std::size_t i = 0; i + 1 < breakpoints.size(); ++i)
    if (!(breakpoints[i] < breakpoints[i + 1]))
      throw std::invalid_argument("breakpoints must be strictly increasing");
  for (std::size_t i = 0; i < breakpoints.size(); ++i) {
    std::span<const Rational> at(&breakpoints[i], 1);
    if (pieces[i].evaluate_exact(at) != pieces[i + 1].evaluate_exact(at)) {
      std::ostringstream os;
      os << "discontinuity at breakpoint " << to_string(breakpoints[i]) << ": "
         << pieces[i].to_string() << " vs " << pieces[i + 1].to_string();
      throw std::invalid_argument(os.str());
    }
  }

  // Build the ladder back to front. Each test node b_i - x extends the
  // shared prefix; piece tails are numbered per path.
  const int k = static_cast<int>(pieces.size());
  BranchProgram::StepPtr tail = detail::emit_univariate_tail(pieces.back(), 1 + k);
  for (int i = k - 2; i >= 0; --i) {
    const int test_node = 2 + i;
    auto then_tail = detail::emit_univariate_tail(pieces[static_cast<std::size_t>(i)],
                                                  test_node + 1);
    Instruction test = AffineInstr{Coefficient(breakpoints[static_cast<std::size_t>(i)]),
                                   {{Coefficient(-1), 1}}};
    tail = make_compute(test_node, std::move(test),
                        make_branch(test_node, std::move(then_tail), std::move(tail)));
  }
  return LibraryFunction{std::move(name), 1,
                         std::make_shared<const BranchProgram>(1, std::move(tail)), true};
}

inline LibraryRegistry builtin_registry() {
  LibraryRegistry reg;

  // relu: branch on x1 itself; x >= 0 returns x, else 0.
  {
    auto then_side = make_compute(2, detail::identity_of(1), make_return(2));
    auto else_side = make_compute(2, detail::constant_of(0), make_return(2));
    auto root = make_branch(1, std::move(then_side), std::move(else_side));
    reg.add({"relu", 1, std::make_shared<const BranchProgram>(1, std::move(root)), true});
  }

  // relu_bad: same values, but the test polynomial is x^3, whose gradient
  // vanishes at the kink. Deliberately violates constraint qualification.
  {
    auto then_side = make_compute(3, detail::identity_of(1), make_return(3));
    auto else_side = make_compute(3, detail::constant_of(0), make_return(3));
    auto root = make_compute(2, MonomialInstr{Coefficient(1), {{1, 3u}}},
                             make_branch(2, std::move(then_side), std::move(else_side)));
    reg.add({"relu_bad", 1, std::make_shared<const BranchProgram>(1, std::move(root)), false});
  }

  // abs: x >= 0 returns x, else -x.
  {
    auto then_side = make_compute(2, detail::identity_of(1), make_return(2));
    auto else_side = make_compute(
        2, AffineInstr{Coefficient(0), {{Coefficient(-1), 1}}}, make_return(2));
    auto root = make_branch(1, std::move(then_side), std::move(else_side));
    reg.add({"abs", 1, std::make_shared<const BranchProgram>(1, std::move(root)), true});
  }

  // max2/min2: one affine test x - y; each side returns an input directly.
  {
    Instruction diff = AffineInstr{Coefficient(0), {{Coefficient(1), 1}, {Coefficient(-1), 2}}};
    auto root = make_compute(3, diff, make_branch(3, make_return(1), make_return(2)));
    reg.add({"max2", 2, std::make_shared<const BranchProgram>(2, std::move(root)), true});
  }
  {
    Instruction diff = AffineInstr{Coefficient(0), {{Coefficient(1), 1}, {Coefficient(-1), 2}}};
    auto root = make_compute(3, diff, make_branch(3, make_return(2), make_return(1)));
    reg.add({"min2", 2, std::make_shared<const BranchProgram>(2, std::move(root)), true});
  }

  return reg;
}

// ---- validation ----------------------------------------------------------

struct ValidationReport {
  std::vector<std::string> violations;
  bool ok() const { return violations.empty(); }
};

inline ValidationReport validate(const ProgramDef& prog, const LibraryRegistry& lib) {
  ValidationReport report;
  auto complain = [&](std::string msg) { report.violations.push_back(std::move(msg)); };

  if (prog.input_arity < 1) complain("program needs at least one input");
  for (std::size_t i = 0; i < prog.instructions.size(); ++i) {
    const int node = prog.node_of(i);
    const Instruction& instr = prog.instructions[i];
    std::vector<int> seen;
    for (int p : instruction_parents(instr)) {
      if (p < 1) {
        complain("node index below 1 at node " + std::to_string(node));
      } else if (p >= node) {
        complain("forward reference at node " + std::to_string(node));
      }
    }
    if (const auto* a = std::get_if<AffineInstr>(&instr)) {
      for (const auto& [c, n] : a->terms) {
        if (std::find(seen.begin(), seen.end(), n) != seen.end())
          complain("duplicate parent " + std::to_string(n) + " at node " + std::to_string(node));
        seen.push_back(n);
      }
    } else if (const auto* m = std::get_if<MonomialInstr>(&instr)) {
      for (const auto& [n, e] : m->factors) {
        if (e < 1) complain("monomial exponent below 1 at node " + std::to_string(node));
        if (std::find(seen.begin(), seen.end(), n) != seen.end())
          complain("duplicate parent " + std::to_string(n) + " at node " + std::to_string(node));
        seen.push_back(n);
      }
    } else if (const auto* call = std::get_if<LibCallInstr>(&instr)) {
      const LibraryFunction* fn = lib.find(call->function);
      if (!fn) {
        complain("unknown library name '" + call->function + "' at node " + std::to_string(node));
      } else if (static_cast<int>(call->args.size()) != fn->arity) {
        complain("arity mismatch at node " + std::to_string(node) + ": " + call->function +
                 " expects " + std::to_string(fn->arity) + " argument(s), got " +
                 std::to_string(call->args.size()));
      }
    }
  }
  if (prog.output < 1 || prog.output > prog.node_count())
    complain("undefined output node " + std::to_string(prog.output));
  return report;
}

// ---- constraint-qualification diagnostic ---------------------------------

struct CqWitness {
  BranchTrace piece;
  Polynomial constraint;
  int limit_sign = 0;        // lim sign(h(x + dv))
  int first_order_sign = 0;  // lim sign(h(x) + d * grad h(x) . v)
  std::vector<Rational> x, v;

  std::string describe() const {
    std::ostringstream os;
    os << "constraint " << constraint.to_string() << " on piece '" << piece.to_string()
       << "': limiting sign " << limit_sign << " vs first-order sign " << first_order_sign
       << " at x=(";
    for (std::size_t i = 0; i < x.size(); ++i) os << (i ? "," : "") << to_string(x[i]);
    os << "), v=(";
    for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << to_string(v[i]);
    os << ")";
    return os.str();
  }
};

struct CqResult {
  enum class Status { pass, fail, inconclusive };
  Status status = Status::pass;
  std::optional<CqWitness> witness;
  std::string note;

  bool passed() const { return status == Status::pass; }
};

/// Exact check of the constraint-qualification identity at one (x, v): for
/// every constraint polynomial h of every piece, the limiting sign along v
/// must equal the sign predicted by first-order information alone
/// (sign(h(x)) off the zero set, else sign(grad h(x) . v), else +1).
inline CqResult cq_diagnostic(const LibraryFunction& g, std::span<const Rational> x,
                              std::span<const Rational> v, const ExtractLimits& limits = {}) {
  std::vector<PieceDescription> pieces;
  try {
    pieces = extract_pieces(*g.program, limits);
  } catch (const ExtractionLimitError& e) {
    return {CqResult::Status::inconclusive, std::nullopt, e.what()};
  }
  for (const auto& piece : pieces) {
    for (const auto& [h, s] : piece.constraints) {
      const int lhs = limiting_sign(h, x, v);
      int rhs;
      const Rational hx = h.evaluate_exact(x);
      if (hx != 0) {
        rhs = sign_of(hx);
      } else {
        Rational dir(0);
        for (int i = 0; i < h.num_vars(); ++i)
          dir += h.derivative(i).evaluate_exact(x) * v[static_cast<std::size_t>(i)];
        rhs = dir != 0 ? sign_of(dir) : +1;
      }
      if (lhs != rhs) {
        CqWitness w{piece.z, h, lhs, rhs,
                    std::vector<Rational>(x.begin(), x.end()),
                    std::vector<Rational>(v.begin(), v.end())};
        return {CqResult::Status::fail, std::move(w), {}};
      }
    }
  }
  return {CqResult::Status::pass, std::nullopt, {}};
}

}  // namespace subgrad
