#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "subgrad/meter.hpp"
#include "subgrad/polynomial.hpp"
#include "subgrad/program.hpp"

namespace subgrad {

/// The +-1 word recording which side each encountered sign test took.
struct BranchTrace {
  std::vector<std::int8_t> signs;

  void push(int s) { signs.push_back(static_cast<std::int8_t>(s)); }
  std::size_t size() const { return signs.size(); }
  bool operator==(const BranchTrace&) const = default;
  bool operator<(const BranchTrace& o) const { return signs < o.signs; }

  std::string to_string() const {
    std::string s;
    s.reserve(signs.size());
    for (auto z : signs) s.push_back(z > 0 ? '+' : '-');
    return s;
  }
};

/// Decision-tree program for one library function. Every root-to-leaf path
/// is a straight-line SSA program over the function's inputs; internal
/// branch steps test the sign of an already-defined node (>= 0 takes the
/// "then" side, matching the sign(0)=+1 convention).
class BranchProgram {
 public:
  struct Step;
  using StepPtr = std::shared_ptr<const Step>;

  struct Compute {
    int index = 0;  // node this step defines
    Instruction instr;
    StepPtr next;
  };
  struct Branch {
    int test = 0;  // node whose sign is inspected (the most recently defined)
    StepPtr nonneg;
    StepPtr neg;
  };
  struct Return {
    int index = 0;
  };

  struct Step {
    std::variant<Compute, Branch, Return> op;
  };

  BranchProgram(int input_arity, StepPtr root)
      : input_arity_(input_arity), root_(std::move(root)) {
    if (input_arity_ < 1) throw std::invalid_argument("branch program needs at least one input");
    if (!root_) throw std::invalid_argument("branch program needs a body");
    Stats s{};
    collect(*root_, input_arity_, s);
    branch_count_ = s.branches;
    max_steps_ = s.max_depth;
  }

  int input_arity() const { return input_arity_; }
  const Step& root() const { return *root_; }
  int branch_count() const { return branch_count_; }
  /// Bounded-halting step bound T: the longest root-to-leaf step count.
  int max_steps() const { return max_steps_; }

 private:
  struct Stats {
    int branches = 0;
    int max_depth = 0;
  };

  // Validates per-path SSA while measuring the tree.
  static void collect(const Step& step, int last_defined, Stats& s, int depth = 1) {
    s.max_depth = std::max(s.max_depth, depth);
    if (const auto* c = std::get_if<Compute>(&step.op)) {
      if (c->index != last_defined + 1)
        throw std::invalid_argument("branch program path must define consecutive node indices");
      if (std::holds_alternative<LibCallInstr>(c->instr))
        throw std::invalid_argument("library function bodies admit only affine and monomial steps");
      for (int p : instruction_parents(c->instr))
        if (p < 1 || p > last_defined)
          throw std::invalid_argument("branch program instruction reads an undefined node");
      if (!c->next) throw std::invalid_argument("compute step must continue");
      collect(*c->next, c->index, s, depth + 1);
    } else if (const auto* b = std::get_if<Branch>(&step.op)) {
      if (b->test != last_defined)
        throw std::invalid_argument("branch must test the most recently defined node");
      if (!b->nonneg || !b->neg) throw std::invalid_argument("branch needs both sides");
      ++s.branches;
      collect(*b->nonneg, last_defined, s, depth + 1);
      collect(*b->neg, last_defined, s, depth + 1);
    } else {
      const auto& r = std::get<Return>(step.op);
      if (r.index < 1 || r.index > last_defined)
        throw std::invalid_argument("return of an undefined node");
    }
  }

  int input_arity_;
  StepPtr root_;
  int branch_count_ = 0;
  int max_steps_ = 0;
};

inline BranchProgram::StepPtr make_return(int index) {
  return std::make_shared<const BranchProgram::Step>(
      BranchProgram::Step{BranchProgram::Return{index}});
}

inline BranchProgram::StepPtr make_compute(int index, Instruction instr,
                                           BranchProgram::StepPtr next) {
  return std::make_shared<const BranchProgram::Step>(
      BranchProgram::Step{BranchProgram::Compute{index, std::move(instr), std::move(next)}});
}

inline BranchProgram::StepPtr make_branch(int test, BranchProgram::StepPtr nonneg,
                                          BranchProgram::StepPtr neg) {
  return std::make_shared<const BranchProgram::Step>(
      BranchProgram::Step{BranchProgram::Branch{test, std::move(nonneg), std::move(neg)}});
}

template <class S>
struct BranchEvalResult {
  S value;
  BranchTrace trace;
};

/// Deterministic evaluation under the sign(0)=+1 tie rule. One branch-test
/// unit is charged per sign test.
template <class S>
BranchEvalResult<S> evaluate_branch(const BranchProgram& bp, std::span<const S> x,
                                    CostMeter& meter) {
  if (x.size() != static_cast<std::size_t>(bp.input_arity()))
    throw std::invalid_argument("evaluate_branch: arity mismatch");
  std::vector<S> vals(x.begin(), x.end());
  auto val = [&](int n) -> S { return vals.at(static_cast<std::size_t>(n - 1)); };
  BranchTrace trace;
  const BranchProgram::Step* step = &bp.root();
  for (;;) {
    if (const auto* c = std::get_if<BranchProgram::Compute>(&step->op)) {
      S v = std::holds_alternative<AffineInstr>(c->instr)
                ? eval_affine<S>(std::get<AffineInstr>(c->instr), val, meter)
                : eval_monomial<S>(std::get<MonomialInstr>(c->instr), val, meter);
      vals.resize(static_cast<std::size_t>(c->index), S(0));
      vals[static_cast<std::size_t>(c->index - 1)] = std::move(v);
      step = c->next.get();
    } else if (const auto* b = std::get_if<BranchProgram::Branch>(&step->op)) {
      meter.branch_tests += 1;
      const bool nonneg = !(val(b->test) < S(0));
      trace.push(nonneg ? +1 : -1);
      step = nonneg ? b->nonneg.get() : b->neg.get();
    } else {
      const auto& r = std::get<BranchProgram::Return>(step->op);
      return {val(r.index), std::move(trace)};
    }
  }
}

/// One root-to-leaf path of a branch program, written explicitly: the branch
/// word, the constraint polynomials with their required signs, and the piece
/// polynomial, all in terms of the function's inputs.
struct PieceDescription {
  BranchTrace z;
  std::vector<std::pair<Polynomial, int>> constraints;
  Polynomial piece;
};

struct ExtractLimits {
  int max_branch_nodes = 20;
  std::size_t max_terms = 100000;
  std::size_t max_pieces = 4096;
};

namespace detail {

inline void extract_pieces_rec(const BranchProgram::Step& step, int n_inputs,
                               std::vector<Polynomial>& polys, BranchTrace word,
                               std::vector<std::pair<Polynomial, int>> constraints,
                               const ExtractLimits& limits, std::vector<PieceDescription>& out) {
  if (const auto* c = std::get_if<BranchProgram::Compute>(&step.op)) {
    auto poly_of = [&](int n) -> Polynomial { return polys.at(static_cast<std::size_t>(n - 1)); };
    Polynomial p = instr_polynomial(c->instr, n_inputs, poly_of, limits.max_terms);
    const std::size_t keep = polys.size();
    polys.resize(static_cast<std::size_t>(c->index), Polynomial(n_inputs));
    polys[static_cast<std::size_t>(c->index - 1)] = std::move(p);
    extract_pieces_rec(*c->next, n_inputs, polys, std::move(word), std::move(constraints), limits,
                       out);
    polys.resize(keep);
  } else if (const auto* b = std::get_if<BranchProgram::Branch>(&step.op)) {
    // by value: recursion below resizes polys and would invalidate a reference
    const Polynomial h = polys.at(static_cast<std::size_t>(b->test - 1));
    for (int side : {+1, -1}) {
      BranchTrace w = word;
      w.push(side);
      auto cs = constraints;
      cs.emplace_back(h, side);
      extract_pieces_rec(side > 0 ? *b->nonneg : *b->neg, n_inputs, polys, std::move(w),
                         std::move(cs), limits, out);
    }
  } else {
    const auto& r = std::get<BranchProgram::Return>(step.op);
    if (out.size() >= limits.max_pieces)
      throw ExtractionLimitError("piece count limit exceeded");
    out.push_back(PieceDescription{std::move(word), std::move(constraints),
                                   polys.at(static_cast<std::size_t>(r.index - 1))});
  }
}

}  // namespace detail

/// Enumerates every root-to-leaf path with all intermediate nodes expanded
/// symbolically into polynomials in the inputs. Exponential; oracle scale
/// only, guarded by `limits`.
inline std::vector<PieceDescription> extract_pieces(const BranchProgram& bp,
                                                    const ExtractLimits& limits = {}) {
  if (bp.branch_count() > limits.max_branch_nodes)
    throw ExtractionLimitError("branch-node bound exceeded (" +
                               std::to_string(bp.branch_count()) + " > " +
                               std::to_string(limits.max_branch_nodes) + ")");
  std::vector<Polynomial> polys;
  polys.reserve(static_cast<std::size_t>(bp.input_arity()));
  for (int i = 0; i < bp.input_arity(); ++i)
    polys.push_back(Polynomial::variable(bp.input_arity(), i));
  std::vector<PieceDescription> out;
  detail::extract_pieces_rec(bp.root(), bp.input_arity(), polys, {}, {}, limits, out);
  return out;
}

/// Signals a corrupted piece set: a valid extraction admits exactly one
/// matching piece for any query.
struct PieceSelectError : std::logic_error {
  using std::logic_error::logic_error;
};

/// The unique piece approached along x + delta*v as delta -> 0+, decided
/// exactly via limiting signs.
inline const PieceDescription& piece_select(std::span<const PieceDescription> pieces,
                                            std::span<const Rational> x,
                                            std::span<const Rational> v) {
  const PieceDescription* found = nullptr;
  for (const auto& piece : pieces) {
    bool ok = true;
    for (const auto& [h, s] : piece.constraints) {
      if (limiting_sign(h, x, v) != s) {
        ok = false;
        break;
      }
    }
    if (!ok) continue;
    if (found) throw PieceSelectError("piece_select: multiple pieces match");
    found = &piece;
  }
  if (!found) throw PieceSelectError("piece_select: no piece matches");
  return *found;
}

/// The piece whose set contains x itself under sign(0)=+1 (no direction).
inline const PieceDescription& piece_containing(std::span<const PieceDescription> pieces,
                                                std::span<const Rational> x) {
  const PieceDescription* found = nullptr;
  for (const auto& piece : pieces) {
    bool ok = true;
    for (const auto& [h, s] : piece.constraints) {
      const Rational hv = h.evaluate_exact(x);
      const int sign = hv == 0 ? +1 : sign_of(hv);
      if (sign != s) {
        ok = false;
        break;
      }
    }
    if (!ok) continue;
    if (found) throw PieceSelectError("piece_containing: multiple pieces match");
    found = &piece;
  }
  if (!found) throw PieceSelectError("piece_containing: no piece matches");
  return *found;
}

}  // namespace subgrad
