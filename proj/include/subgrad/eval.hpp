#pragma once

#include <span>
#include <stdexcept>
#include <utility>
#include <variant>
#include <vector>

#include "subgrad/branch_program.hpp"
#include "subgrad/library.hpp"
#include "subgrad/meter.hpp"
#include "subgrad/program.hpp"

namespace subgrad {

template <class S>
struct EvalResult {
  S value{};
  std::vector<std::pair<int, BranchTrace>> traces;  // (call node, branch word)
};

/// Plain forward evaluation under the sign(0)=+1 tie rule, recording each
/// library call's branch word and charging exact unit costs.
template <class S>
EvalResult<S> evaluate(const ProgramDef& prog, std::span<const S> x, const LibraryRegistry& lib,
                       CostMeter& meter) {
  if (x.size() != static_cast<std::size_t>(prog.input_arity))
    throw std::invalid_argument("evaluate: input dimension mismatch");
  std::vector<S> vals(x.begin(), x.end());
  vals.resize(static_cast<std::size_t>(prog.node_count()), S(0));
  EvalResult<S> out;
  for (std::size_t i = 0; i < prog.instructions.size(); ++i) {
    const int node = prog.node_of(i);
    auto val = [&](int n) -> S { return vals.at(static_cast<std::size_t>(n - 1)); };
    const Instruction& instr = prog.instructions[i];
    S v{};
    if (const auto* a = std::get_if<AffineInstr>(&instr)) {
      v = eval_affine<S>(*a, val, meter);
    } else if (const auto* m = std::get_if<MonomialInstr>(&instr)) {
      v = eval_monomial<S>(*m, val, meter);
    } else {
      const auto& call = std::get<LibCallInstr>(instr);
      const LibraryFunction& fn = lib.at(call.function);
      if (static_cast<int>(call.args.size()) != fn.arity)
        throw std::invalid_argument("evaluate: arity mismatch calling " + call.function);
      std::vector<S> args;
      args.reserve(call.args.size());
      for (int n : call.args) args.push_back(val(n));
      auto r = evaluate_branch<S>(*fn.program, args, meter);
      v = std::move(r.value);
      out.traces.emplace_back(node, std::move(r.trace));
    }
    vals[static_cast<std::size_t>(node - 1)] = std::move(v);
  }
  out.value = vals.at(static_cast<std::size_t>(prog.output - 1));
  return out;
}

}  // namespace subgrad
