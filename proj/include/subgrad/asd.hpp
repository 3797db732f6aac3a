#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <utility>
#include <variant>
#include <vector>

#include "subgrad/branch_program.hpp"
#include "subgrad/eval.hpp"
#include "subgrad/library.hpp"
#include "subgrad/meter.hpp"
#include "subgrad/program.hpp"
#include "subgrad/tape.hpp"

namespace subgrad {

struct AsdOptions {
  /// Branch values with |x_k| <= kink_tol are treated as ties (x_k == 0).
  /// Nonzero values are a numerical-practice escape hatch and deviate from
  /// the exact-real model; only meaningful for double evaluation.
  double kink_tol = 0.0;
};

/// The [a, d, u] triple returned by an overloaded library call: value,
/// one-sided directional derivative, and the gradient of the piece
/// approached along the query direction.
template <class S>
struct AsdOutput {
  S a{};
  S d{};
  std::vector<S> u;
};

struct CostReport {
  std::int64_t runtime_f = 0;    // value ops along the taken (limiting) branch
  std::int64_t runtime_asd = 0;  // full metered cost of the subdifferentiation run
  double ratio = 1.0;

  static CostReport make(std::int64_t f, std::int64_t total) {
    CostReport r{f, total, 1.0};
    r.ratio = static_cast<double>(total) / static_cast<double>(f > 0 ? f : 1);
    if (r.ratio < 1.0) r.ratio = 1.0;
    return r;
  }
};

/// Separate meters for the three pinned charging rules: forward value ops
/// (incl. branch tests), dual propagation (1 mul + 1 add per recorded
/// partial), and reverse sweeps (1 mul + 1 add per edge term).
struct AsdMeters {
  CostMeter value;
  CostMeter dual;
  CostMeter reverse;

  std::int64_t total() const { return value.total() + dual.total() + reverse.total(); }
};

namespace detail {

/// Branch decision of the overloaded subroutine: +1 if x_k > 0, +1 on a tie
/// with nonnegative velocity, else -1.
template <class S>
int asd_branch_sign(const S& xk, const S& dk, const AsdOptions& opt) {
  bool tie;
  if constexpr (std::is_same_v<S, double>) {
    tie = std::abs(xk) <= opt.kink_tol;
  } else {
    tie = xk == S(0);
  }
  if (tie) return dk < S(0) ? -1 : +1;
  return xk > S(0) ? +1 : -1;
}

template <class S>
S eval_instruction(const Instruction& instr, const std::vector<Dual<S>>& duals, CostMeter& m) {
  auto val = [&](int n) -> S { return duals.at(static_cast<std::size_t>(n)).a; };
  if (const auto* a = std::get_if<AffineInstr>(&instr)) return eval_affine<S>(*a, val, m);
  return eval_monomial<S>(std::get<MonomialInstr>(instr), val, m);
}

}  // namespace detail

/// One library call walked with duals: the taken straight-line path's tape,
/// its branch word, and the output dual.
template <class S>
struct LibWalk {
  Dual<S> out{};
  BranchTrace trace;
  Tape<S> tape;  // local node ids: 1..arity are the call arguments
  bool tie_hit = false;
};

template <class S>
LibWalk<S> asd_walk_library(const BranchProgram& bp, std::span<const Dual<S>> args, AsdMeters& m,
                            const AsdOptions& opt) {
  if (args.size() != static_cast<std::size_t>(bp.input_arity()))
    throw std::invalid_argument("library call arity mismatch");
  LibWalk<S> walk;
  walk.tape.num_inputs = bp.input_arity();
  std::vector<Dual<S>> duals(1);  // 1-based
  duals.insert(duals.end(), args.begin(), args.end());

  const BranchProgram::Step* step = &bp.root();
  for (;;) {
    if (const auto* c = std::get_if<BranchProgram::Compute>(&step->op)) {
      S value = detail::eval_instruction<S>(c->instr, duals, m.value);
      auto val = [&](int n) -> S { return duals.at(static_cast<std::size_t>(n)).a; };
      auto partials = instr_partials<S>(c->instr, val);
      S dot = S(0);
      for (const auto& [n, p] : partials) {
        dot = dot + p * duals.at(static_cast<std::size_t>(n)).d;
        m.dual.multiplications += 1;
        m.dual.additions += 1;
      }
      duals.resize(static_cast<std::size_t>(c->index) + 1);
      duals[static_cast<std::size_t>(c->index)] = Dual<S>{std::move(value), std::move(dot)};
      walk.tape.records.push_back({c->index, std::move(partials)});
      step = c->next.get();
    } else if (const auto* b = std::get_if<BranchProgram::Branch>(&step->op)) {
      m.value.branch_tests += 1;
      const Dual<S>& t = duals.at(static_cast<std::size_t>(b->test));
      bool tie;
      if constexpr (std::is_same_v<S, double>) {
        tie = std::abs(t.a) <= opt.kink_tol;
      } else {
        tie = t.a == S(0);
      }
      walk.tie_hit = walk.tie_hit || tie;
      const int s = detail::asd_branch_sign(t.a, t.d, opt);
      walk.trace.push(s);
      step = s > 0 ? b->nonneg.get() : b->neg.get();
    } else {
      const auto& r = std::get<BranchProgram::Return>(step->op);
      walk.tape.output = r.index;
      walk.out = duals.at(static_cast<std::size_t>(r.index));
      return walk;
    }
  }
}

template <class S>
struct AsdLibraryResult {
  AsdOutput<S> out;
  BranchTrace trace;
  Tape<S> tape;  // the taken straight-line path
};

/// The overloaded subroutine ASD[g]: forward pass with duals, first-order
/// branch decisions, then reverse mode over the taken path.
template <class S>
AsdLibraryResult<S> asd_library(const LibraryFunction& g, std::span<const S> x,
                                std::span<const S> v, AsdMeters& m, const AsdOptions& opt = {}) {
  if (x.size() != static_cast<std::size_t>(g.arity) || v.size() != x.size())
    throw std::invalid_argument("asd_library: arity mismatch calling " + g.name);
  std::vector<Dual<S>> args;
  args.reserve(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) args.push_back({x[i], v[i]});
  auto walk = asd_walk_library<S>(*g.program, args, m, opt);
  auto u = reverse_mode(walk.tape, m.reverse);
  return {AsdOutput<S>{walk.out.a, walk.out.d, std::move(u)}, std::move(walk.trace),
          std::move(walk.tape)};
}

template <class S>
AsdLibraryResult<S> asd_library(const LibraryFunction& g, std::span<const S> x,
                                std::span<const S> v, const AsdOptions& opt = {}) {
  AsdMeters m;
  return asd_library(g, x, v, m, opt);
}

// ---- whole-program drivers ------------------------------------------------

template <class S>
struct AsdProgramResult {
  S value{};
  S deriv{};
  std::vector<S> u;
  CostReport cost;
  std::vector<std::pair<int, BranchTrace>> traces;  // per library call node
  bool tie_hit = false;  // some branch test fell exactly on its kink
};

enum class Variant { nested, flat };

inline std::string to_string(Variant v) { return v == Variant::flat ? "flat" : "nested"; }

namespace detail {

/// Forward pass shared by both variants: identical values, duals, branch
/// decisions and forward metering; call sites keep their path tapes.
template <class S>
struct ForwardSite {
  int node = 0;
  bool is_call = false;
  std::vector<std::pair<int, S>> partials;  // primitives
  std::vector<int> args;                    // calls
  Tape<S> tape;                             // calls: taken path
  BranchTrace trace;                        // calls
};

template <class S>
struct ForwardPass {
  std::vector<Dual<S>> duals;  // 1-based
  std::vector<ForwardSite<S>> sites;
  bool tie_hit = false;
};

template <class S>
ForwardPass<S> asd_forward(const ProgramDef& prog, std::span<const S> x, std::span<const S> v,
                           const LibraryRegistry& lib, AsdMeters& m, const AsdOptions& opt) {
  if (x.size() != static_cast<std::size_t>(prog.input_arity) || v.size() != x.size())
    throw std::invalid_argument("asd_program: input dimension mismatch");
  ForwardPass<S> fwd;
  fwd.duals.resize(static_cast<std::size_t>(prog.node_count()) + 1);
  for (std::size_t i = 0; i < x.size(); ++i) fwd.duals[i + 1] = Dual<S>{x[i], v[i]};

  for (std::size_t i = 0; i < prog.instructions.size(); ++i) {
    const int node = prog.node_of(i);
    const Instruction& instr = prog.instructions[i];
    ForwardSite<S> site;
    site.node = node;
    if (const auto* call = std::get_if<LibCallInstr>(&instr)) {
      const LibraryFunction& fn = lib.at(call->function);
      if (static_cast<int>(call->args.size()) != fn.arity)
        throw std::invalid_argument("asd_program: arity mismatch calling " + call->function);
      std::vector<Dual<S>> args;
      args.reserve(call->args.size());
      for (int n : call->args) args.push_back(fwd.duals.at(static_cast<std::size_t>(n)));
      auto walk = asd_walk_library<S>(*fn.program, args, m, opt);
      fwd.duals[static_cast<std::size_t>(node)] = walk.out;
      fwd.tie_hit = fwd.tie_hit || walk.tie_hit;
      site.is_call = true;
      site.args = call->args;
      site.tape = std::move(walk.tape);
      site.trace = std::move(walk.trace);
    } else {
      S value = eval_instruction<S>(instr, fwd.duals, m.value);
      auto val = [&](int n) -> S { return fwd.duals.at(static_cast<std::size_t>(n)).a; };
      site.partials = instr_partials<S>(instr, val);
      S dot = S(0);
      for (const auto& [n, p] : site.partials) {
        dot = dot + p * fwd.duals.at(static_cast<std::size_t>(n)).d;
        m.dual.multiplications += 1;
        m.dual.additions += 1;
      }
      fwd.duals[static_cast<std::size_t>(node)] = Dual<S>{std::move(value), std::move(dot)};
    }
    fwd.sites.push_back(std::move(site));
  }
  return fwd;
}

template <class S>
AsdProgramResult<S> result_of(const ProgramDef& prog, const ForwardPass<S>& fwd,
                              std::vector<S> u, const AsdMeters& m) {
  AsdProgramResult<S> r;
  const auto& out = fwd.duals.at(static_cast<std::size_t>(prog.output));
  r.value = out.a;
  r.deriv = out.d;
  r.u = std::move(u);
  r.cost = CostReport::make(m.value.total(), m.total());
  r.tie_hit = fwd.tie_hit;
  for (const auto& site : fwd.sites)
    if (site.is_call) r.traces.emplace_back(site.node, site.trace);
  return r;
}

}  // namespace detail

/// Nested driver: every library call is reduced to a single tape node
/// carrying its piece gradient as local partials, then one reverse sweep
/// runs over the call-granularity tape.
template <class S>
AsdProgramResult<S> asd_program(const ProgramDef& prog, std::span<const S> x,
                                std::span<const S> v, const LibraryRegistry& lib,
                                const AsdOptions& opt = {}) {
  AsdMeters m;
  auto fwd = detail::asd_forward<S>(prog, x, v, lib, m, opt);

  Tape<S> top;
  top.num_inputs = prog.input_arity;
  top.output = prog.output;
  for (const auto& site : fwd.sites) {
    typename Tape<S>::Record rec;
    rec.node = site.node;
    if (site.is_call) {
      auto u_call = reverse_mode(site.tape, m.reverse);
      rec.partials.reserve(site.args.size());
      for (std::size_t j = 0; j < site.args.size(); ++j)
        rec.partials.emplace_back(site.args[j], std::move(u_call[j]));
    } else {
      rec.partials = site.partials;
    }
    top.records.push_back(std::move(rec));
  }
  auto u = reverse_mode(top, m.reverse);
  return detail::result_of(prog, fwd, std::move(u), m);
}

/// Flattened construction: the per-call paths are spliced into one global
/// tape and a single reverse sweep runs over it. Each call block is reduced
/// with seed 1 and folded into its parents with the call's accumulated
/// adjoint; that bracketing reproduces asd_program's arithmetic exactly, so
/// the two variants agree bit for bit. The meter charges the canonical
/// single-sweep count over the global tape (one mul + one add per edge); the
/// 2*arity rescale ops per call are bracketing artifacts and uncharged.
template <class S>
AsdProgramResult<S> asd_program_flat(const ProgramDef& prog, std::span<const S> x,
                                     std::span<const S> v, const LibraryRegistry& lib,
                                     const AsdOptions& opt = {}) {
  AsdMeters m;
  auto fwd = detail::asd_forward<S>(prog, x, v, lib, m, opt);

  std::vector<S> adj(static_cast<std::size_t>(prog.node_count()) + 1, S(0));
  adj[static_cast<std::size_t>(prog.output)] = S(1);
  for (auto it = fwd.sites.rbegin(); it != fwd.sites.rend(); ++it) {
    const S a = adj[static_cast<std::size_t>(it->node)];
    if (it->is_call) {
      auto u_call = reverse_mode(it->tape, m.reverse);
      for (std::size_t j = 0; j < it->args.size(); ++j)
        adj[static_cast<std::size_t>(it->args[j])] =
            adj[static_cast<std::size_t>(it->args[j])] + a * u_call[j];
    } else {
      for (const auto& [parent, partial] : it->partials) {
        adj[static_cast<std::size_t>(parent)] =
            adj[static_cast<std::size_t>(parent)] + a * partial;
        m.reverse.multiplications += 1;
        m.reverse.additions += 1;
      }
    }
  }
  std::vector<S> u(adj.begin() + 1, adj.begin() + 1 + prog.input_arity);
  return detail::result_of(prog, fwd, std::move(u), m);
}

template <class S>
AsdProgramResult<S> run_asd(const ProgramDef& prog, std::span<const S> x, std::span<const S> v,
                            const LibraryRegistry& lib, Variant variant,
                            const AsdOptions& opt = {}) {
  return variant == Variant::flat ? asd_program_flat<S>(prog, x, v, lib, opt)
                                  : asd_program<S>(prog, x, v, lib, opt);
}

/// The argument duals each library call receives during the forward pass;
/// lets callers rerun per-call diagnostics at the reached points.
template <class S>
struct CallSite {
  int node = 0;
  std::string function;
  std::vector<Dual<S>> args;
  BranchTrace trace;
};

template <class S>
std::vector<CallSite<S>> asd_call_sites(const ProgramDef& prog, std::span<const S> x,
                                        std::span<const S> v, const LibraryRegistry& lib,
                                        const AsdOptions& opt = {}) {
  AsdMeters m;
  auto fwd = detail::asd_forward<S>(prog, x, v, lib, m, opt);
  std::vector<CallSite<S>> out;
  for (std::size_t i = 0; i < prog.instructions.size(); ++i) {
    const auto* call = std::get_if<LibCallInstr>(&prog.instructions[i]);
    if (!call) continue;
    const auto& site = fwd.sites[i];
    CallSite<S> cs;
    cs.node = site.node;
    cs.function = call->function;
    cs.trace = site.trace;
    for (int n : call->args) cs.args.push_back(fwd.duals.at(static_cast<std::size_t>(n)));
    out.push_back(std::move(cs));
  }
  return out;
}

// ---- value-only reverse mode (no duals) ------------------------------------

template <class S>
struct LibValueWalk {
  S value{};
  BranchTrace trace;
  Tape<S> tape;
  bool tie_hit = false;  // some branch test evaluated to exactly zero
};

/// Plain-evaluation walk (sign(0)=+1 ties) that also records the path tape.
template <class S>
LibValueWalk<S> walk_library_values(const BranchProgram& bp, std::span<const S> args,
                                    CostMeter& meter) {
  AsdMeters m;
  std::vector<Dual<S>> duals;
  duals.reserve(args.size());
  for (const auto& a : args) duals.push_back({a, S(0)});
  auto walk = asd_walk_library<S>(bp, duals, m, AsdOptions{});
  meter += m.value;  // zero direction: tie rule reduces to sign(0)=+1, no dual cost intended
  return {walk.out.a, std::move(walk.trace), std::move(walk.tape), walk.tie_hit};
}

template <class S>
struct GradientResult {
  S value{};
  std::vector<S> gradient;
  CostReport cost;
  std::vector<std::pair<int, BranchTrace>> traces;
  bool tie_hit = false;
};

/// Value evaluation plus a single global reverse sweep (no directional
/// pass): the classical cheap-gradient path. At branch ties the sign(0)=+1
/// convention decides, so this is only a faithful gradient on paths whose
/// tests are strictly nonzero.
template <class S>
GradientResult<S> reverse_gradient(const ProgramDef& prog, std::span<const S> x,
                                   const LibraryRegistry& lib) {
  if (x.size() != static_cast<std::size_t>(prog.input_arity))
    throw std::invalid_argument("reverse_gradient: input dimension mismatch");
  CostMeter value_m, reverse_m;
  std::vector<S> vals(static_cast<std::size_t>(prog.node_count()) + 1, S(0));
  for (std::size_t i = 0; i < x.size(); ++i) vals[i + 1] = x[i];

  std::vector<detail::ForwardSite<S>> sites;
  GradientResult<S> out;
  for (std::size_t i = 0; i < prog.instructions.size(); ++i) {
    const int node = prog.node_of(i);
    const Instruction& instr = prog.instructions[i];
    detail::ForwardSite<S> site;
    site.node = node;
    auto val = [&](int n) -> S { return vals.at(static_cast<std::size_t>(n)); };
    if (const auto* call = std::get_if<LibCallInstr>(&instr)) {
      const LibraryFunction& fn = lib.at(call->function);
      std::vector<S> args;
      args.reserve(call->args.size());
      for (int n : call->args) args.push_back(val(n));
      auto walk = walk_library_values<S>(*fn.program, args, value_m);
      vals[static_cast<std::size_t>(node)] = walk.value;
      out.tie_hit = out.tie_hit || walk.tie_hit;
      out.traces.emplace_back(node, walk.trace);
      site.is_call = true;
      site.args = call->args;
      site.tape = std::move(walk.tape);
    } else {
      S v{};
      if (const auto* a = std::get_if<AffineInstr>(&instr))
        v = eval_affine<S>(*a, val, value_m);
      else
        v = eval_monomial<S>(std::get<MonomialInstr>(instr), val, value_m);
      vals[static_cast<std::size_t>(node)] = std::move(v);
      site.partials = instr_partials<S>(instr, val);
    }
    sites.push_back(std::move(site));
  }

  std::vector<S> adj(static_cast<std::size_t>(prog.node_count()) + 1, S(0));
  adj[static_cast<std::size_t>(prog.output)] = S(1);
  for (auto it = sites.rbegin(); it != sites.rend(); ++it) {
    const S a = adj[static_cast<std::size_t>(it->node)];
    if (it->is_call) {
      auto u_call = reverse_mode(it->tape, reverse_m);
      for (std::size_t j = 0; j < it->args.size(); ++j)
        adj[static_cast<std::size_t>(it->args[j])] =
            adj[static_cast<std::size_t>(it->args[j])] + a * u_call[j];
    } else {
      for (const auto& [parent, partial] : it->partials) {
        adj[static_cast<std::size_t>(parent)] =
            adj[static_cast<std::size_t>(parent)] + a * partial;
        reverse_m.multiplications += 1;
        reverse_m.additions += 1;
      }
    }
  }
  out.value = vals.at(static_cast<std::size_t>(prog.output));
  out.gradient.assign(adj.begin() + 1, adj.begin() + 1 + prog.input_arity);
  out.cost = CostReport::make(value_m.total(), value_m.total() + reverse_m.total());
  return out;
}

// ---- random directions ------------------------------------------------------

/// Uniform unit vector via an explicit Box-Muller transform over
/// mt19937_64 bits: uniforms are (bits >> 11) * 2^-53. std::distributions
/// are avoided so seeded runs reproduce across standard libraries.
inline std::vector<double> sample_direction(int dim, std::mt19937_64& rng) {
  if (dim < 1) throw std::invalid_argument("sample_direction: dim must be >= 1");
  auto uniform = [&rng]() { return static_cast<double>(rng() >> 11) * 0x1.0p-53; };
  std::vector<double> v(static_cast<std::size_t>(dim));
  for (;;) {
    for (int i = 0; i < dim; i += 2) {
      const double u1 = 1.0 - uniform();  // (0, 1]
      const double u2 = uniform();
      const double r = std::sqrt(-2.0 * std::log(u1));
      const double t = 2.0 * 3.14159265358979323846 * u2;
      v[static_cast<std::size_t>(i)] = r * std::cos(t);
      if (i + 1 < dim) v[static_cast<std::size_t>(i + 1)] = r * std::sin(t);
    }
    double norm2 = 0.0;
    for (double c : v) norm2 += c * c;
    if (norm2 > 1e-16) {
      const double inv = 1.0 / std::sqrt(norm2);
      for (double& c : v) c *= inv;
      return v;
    }
  }
}

struct SubgradientResult {
  double value = 0.0;
  double deriv = 0.0;
  std::vector<double> u;
  CostReport cost;
  std::vector<double> direction;
  std::uint64_t seed = 0;
};

/// Seeded entry point: sample a direction from the seed, run the flat
/// variant, report everything needed to reproduce the draw.
inline SubgradientResult subgradient(const ProgramDef& prog, std::span<const double> x,
                                     std::uint64_t seed, const LibraryRegistry& lib,
                                     Variant variant = Variant::flat,
                                     const AsdOptions& opt = {}) {
  std::mt19937_64 rng(seed);
  auto v = sample_direction(prog.input_arity, rng);
  auto r = run_asd<double>(prog, x, v, lib, variant, opt);
  return {r.value, r.deriv, std::move(r.u), r.cost, std::move(v), seed};
}

}  // namespace subgrad
