#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "subgrad/asd.hpp"
#include "subgrad/branch_program.hpp"
#include "subgrad/eval.hpp"
#include "subgrad/library.hpp"
#include "subgrad/polynomial.hpp"
#include "subgrad/program.hpp"

namespace subgrad {

// ---- finite differences -----------------------------------------------------

struct FDSchedule {
  std::vector<double> steps{1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8};
  int extrapolation_order = 2;
  double convergence_threshold = 1e-6;
};

struct FdResult {
  double value = 0.0;
  double error_estimate = 0.0;
  bool converged = false;
  double step_used = 1.0;  // smallest step feeding the reported cell
};

namespace detail {

inline void check_schedule(const FDSchedule& sched) {
  if (sched.steps.empty()) throw std::invalid_argument("empty finite-difference schedule");
  double prev = std::numeric_limits<double>::infinity();
  for (double s : sched.steps) {
    if (!(s > 0.0) || !(s < prev))
      throw std::invalid_argument("schedule steps must be positive and strictly decreasing");
    prev = s;
  }
}

/// Neville extrapolation of samples (x_i, y_i) to x = 0, column count capped
/// at order+1. Returns the tableau cell with the smallest consistency error.
inline FdResult extrapolate_to_zero(std::span<const double> xs, std::span<const double> ys,
                                    int order, double threshold) {
  const std::size_t n = xs.size();
  if (n == 0) return {0.0, std::numeric_limits<double>::infinity(), false, 1.0};
  std::vector<double> t(ys.begin(), ys.end());
  double best = t.back();
  double best_err = n > 1 ? std::abs(t[n - 1] - t[n - 2]) : std::numeric_limits<double>::infinity();
  double best_step = xs[n - 1];
  const std::size_t cols = std::min<std::size_t>(static_cast<std::size_t>(std::max(order, 0)),
                                                 n - 1);
  for (std::size_t j = 1; j <= cols; ++j) {
    for (std::size_t i = n - 1; i >= j; --i) {
      const double xi = xs[i], xj = xs[i - j];
      const double prev_lo = t[i - 1], prev_hi = t[i];
      t[i] = (xj * prev_hi - xi * prev_lo) / (xj - xi);
      const double err = std::max(std::abs(t[i] - prev_hi), std::abs(t[i] - prev_lo));
      if (err < best_err) {
        best_err = err;
        best = t[i];
        best_step = xi;  // xs is decreasing: row i holds the window's smallest step
      }
      if (i == j) break;
    }
  }
  return {best, best_err, best_err <= threshold, best_step};
}

}  // namespace detail

/// One-sided difference quotients (g(x+dv)-g(x))/d over the schedule,
/// extrapolated to d -> 0+. The error estimate is the extrapolation
/// consistency error; results above the threshold are flagged.
inline FdResult fd_directional(const ProgramDef& prog, std::span<const double> x,
                               std::span<const double> v, const LibraryRegistry& lib,
                               const FDSchedule& sched = {}) {
  detail::check_schedule(sched);
  CostMeter scratch;
  const double f0 = evaluate<double>(prog, x, lib, scratch).value;
  std::vector<double> xs, qs;
  std::vector<double> y(x.begin(), x.end());
  double fmax = std::abs(f0);
  for (double step : sched.steps) {
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] + step * v[i];
    const double f1 = evaluate<double>(prog, y, lib, scratch).value;
    xs.push_back(step);
    qs.push_back((f1 - f0) / step);
    fmax = std::max(fmax, std::abs(f1));
  }
  auto r = detail::extrapolate_to_zero(xs, qs, sched.extrapolation_order,
                                       sched.convergence_threshold);
  // cancellation in each quotient carries eps*|f|/step of noise, which the
  // tableau consistency check alone cannot see; charge it at the reported
  // cell's own step
  const double eps = std::numeric_limits<double>::epsilon();
  const double floor = 16.0 * eps * std::max(1.0, fmax) / r.step_used;
  r.error_estimate = std::max(r.error_estimate, floor);
  r.converged = r.error_estimate <= sched.convergence_threshold;
  return r;
}

// ---- limiting gradients -----------------------------------------------------

struct LimitingGradient {
  std::vector<double> gradient;
  double error_estimate = 0.0;
  int points_used = 0;
  bool ok = false;
  std::string note;
};

/// lim_{d->0+} grad f(x + d v), approximated by evaluating the engine at
/// perturbed points where every branch test resolves strictly and
/// extrapolating componentwise. At such points the engine's u coincides with
/// the classical reverse-mode gradient, which keeps this oracle independent
/// of the branch-decision logic it is used to check. A step that lands
/// exactly on a kink is skipped; if every step does, the samples are still
/// accepted when they all follow one branch word (a flat piece holds a zero
/// test on an open set there, e.g. anything downstream of a clamped relu,
/// and the engine is plain reverse mode on that piece), otherwise the query
/// is refused.
inline LimitingGradient limiting_gradient(const ProgramDef& prog, std::span<const double> x,
                                          std::span<const double> v, const LibraryRegistry& lib,
                                          const FDSchedule& sched = {}) {
  detail::check_schedule(sched);
  LimitingGradient out;
  std::vector<double> xs, xs_tied;
  std::vector<std::vector<double>> us, us_tied;
  std::vector<std::pair<int, BranchTrace>> tied_word;
  bool tied_consistent = true;
  std::vector<double> y(x.begin(), x.end());
  for (double step : sched.steps) {
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] + step * v[i];
    auto r = asd_program_flat<double>(prog, y, v, lib);
    if (r.tie_hit) {
      if (xs_tied.empty())
        tied_word = r.traces;
      else
        tied_consistent = tied_consistent && r.traces == tied_word;
      xs_tied.push_back(step);
      us_tied.push_back(std::move(r.u));
      continue;
    }
    xs.push_back(step);
    us.push_back(std::move(r.u));
  }
  if (xs.empty() && tied_consistent && !xs_tied.empty()) {
    xs.swap(xs_tied);
    us.swap(us_tied);
  }
  out.points_used = static_cast<int>(xs.size());
  if (xs.empty()) {
    out.note = "no usable sample points on the schedule";
    return out;
  }
  const std::size_t dim = us[0].size();
  out.gradient.resize(dim);
  out.ok = true;
  std::vector<double> col(xs.size());
  for (std::size_t c = 0; c < dim; ++c) {
    for (std::size_t i = 0; i < xs.size(); ++i) col[i] = us[i][c];
    auto r = detail::extrapolate_to_zero(xs, col, sched.extrapolation_order,
                                         sched.convergence_threshold);
    out.gradient[c] = r.value;
    out.error_estimate = std::max(out.error_estimate, r.error_estimate);
  }
  return out;
}

// ---- Clarke hull membership --------------------------------------------------

namespace detail {

/// Distance from u to the convex hull of `vertices` via away-step
/// Frank-Wolfe on the weight simplex (exact line search on the quadratic).
inline double min_norm_point_distance(const std::vector<std::vector<double>>& vertices,
                                      std::span<const double> u, double gap_tol,
                                      int max_iters = 200000) {
  const std::size_t m = vertices.size();
  const std::size_t n = u.size();
  std::vector<double> lambda(m, 0.0);
  {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < m; ++i) {
      double d2 = 0;
      for (std::size_t c = 0; c < n; ++c) {
        const double t = vertices[i][c] - u[c];
        d2 += t * t;
      }
      if (d2 < best_d) {
        best_d = d2;
        best = i;
      }
    }
    lambda[best] = 1.0;
  }

  std::vector<double> y(n), g(m), gd(n);
  for (int iter = 0; iter < max_iters; ++iter) {
    for (std::size_t c = 0; c < n; ++c) {
      double s = -u[c];
      for (std::size_t i = 0; i < m; ++i) s += lambda[i] * vertices[i][c];
      y[c] = s;
    }
    for (std::size_t i = 0; i < m; ++i) {
      double s = 0;
      for (std::size_t c = 0; c < n; ++c) s += 2.0 * y[c] * vertices[i][c];
      g[i] = s;
    }
    std::size_t fw = 0, away = 0;
    bool has_away = false;
    for (std::size_t i = 0; i < m; ++i) {
      if (g[i] < g[fw]) fw = i;
      if (lambda[i] > 0 && (!has_away || g[i] > g[away])) {
        away = i;
        has_away = true;
      }
    }
    double gl = 0;
    for (std::size_t i = 0; i < m; ++i) gl += g[i] * lambda[i];
    const double gap = gl - g[fw];
    if (gap <= gap_tol) break;

    const double fw_descent = gap;
    const double away_descent = has_away ? g[away] - gl : -1.0;
    const bool use_away = has_away && away_descent > fw_descent && lambda[away] < 1.0;

    double gamma_max, dgd = 0, dir_norm2 = 0;
    // direction d = e_fw - lambda  (FW)  or  lambda - e_away (away)
    for (std::size_t c = 0; c < n; ++c) {
      double dc = 0;
      for (std::size_t i = 0; i < m; ++i) dc -= lambda[i] * vertices[i][c];
      if (use_away)
        dc = -dc - vertices[away][c];
      else
        dc += vertices[fw][c];
      gd[c] = dc;
      dir_norm2 += dc * dc;
      dgd += 2.0 * y[c] * dc;
    }
    gamma_max = use_away ? lambda[away] / (1.0 - lambda[away]) : 1.0;
    double gamma = dir_norm2 > 0 ? -dgd / (2.0 * dir_norm2) : gamma_max;
    gamma = std::clamp(gamma, 0.0, gamma_max);
    if (gamma <= 0) break;

    if (use_away) {
      for (std::size_t i = 0; i < m; ++i) lambda[i] *= 1.0 + gamma;
      lambda[away] -= gamma;
    } else {
      for (std::size_t i = 0; i < m; ++i) lambda[i] *= 1.0 - gamma;
      lambda[fw] += gamma;
    }
    double sum = 0;
    for (auto& l : lambda) {
      if (l < 0) l = 0;
      sum += l;
    }
    if (sum > 0)
      for (auto& l : lambda) l /= sum;
  }

  double d2 = 0;
  for (std::size_t c = 0; c < n; ++c) {
    double s = -u[c];
    for (std::size_t i = 0; i < m; ++i) s += lambda[i] * vertices[i][c];
    d2 += s * s;
  }
  return std::sqrt(std::max(d2, 0.0));
}

}  // namespace detail

struct HullCheck {
  enum class Status { member, nonmember, inconclusive };
  Status status = Status::inconclusive;
  double distance = std::numeric_limits<double>::quiet_NaN();
  std::size_t vertex_count = 0;
  std::string note;

  bool member() const { return status == Status::member; }
};

/// Samples limiting gradients along random directions, deduplicates them to
/// hull vertex candidates, and tests whether u lies within `tol` of their
/// convex hull. Sampling evidence, not a certificate.
inline HullCheck clarke_hull_check(const ProgramDef& prog, std::span<const double> x,
                                   std::span<const double> u, const LibraryRegistry& lib,
                                   int n_dirs = 32, double tol = 1e-6, std::uint64_t seed = 1234,
                                   const FDSchedule& sched = {}) {
  const int d = prog.input_arity;
  if (d > 4) throw std::invalid_argument("clarke_hull_check: oracle scale is d <= 4");
  n_dirs = std::max(n_dirs, 2 * d + 2);
  std::mt19937_64 rng(seed);
  std::vector<std::vector<double>> vertices;
  int valid = 0;
  for (int k = 0; k < n_dirs; ++k) {
    auto dir = sample_direction(d, rng);
    auto lg = limiting_gradient(prog, x, dir, lib, sched);
    if (!lg.ok) continue;
    ++valid;
    bool fresh = true;
    for (const auto& vtx : vertices) {
      double linf = 0;
      for (std::size_t c = 0; c < vtx.size(); ++c)
        linf = std::max(linf, std::abs(vtx[c] - lg.gradient[c]));
      if (linf <= 1e-8) {
        fresh = false;
        break;
      }
    }
    if (fresh) vertices.push_back(std::move(lg.gradient));
  }

  HullCheck out;
  out.vertex_count = vertices.size();
  if (valid < 2) {
    out.note = "insufficient valid limiting gradients (" + std::to_string(valid) + ")";
    return out;
  }
  const double gap_tol = std::max(1e-14, tol * tol / 100.0);
  out.distance = detail::min_norm_point_distance(vertices, u, gap_tol);
  out.status = out.distance <= tol ? HullCheck::Status::member : HullCheck::Status::nonmember;
  return out;
}

// ---- fixed-convention baseline ----------------------------------------------

/// Per-function fixed partial derivatives applied whenever a call's taken
/// path hit an exact-zero branch test. Mirrors how mainstream frameworks
/// hardwire kink derivatives (relu'(0)=0 and friends).
struct NaiveConvention {
  std::map<std::string, std::vector<double>> kink_partials;

  NaiveConvention& set(std::string name, std::vector<double> partials) {
    kink_partials[std::move(name)] = std::move(partials);
    return *this;
  }

  static NaiveConvention frameworks_default() {
    NaiveConvention c;
    c.set("relu", {0.0});
    c.set("relu_bad", {0.0});
    c.set("abs", {1.0});
    c.set("max2", {1.0, 0.0});
    c.set("min2", {1.0, 0.0});
    return c;
  }
};

/// Directionless forward + reverse sweep where every library call at a kink
/// uses its convention's fixed local derivative; off kinks the taken piece's
/// gradient flows. Reproduces the framework outputs the engine exists to fix.
inline std::vector<double> naive_ad(const ProgramDef& prog, std::span<const double> x,
                                    const LibraryRegistry& lib, const NaiveConvention& conv) {
  CostMeter scratch;
  std::vector<double> vals(static_cast<std::size_t>(prog.node_count()) + 1, 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) vals[i + 1] = x[i];

  Tape<double> top;
  top.num_inputs = prog.input_arity;
  top.output = prog.output;
  for (std::size_t i = 0; i < prog.instructions.size(); ++i) {
    const int node = prog.node_of(i);
    const Instruction& instr = prog.instructions[i];
    auto val = [&](int n) -> double { return vals.at(static_cast<std::size_t>(n)); };
    typename Tape<double>::Record rec;
    rec.node = node;
    if (const auto* call = std::get_if<LibCallInstr>(&instr)) {
      const LibraryFunction& fn = lib.at(call->function);
      std::vector<double> args;
      args.reserve(call->args.size());
      for (int n : call->args) args.push_back(val(n));
      auto walk = walk_library_values<double>(*fn.program, args, scratch);
      vals[static_cast<std::size_t>(node)] = walk.value;
      std::vector<double> partials;
      if (walk.tie_hit) {
        auto it = conv.kink_partials.find(call->function);
        if (it == conv.kink_partials.end())
          throw std::out_of_range("no naive kink convention for " + call->function);
        partials = it->second;
        if (partials.size() != call->args.size())
          throw std::invalid_argument("naive convention arity mismatch for " + call->function);
      } else {
        partials = reverse_mode(walk.tape, scratch);
      }
      for (std::size_t j = 0; j < call->args.size(); ++j)
        rec.partials.emplace_back(call->args[j], partials[j]);
    } else {
      double v = 0;
      if (const auto* a = std::get_if<AffineInstr>(&instr))
        v = eval_affine<double>(*a, val, scratch);
      else
        v = eval_monomial<double>(std::get<MonomialInstr>(instr), val, scratch);
      vals[static_cast<std::size_t>(node)] = v;
      rec.partials = instr_partials<double>(instr, val);
    }
    top.records.push_back(std::move(rec));
  }
  return reverse_mode(top, scratch);
}

// ---- exact whole-program pieces ----------------------------------------------

/// Global piece enumeration for a program: the cartesian composition of each
/// library call's pieces, with every constraint and piece polynomial written
/// in the program inputs. Exponential; bounded by `limits`.
inline std::vector<PieceDescription> extract_program_pieces(const ProgramDef& prog,
                                                            const LibraryRegistry& lib,
                                                            const ExtractLimits& limits = {}) {
  int total_branches = 0;
  std::map<std::string, std::vector<PieceDescription>> lib_pieces;
  for (const auto& instr : prog.instructions) {
    if (const auto* call = std::get_if<LibCallInstr>(&instr)) {
      const LibraryFunction& fn = lib.at(call->function);
      total_branches += fn.program->branch_count();
      if (!lib_pieces.count(fn.name)) lib_pieces[fn.name] = extract_pieces(*fn.program, limits);
    }
  }
  if (total_branches > limits.max_branch_nodes)
    throw ExtractionLimitError("program branch-node bound exceeded (" +
                               std::to_string(total_branches) + " > " +
                               std::to_string(limits.max_branch_nodes) + ")");

  struct Partial {
    std::vector<Polynomial> polys;  // per node, 0-based
    BranchTrace word;
    std::vector<std::pair<Polynomial, int>> constraints;
  };
  const int d = prog.input_arity;
  std::vector<Partial> work(1);
  work[0].polys.reserve(static_cast<std::size_t>(prog.node_count()));
  for (int i = 0; i < d; ++i) work[0].polys.push_back(Polynomial::variable(d, i));

  for (const auto& instr : prog.instructions) {
    if (const auto* call = std::get_if<LibCallInstr>(&instr)) {
      const auto& pieces = lib_pieces.at(call->function);
      std::vector<Partial> next;
      next.reserve(work.size() * pieces.size());
      for (const auto& w : work) {
        std::vector<Polynomial> args;
        args.reserve(call->args.size());
        for (int n : call->args) args.push_back(w.polys.at(static_cast<std::size_t>(n - 1)));
        for (const auto& piece : pieces) {
          if (next.size() >= limits.max_pieces)
            throw ExtractionLimitError("program piece count limit exceeded");
          Partial p = w;
          for (const auto& [h, s] : piece.constraints)
            p.constraints.emplace_back(h.substitute(args, limits.max_terms), s);
          for (auto z : piece.z.signs) p.word.push(z);
          p.polys.push_back(piece.piece.substitute(args, limits.max_terms));
          next.push_back(std::move(p));
        }
      }
      work = std::move(next);
    } else {
      for (auto& w : work) {
        auto poly_of = [&](int n) -> Polynomial {
          return w.polys.at(static_cast<std::size_t>(n - 1));
        };
        w.polys.push_back(instr_polynomial(instr, d, poly_of, limits.max_terms));
      }
    }
  }

  std::vector<PieceDescription> out;
  out.reserve(work.size());
  for (auto& w : work)
    out.push_back(PieceDescription{std::move(w.word), std::move(w.constraints),
                                   std::move(w.polys.at(static_cast<std::size_t>(prog.output - 1)))});
  return out;
}

struct ExactPieceGradient {
  std::vector<Rational> gradient;
  PieceDescription piece;
};

/// Ground truth for u: the exact gradient of the limiting piece polynomial,
/// selected by exact limiting signs over the composed program pieces.
inline ExactPieceGradient exact_piece_gradient(const ProgramDef& prog,
                                               std::span<const Rational> x,
                                               std::span<const Rational> v,
                                               const LibraryRegistry& lib,
                                               const ExtractLimits& limits = {}) {
  auto pieces = extract_program_pieces(prog, lib, limits);
  const PieceDescription& piece = piece_select(pieces, x, v);
  ExactPieceGradient out;
  out.gradient.reserve(static_cast<std::size_t>(prog.input_arity));
  for (int i = 0; i < prog.input_arity; ++i)
    out.gradient.push_back(piece.piece.derivative(i).evaluate_exact(x));
  out.piece = piece;
  return out;
}

// ---- local Lipschitz probe -----------------------------------------------------

struct LipschitzProbe {
  double constant = 0.0;
  bool violation = false;
  std::vector<double> witness_a, witness_b;
};

/// Max sampled difference quotient over random point pairs in the box
/// [lo, hi]^arity; quotients above `cap` are flagged with the witness pair.
inline LipschitzProbe lipschitz_probe(const LibraryFunction& g, double lo, double hi, int samples,
                                      std::uint64_t seed = 7, double cap = 1e6) {
  std::mt19937_64 rng(seed);
  auto uniform = [&rng, lo, hi]() {
    return lo + (hi - lo) * (static_cast<double>(rng() >> 11) * 0x1.0p-53);
  };
  CostMeter scratch;
  LipschitzProbe out;
  const auto arity = static_cast<std::size_t>(g.arity);
  std::vector<double> a(arity), b(arity);
  for (int s = 0; s < samples; ++s) {
    double dist2 = 0;
    for (std::size_t i = 0; i < arity; ++i) {
      a[i] = uniform();
      b[i] = uniform();
      dist2 += (a[i] - b[i]) * (a[i] - b[i]);
    }
    if (dist2 < 1e-24) continue;
    const double fa = evaluate_branch<double>(*g.program, a, scratch).value;
    const double fb = evaluate_branch<double>(*g.program, b, scratch).value;
    const double q = std::abs(fa - fb) / std::sqrt(dist2);
    if (q > out.constant) {
      out.constant = q;
      out.witness_a = a;
      out.witness_b = b;
      out.violation = q > cap;
    }
  }
  return out;
}

}  // namespace subgrad
