// Acceptance suite: every criterion prints exactly one [PASS]/[FAIL] line.
// Tolerances and bounds are pinned in code, not configurable.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "subgrad/subgrad.hpp"
#include "support/test_programs.hpp"

using namespace subgrad;
namespace st = subgrad::testing;
namespace fs = std::filesystem;

namespace {

struct CorpusEntry {
  std::string name;
  ProgramDef prog;
  LibraryRegistry lib;
  std::vector<QueryPoint> points;
  bool oracle = true;
  bool bench = true;
};

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<CorpusEntry> load_corpus() {
  const fs::path dir = SUBGRAD_CORPUS_DIR;
  nlohmann::json manifest = nlohmann::json::parse(read_file(dir / "manifest.json"));
  std::vector<CorpusEntry> out;
  for (const auto& row : manifest.at("programs")) {
    CorpusEntry e;
    e.name = row.at("file").get<std::string>();
    auto parsed = parse_program_text(read_file(dir / e.name));
    e.lib = builtin_registry();
    for (auto& fn : parsed.libs) e.lib.add(std::move(fn));
    e.prog = std::move(parsed.program);
    auto report = validate(e.prog, e.lib);
    if (!report.ok()) throw std::runtime_error(e.name + ": " + report.violations.front());
    fs::path pts = dir / e.name;
    pts.replace_extension(".points");
    e.points = parse_points_text(read_file(pts));
    if (row.contains("oracle")) e.oracle = row.at("oracle").get<bool>();
    if (row.contains("bench")) e.bench = row.at("bench").get<bool>();
    out.push_back(std::move(e));
  }
  return out;
}

bool is_smooth(const ProgramDef& prog) {
  for (const auto& instr : prog.instructions)
    if (std::holds_alternative<LibCallInstr>(instr)) return false;
  return true;
}

struct Outcome {
  bool pass = true;
  std::string detail;

  void fail(const std::string& why) {
    if (pass) detail = why;
    pass = false;
  }
};

// criterion 1: at 0 the engine returns derivative 1 for all four identity
// programs (exact in rational replay, 1e-12 in floating point) while the
// fixed relu'(0)=0 convention returns 1, 0, 10, 0.
Outcome criterion_counterexamples(const std::vector<CorpusEntry>& corpus) {
  Outcome out;
  const double naive_expected[] = {1.0, 0.0, 10.0, 0.0};
  const char* names[] = {"f1.prog", "f2.prog", "f3.prog", "f4.prog"};
  const auto conv = NaiveConvention::frameworks_default();
  for (int i = 0; i < 4; ++i) {
    const auto it = std::find_if(corpus.begin(), corpus.end(),
                                 [&](const CorpusEntry& e) { return e.name == names[i]; });
    if (it == corpus.end()) {
      out.fail(std::string(names[i]) + " missing from corpus");
      continue;
    }
    std::vector<Rational> x{Rational(0)};
    for (const Rational& vq : {Rational(1), Rational(-1)}) {
      std::vector<Rational> v{vq};
      auto exact = asd_program_flat<Rational>(it->prog, x, v, it->lib);
      if (exact.u.size() != 1 || exact.u[0] != 1)
        out.fail(it->name + ": rational replay subgradient != 1");
      std::vector<double> xd{0.0}, vd{to_double(vq)};
      auto fp = asd_program_flat<double>(it->prog, xd, vd, it->lib);
      if (std::abs(fp.u[0] - 1.0) > 1e-12)
        out.fail(it->name + ": float subgradient off by more than 1e-12");
    }
    std::vector<double> zero{0.0};
    auto naive = naive_ad(it->prog, zero, it->lib, conv);
    if (std::abs(naive[0] - naive_expected[i]) > 0)
      out.fail(it->name + ": naive baseline != " + std::to_string(naive_expected[i]));
  }
  if (out.pass) out.detail = "engine 1,1,1,1 vs naive 1,0,10,0 at x=0";
  return out;
}

// criterion 2: relu(x^2) at 0 returns subgradient exactly 0 for every seed.
Outcome criterion_relu_square(const std::vector<CorpusEntry>& corpus) {
  Outcome out;
  const auto it = std::find_if(corpus.begin(), corpus.end(),
                               [](const CorpusEntry& e) { return e.name == "relu_sq.prog"; });
  if (it == corpus.end()) {
    out.fail("relu_sq.prog missing");
    return out;
  }
  std::vector<double> zero{0.0};
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    auto r = subgradient(it->prog, zero, seed, it->lib);
    if (r.u.size() != 1 || r.u[0] != 0.0) {
      out.fail("seed " + std::to_string(seed) + " returned a nonzero subgradient");
      break;
    }
  }
  if (out.pass) out.detail = "u = 0 exactly for seeds 0..999";
  return out;
}

// criterion 3: the nonsmooth chain rule holds on 500 random compositions
// h(g_1..g_m), m <= 4, branch depth <= 3, within 1e-8 against the exact
// limiting-derivative oracle (and exactly under rational arithmetic).
Outcome criterion_chain_rule() {
  Outcome out;
  std::mt19937_64 rng(424242);
  int done = 0, kinked = 0;
  while (done < 500) {
    const int m = 1 + static_cast<int>(rng() % 4);
    const int d = 1 + static_cast<int>(rng() % 3);
    const bool forced_kink = done % 2 == 0;

    st::QualifiedGen opt;
    opt.arity = m;
    opt.primitives = 1 + static_cast<int>(rng() % 3);
    opt.zero_constants = forced_kink;
    LibraryRegistry reg = builtin_registry();
    reg.add(st::random_qualified_library(rng, "h", opt));

    std::vector<ProgramDef> gs;
    std::vector<Polynomial> gpolys;
    st::PolyGenOptions gopt;
    gopt.instructions = 1 + static_cast<int>(rng() % 3);
    gopt.zero_constants = forced_kink;
    for (int i = 0; i < m; ++i) {
      gs.push_back(st::random_polynomial_program(rng, d, gopt));
      gpolys.push_back(st::program_polynomial(gs.back()));
    }
    const auto x = forced_kink ? std::vector<Rational>(static_cast<std::size_t>(d), Rational(0))
                               : st::rand_point(rng, d, 2, 1);
    const auto v = st::rand_direction(rng, d, 2);

    std::vector<Rational> gx;
    std::vector<std::vector<Rational>> jac;
    std::vector<Rational> dg;
    for (const auto& gp : gpolys) {
      gx.push_back(gp.evaluate_exact(x));
      std::vector<Rational> row;
      Rational dot(0);
      for (int c = 0; c < d; ++c) {
        row.push_back(gp.derivative(c).evaluate_exact(x));
        dot += row.back() * v[static_cast<std::size_t>(c)];
      }
      jac.push_back(std::move(row));
      dg.push_back(std::move(dot));
    }

    auto composed = st::compose_with_library(d, gs, "h");
    std::vector<Rational> w;
    try {
      w = exact_piece_gradient(composed, x, v, reg).gradient;
    } catch (const ExtractionLimitError&) {
      continue;  // regenerate; does not count toward the 500
    }
    ++done;
    bool touch = false;
    for (const auto& y : gx) touch = touch || y == 0;
    kinked += touch ? 1 : 0;

    auto hr = asd_library<Rational>(reg.at("h"), gx, dg);
    auto hd = asd_library<double>(reg.at("h"), to_double_vec(gx), to_double_vec(dg));
    for (int c = 0; c < d && out.pass; ++c) {
      Rational rhs(0);
      double rhs_d = 0;
      for (int i = 0; i < m; ++i) {
        rhs += jac[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)] *
               hr.out.u[static_cast<std::size_t>(i)];
        rhs_d += to_double(jac[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)]) *
                 hd.out.u[static_cast<std::size_t>(i)];
      }
      if (w[static_cast<std::size_t>(c)] != rhs)
        out.fail("exact chain-rule identity violated on composition " + std::to_string(done));
      if (std::abs(to_double(w[static_cast<std::size_t>(c)]) - rhs_d) > 1e-8)
        out.fail("float chain-rule residual above 1e-8 on composition " + std::to_string(done));
    }
    if (!out.pass) break;
  }
  if (out.pass)
    out.detail = "500 compositions, " + std::to_string(kinked) + " through active kinks";
  return out;
}

// criterion 4: across the in-bounds corpus, the flat engine's subgradient
// replayed in rational arithmetic equals the exact piece-polynomial gradient
// for 100 (x, v) pairs per program.
Outcome criterion_exact_oracle(const std::vector<CorpusEntry>& corpus) {
  Outcome out;
  std::mt19937_64 rng(515151);
  int programs = 0;
  for (const auto& e : corpus) {
    if (!e.oracle) continue;
    std::vector<PieceDescription> pieces;
    try {
      pieces = extract_program_pieces(e.prog, e.lib);
    } catch (const ExtractionLimitError&) {
      out.fail(e.name + ": marked oracle-eligible but extraction overruns");
      continue;
    }
    ++programs;
    const int d = e.prog.input_arity;
    std::vector<std::pair<std::vector<Rational>, std::vector<Rational>>> queries;
    for (const auto& qp : e.points)
      if (qp.dir) queries.emplace_back(qp.at, *qp.dir);
    while (queries.size() < 100) {
      auto x = st::rand_point(rng, d, 4, 2);
      if (queries.size() % 3 == 0) x.assign(static_cast<std::size_t>(d), Rational(0));
      queries.emplace_back(std::move(x), st::rand_direction(rng, d, 4));
    }
    for (const auto& [x, v] : queries) {
      const auto& sel = piece_select(pieces, x, v);
      auto replay = asd_program_flat<Rational>(e.prog, x, v, e.lib);
      for (int c = 0; c < d; ++c) {
        if (replay.u[static_cast<std::size_t>(c)] != sel.piece.derivative(c).evaluate_exact(x)) {
          out.fail(e.name + ": replayed subgradient differs from the piece gradient");
          break;
        }
      }
      if (!out.pass) break;
    }
  }
  if (programs < 30) out.fail("fewer than 30 oracle-eligible corpus programs");
  if (out.pass)
    out.detail = std::to_string(programs) + " programs x 100 exact (x, v) replays";
  return out;
}

// criterion 5: hard metered bounds over the corpus: flat <= 6, nested <= 10,
// and value+reverse <= 5 on the smooth subset.
Outcome criterion_cost_bounds(const std::vector<CorpusEntry>& corpus) {
  Outcome out;
  double worst_flat = 0, worst_nested = 0, worst_reverse = 0;
  for (const auto& e : corpus) {
    if (!e.bench) continue;
    int idx = 0;
    for (const auto& qp : e.points) {
      ++idx;
      const auto x = to_double_vec(qp.at);
      std::vector<double> v;
      if (qp.dir) {
        v = to_double_vec(*qp.dir);
      } else {
        std::mt19937_64 rng(static_cast<std::uint64_t>(idx));
        v = sample_direction(e.prog.input_arity, rng);
      }
      auto flat = asd_program_flat<double>(e.prog, x, v, e.lib);
      auto nested = asd_program<double>(e.prog, x, v, e.lib);
      worst_flat = std::max(worst_flat, flat.cost.ratio);
      worst_nested = std::max(worst_nested, nested.cost.ratio);
      if (flat.cost.ratio > 6.0) out.fail(e.name + ": flat ratio above 6");
      if (nested.cost.ratio > 10.0) out.fail(e.name + ": nested ratio above 10");
      if (is_smooth(e.prog)) {
        auto rg = reverse_gradient<double>(e.prog, x, e.lib);
        worst_reverse = std::max(worst_reverse, rg.cost.ratio);
        if (rg.cost.ratio > 5.0) out.fail(e.name + ": reverse-only ratio above 5");
      }
    }
  }
  if (out.pass) {
    std::ostringstream os;
    os.precision(3);
    os << "worst flat " << worst_flat << " <= 6, nested " << worst_nested
       << " <= 10, smooth reverse " << worst_reverse << " <= 5";
    out.detail = os.str();
  }
  return out;
}

// criterion 6: relu_bad fails the qualification diagnostic at (0, -1) with
// the cubic witness; every qualified builtin passes 1000 samples including
// points forced onto the constraint zero sets.
Outcome criterion_cq(const std::vector<CorpusEntry>&) {
  Outcome out;
  const LibraryRegistry lib = builtin_registry();
  std::vector<Rational> zero{Rational(0)}, left{Rational(-1)};
  auto bad = cq_diagnostic(lib.at("relu_bad"), zero, left);
  if (bad.status != CqResult::Status::fail)
    out.fail("relu_bad passed the diagnostic at (0, -1)");
  else if (bad.witness->constraint.to_string() != "x1^3")
    out.fail("relu_bad witness constraint is not the cube");

  std::mt19937_64 rng(616161);
  for (const char* name : {"relu", "abs", "max2", "min2"}) {
    const auto& fn = lib.at(name);
    for (int s = 0; s < 1000; ++s) {
      std::vector<Rational> x, v;
      for (int i = 0; i < fn.arity; ++i) {
        x.push_back(st::rand_dyadic(rng, 3, 2));
        v.push_back(st::rand_dyadic(rng, 3, 2));
      }
      bool vz = true;
      for (const auto& c : v) vz = vz && c == 0;
      if (vz) v[0] = 1;
      if (s % 2 == 0) {  // land on the constraint zero set
        if (fn.arity == 1)
          x[0] = 0;
        else
          x[1] = x[0];
      }
      if (!cq_diagnostic(fn, x, v).passed()) {
        out.fail(std::string(name) + " failed a sampled qualification query");
        break;
      }
    }
  }
  if (out.pass) out.detail = "cubic witness caught; 4 builtins x 1000 samples clean";
  return out;
}

// criterion 7: hull membership of returned subgradients at every corpus
// query point with d <= 4; for abs at 0 both endpoint subgradients occur
// across seeds and both are members.
Outcome criterion_hull(const std::vector<CorpusEntry>& corpus) {
  Outcome out;
  int checks = 0;
  for (const auto& e : corpus) {
    if (!e.oracle || e.prog.input_arity > 4) continue;
    int idx = 0;
    for (const auto& qp : e.points) {
      ++idx;
      const auto x = to_double_vec(qp.at);
      std::vector<double> v;
      if (qp.dir) {
        v = to_double_vec(*qp.dir);
      } else {
        std::mt19937_64 rng(static_cast<std::uint64_t>(idx));
        v = sample_direction(e.prog.input_arity, rng);
      }
      auto r = asd_program_flat<double>(e.prog, x, v, e.lib);
      auto hull = clarke_hull_check(e.prog, x, r.u, e.lib, 32, 1e-6,
                                    1000 + static_cast<std::uint64_t>(idx));
      ++checks;
      if (hull.status == HullCheck::Status::inconclusive) {
        out.fail(e.name + ": hull sampling inconclusive");
      } else if (!hull.member()) {
        std::ostringstream os;
        os << e.name << ": subgradient outside the sampled hull (distance " << hull.distance
           << ")";
        out.fail(os.str());
      }
    }
  }

  const auto it = std::find_if(corpus.begin(), corpus.end(),
                               [](const CorpusEntry& e) { return e.name == "abs.prog"; });
  if (it == corpus.end()) {
    out.fail("abs.prog missing");
  } else {
    std::vector<double> zero{0.0};
    std::set<double> seen;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      auto r = subgradient(it->prog, zero, seed, it->lib);
      seen.insert(r.u[0]);
      auto hull = clarke_hull_check(it->prog, zero, r.u, it->lib, 32, 1e-6, 77 + seed);
      if (!hull.member()) out.fail("abs subgradient rejected by the hull oracle");
    }
    if (seen != std::set<double>({-1.0, 1.0}))
      out.fail("abs at 0 did not produce both endpoint subgradients across seeds");
  }
  if (out.pass)
    out.detail = std::to_string(checks) + " membership checks at tol 1e-6, 32 directions";
  return out;
}

// criterion 8: engine directional derivatives match extrapolated one-sided
// finite differences within the error estimate, which itself stays <= 1e-6.
Outcome criterion_fd(const std::vector<CorpusEntry>& corpus) {
  Outcome out;
  int checks = 0;
  double worst = 0;
  for (const auto& e : corpus) {
    if (!e.oracle) continue;
    int idx = 0;
    for (const auto& qp : e.points) {
      ++idx;
      const auto x = to_double_vec(qp.at);
      std::vector<double> v;
      if (qp.dir) {
        v = to_double_vec(*qp.dir);
      } else {
        std::mt19937_64 rng(static_cast<std::uint64_t>(idx));
        v = sample_direction(e.prog.input_arity, rng);
      }
      auto r = asd_program_flat<double>(e.prog, x, v, e.lib);
      auto fd = fd_directional(e.prog, x, v, e.lib);
      const double err = std::abs(r.deriv - fd.value);
      // roundoff floor: the quotient itself carries ~eps-scale noise
      const double budget = std::max(fd.error_estimate, 64 * 1e-16 * (1.0 + std::abs(r.deriv)));
      worst = std::max(worst, err);
      ++checks;
      if (fd.error_estimate > 1e-6)
        out.fail(e.name + ": finite-difference error estimate above 1e-6");
      if (err > budget) {
        std::ostringstream os;
        os << e.name << ": |d - fd| = " << err << " exceeds the estimate " << budget;
        out.fail(os.str());
      }
    }
  }
  if (out.pass) {
    std::ostringstream os;
    os << checks << " points, worst residual " << worst;
    out.detail = os.str();
  }
  return out;
}

}  // namespace

int main() {
  std::vector<CorpusEntry> corpus;
  try {
    corpus = load_corpus();
  } catch (const std::exception& e) {
    std::printf("[FAIL] corpus load: %s\n", e.what());
    return 1;
  }

  struct Criterion {
    int id;
    const char* name;
    std::function<Outcome(const std::vector<CorpusEntry>&)> run;
  };
  const Criterion criteria[] = {
      {1, "counterexample suite (f1..f4 vs fixed-convention baseline)",
       criterion_counterexamples},
      {2, "relu(x^2) zero subgradient across 1000 seeds", criterion_relu_square},
      {3, "nonsmooth chain rule on 500 random compositions",
       [](const std::vector<CorpusEntry>&) { return criterion_chain_rule(); }},
      {4, "exact piece-oracle equivalence across the corpus", criterion_exact_oracle},
      {5, "metered cost factors (flat 6, nested 10, smooth reverse 5)", criterion_cost_bounds},
      {6, "constraint-qualification diagnostics", criterion_cq},
      {7, "Clarke hull membership of returned subgradients", criterion_hull},
      {8, "directional derivatives vs one-sided finite differences", criterion_fd},
  };

  int failures = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome r;
    try {
      r = c.run(corpus);
    } catch (const std::exception& e) {
      r.pass = false;
      r.detail = std::string("exception: ") + e.what();
    }
    const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                        std::chrono::steady_clock::now() - start)
                        .count();
    std::printf("[%s] criterion %d: %s - %s (%lld ms)\n", r.pass ? "PASS" : "FAIL", c.id, c.name,
                r.detail.c_str(), static_cast<long long>(ms));
    std::fflush(stdout);
    failures += r.pass ? 0 : 1;
  }
  if (failures) std::printf("%d criterion(s) failed\n", failures);
  return failures == 0 ? 0 : 1;
}
