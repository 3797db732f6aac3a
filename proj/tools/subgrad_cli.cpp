// Command-line surface for the subdifferentiation engine: run subgradient
// queries, cross-check them against the oracles, benchmark metered cost
// ratios, reproduce the fixed-convention baseline, and inspect pieces.

#include <cinttypes>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "subgrad/report.hpp"
#include "subgrad/subgrad.hpp"

namespace {

using nlohmann::json;
using namespace subgrad;

constexpr int kExitParse = 2;
constexpr int kExitDimension = 3;
constexpr int kExitOracle = 4;
constexpr int kExitBenchBound = 5;
constexpr int kExitExtraction = 6;

struct CliError {
  int code;
  std::string message;
};

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CliError{kExitParse, "cannot open '" + path + "'"};
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct LoadedProgram {
  ProgramDef prog;
  LibraryRegistry lib;
};

/// Registration-time sampled qualification check for user deflib blocks:
/// random rational points plus all-zero and coordinate-zero kink probes.
void sampled_cq_gate(const LibraryFunction& fn) {
  std::mt19937_64 rng(0xC0FFEE);
  const int d = fn.arity;
  auto sample_entry = [&rng]() { return make_rational(static_cast<long>(rng() % 33) - 16, 8); };
  for (int s = 0; s < 64; ++s) {
    std::vector<Rational> x(static_cast<std::size_t>(d)), v(static_cast<std::size_t>(d));
    for (auto& c : v) c = sample_entry();
    bool vz = true;
    for (auto& c : v) vz = vz && c == 0;
    if (vz) v[0] = 1;
    if (s % 4 == 1) {
      // leave x at the origin, the usual kink location
    } else if (s % 4 == 2 && d > 1) {
      for (std::size_t i = 1; i < x.size(); ++i) x[i] = sample_entry();
    } else {
      for (auto& c : x) c = sample_entry();
    }
    CqResult r = cq_diagnostic(fn, x, v);
    if (r.status == CqResult::Status::fail) {
      throw CliError{kExitOracle, "library function '" + fn.name +
                                      "' fails constraint qualification: " +
                                      r.witness->describe() +
                                      "\n(use --no-cq-check to register it anyway)"};
    }
    if (r.status == CqResult::Status::inconclusive) return;  // too large to sample; allow
  }
}

LoadedProgram load_program(const std::string& path, bool no_cq_check) {
  ParsedFile parsed;
  try {
    parsed = parse_program_text(read_file(path));
  } catch (const ParseError& e) {
    throw CliError{kExitParse, path + ":" + std::to_string(e.line) + ":" +
                                   std::to_string(e.column) + ": " + e.what()};
  }
  LoadedProgram out;
  out.lib = builtin_registry();
  for (auto& fn : parsed.libs) {
    if (!no_cq_check) sampled_cq_gate(fn);
    try {
      out.lib.add(std::move(fn));
    } catch (const std::invalid_argument& e) {
      throw CliError{kExitParse, path + ": " + e.what()};
    }
  }
  out.prog = std::move(parsed.program);
  auto report = validate(out.prog, out.lib);
  if (!report.ok()) {
    std::string msg = path + ": invalid program:";
    for (const auto& v : report.violations) msg += "\n  " + v;
    throw CliError{kExitParse, msg};
  }
  return out;
}

std::vector<Rational> parse_csv_rationals(const std::string& csv, const std::string& what) {
  std::vector<Rational> out;
  std::size_t start = 0;
  while (start <= csv.size()) {
    std::size_t comma = csv.find(',', start);
    std::string piece = csv.substr(start, comma == std::string::npos ? std::string::npos
                                                                     : comma - start);
    const auto b = piece.find_first_not_of(" \t");
    if (b == std::string::npos) throw CliError{kExitParse, "empty entry in " + what};
    const auto e = piece.find_last_not_of(" \t");
    auto q = parse_rational(std::string_view(piece).substr(b, e - b + 1));
    if (!q) throw CliError{kExitParse, "malformed number '" + piece + "' in " + what};
    out.push_back(std::move(*q));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

std::vector<Rational> require_point(const std::string& csv, int dim, const std::string& what) {
  auto xs = parse_csv_rationals(csv, what);
  if (static_cast<int>(xs.size()) != dim)
    throw CliError{kExitDimension, what + " has dimension " + std::to_string(xs.size()) +
                                       ", program expects " + std::to_string(dim)};
  return xs;
}

std::uint64_t default_seed(const std::optional<std::uint64_t>& flag) {
  if (flag) return *flag;
  if (const char* env = std::getenv("SUBGRAD_SEED")) {
    char* end = nullptr;
    const unsigned long long v = std::strtoull(env, &end, 10);
    if (end && *end == '\0') return static_cast<std::uint64_t>(v);
  }
  return 0;
}

std::string format_vec(std::span<const double> xs) {
  std::ostringstream os;
  os.precision(17);
  for (std::size_t i = 0; i < xs.size(); ++i) os << (i ? "," : "") << xs[i];
  return os.str();
}

// ---- run --------------------------------------------------------------------

struct RunArgs {
  std::string file;
  std::string at;
  std::optional<std::uint64_t> seed;
  std::string dir;
  std::string variant = "flat";
  double kink_tol = 0.0;
  int cross_check = 0;
  bool json_out = false;
  bool no_cq_check = false;
};

int cmd_run(const RunArgs& args) {
  auto loaded = load_program(args.file, args.no_cq_check);
  auto at = require_point(args.at, loaded.prog.input_arity, "--at");
  const auto at_d = to_double_vec(at);
  const Variant variant = args.variant == "nested" ? Variant::nested : Variant::flat;
  AsdOptions opt{args.kink_tol};

  std::vector<double> dir;
  std::optional<std::uint64_t> used_seed;
  if (!args.dir.empty()) {
    dir = to_double_vec(require_point(args.dir, loaded.prog.input_arity, "--dir"));
  } else {
    used_seed = default_seed(args.seed);
    std::mt19937_64 rng(*used_seed);
    dir = sample_direction(loaded.prog.input_arity, rng);
  }

  auto r = run_asd<double>(loaded.prog, at_d, dir, loaded.lib, variant, opt);
  auto rep = make_run_report(args.file, at_d, used_seed, dir, r, variant);
  json j = to_json(rep);

  if (args.cross_check > 0) {
    const std::uint64_t base = default_seed(args.seed);
    std::map<std::vector<double>, int> seen;
    for (int k = 0; k < args.cross_check; ++k) {
      std::mt19937_64 rng(base + static_cast<std::uint64_t>(k));
      auto vk = sample_direction(loaded.prog.input_arity, rng);
      auto rk = run_asd<double>(loaded.prog, at_d, vk, loaded.lib, variant, opt);
      seen[rk.u] += 1;
    }
    json distinct = json::array();
    for (const auto& [u, count] : seen)
      distinct.push_back(json{{"subgradient", u}, {"count", count}});
    j["cross_check"] = json{{"seeds", args.cross_check},
                            {"distinct", distinct},
                            {"disagreement", seen.size() > 1}};
  }

  if (args.json_out) {
    std::cout << j.dump(2) << "\n";
  } else {
    std::cout << "program: " << args.file << "\n";
    std::cout << "at: " << format_vec(at_d) << "\n";
    std::cout << "direction: " << format_vec(dir);
    if (used_seed) std::cout << " (seed " << *used_seed << ")";
    std::cout << "\nvalue: " << r.value << "\n";
    std::cout << "directional derivative: " << r.deriv << "\n";
    std::cout << "subgradient: " << format_vec(r.u) << "\n";
    std::printf("cost: runtime_f=%" PRId64 " runtime_asd=%" PRId64 " ratio=%.4f\n",
                r.cost.runtime_f, r.cost.runtime_asd, r.cost.ratio);
    std::cout << "variant: " << to_string(variant) << "\n";
    if (j.contains("cross_check")) {
      const auto& cc = j["cross_check"];
      std::cout << "cross-check over " << cc["seeds"] << " seeds: "
                << (cc["disagreement"].get<bool>() ? "subgradients disagree (all reported)"
                                                   : "all seeds agree")
                << "\n";
      for (const auto& d : cc["distinct"])
        std::cout << "  u=" << d["subgradient"].dump() << " x" << d["count"] << "\n";
    }
  }
  return 0;
}

// ---- check ------------------------------------------------------------------

struct CheckArgs {
  std::string file;
  std::string at;
  std::string dir;
  std::optional<std::uint64_t> seed;
  int dirs = 32;
  double tol = 1e-6;
  bool json_out = false;
  bool no_cq_check = false;
  int max_branches = 20;
};

int cmd_check(const CheckArgs& args) {
  auto loaded = load_program(args.file, args.no_cq_check);
  const int d = loaded.prog.input_arity;
  auto at = require_point(args.at, d, "--at");
  const auto at_d = to_double_vec(at);

  std::vector<Rational> dir_q;
  std::optional<std::uint64_t> used_seed;
  if (!args.dir.empty()) {
    dir_q = require_point(args.dir, d, "--dir");
  } else {
    used_seed = default_seed(args.seed);
    std::mt19937_64 rng(*used_seed);
    dir_q = to_rational_vec(sample_direction(d, rng));
  }
  const auto dir_d = to_double_vec(dir_q);

  auto engine = asd_program_flat<double>(loaded.prog, at_d, dir_d, loaded.lib);

  struct Row {
    std::string name;
    std::string status;  // pass / fail / skipped
    std::string detail;
  };
  std::vector<Row> rows;
  bool any_fail = false;

  // exact oracle under rational replay
  ExtractLimits limits;
  limits.max_branch_nodes = args.max_branches;
  try {
    auto exact = exact_piece_gradient(loaded.prog, at, dir_q, loaded.lib, limits);
    auto replay = asd_program_flat<Rational>(loaded.prog, at, dir_q, loaded.lib);
    bool same = replay.u.size() == exact.gradient.size();
    std::string witness;
    for (std::size_t i = 0; same && i < replay.u.size(); ++i) {
      if (replay.u[i] != exact.gradient[i]) {
        same = false;
        witness = "component " + std::to_string(i + 1) + ": engine " +
                  to_string(replay.u[i]) + " vs piece gradient " + to_string(exact.gradient[i]) +
                  " (piece " + exact.piece.piece.to_string() + ")";
      }
    }
    rows.push_back({"exact-piece-gradient", same ? "pass" : "fail", witness});
    any_fail = any_fail || !same;
  } catch (const ExtractionLimitError& e) {
    rows.push_back({"exact-piece-gradient", "skipped", e.what()});
  }

  // one-sided directional derivative
  {
    auto fd = fd_directional(loaded.prog, at_d, dir_d, loaded.lib);
    const double err = std::abs(engine.deriv - fd.value);
    const double budget = std::max(fd.error_estimate, args.tol);
    const bool ok = err <= budget;
    std::ostringstream os;
    os.precision(12);
    os << "engine " << engine.deriv << " vs fd " << fd.value << " (|diff| " << err
       << ", budget " << budget << ")";
    rows.push_back({"directional-derivative", ok ? "pass" : "fail", os.str()});
    any_fail = any_fail || !ok;
  }

  // Clarke hull membership
  if (d <= 4) {
    auto hull = clarke_hull_check(loaded.prog, at_d, engine.u, loaded.lib, args.dirs, args.tol,
                                  default_seed(args.seed) + 1);
    std::ostringstream os;
    os.precision(12);
    if (hull.status == HullCheck::Status::inconclusive) {
      rows.push_back({"clarke-hull", "skipped", hull.note});
    } else {
      os << "distance " << hull.distance << " over " << hull.vertex_count << " vertices";
      const bool ok = hull.member();
      rows.push_back({"clarke-hull", ok ? "pass" : "fail", os.str()});
      any_fail = any_fail || !ok;
    }
  } else {
    rows.push_back({"clarke-hull", "skipped", "input dimension above oracle scale (d <= 4)"});
  }

  if (args.json_out) {
    json j{{"command", "check"}, {"program", args.file}, {"at", at_d},
           {"direction", dir_d}, {"pass", !any_fail}};
    json jrows = json::array();
    for (const auto& row : rows)
      jrows.push_back(json{{"oracle", row.name}, {"status", row.status}, {"detail", row.detail}});
    j["rows"] = jrows;
    std::cout << j.dump(2) << "\n";
  } else {
    std::cout << "check " << args.file << " at (" << format_vec(at_d) << ") dir ("
              << format_vec(dir_d) << ")\n";
    for (const auto& row : rows) {
      std::printf("  %-24s %-7s %s\n", row.name.c_str(), row.status.c_str(),
                  row.detail.c_str());
    }
    std::cout << (any_fail ? "FAIL" : "PASS") << "\n";
  }
  return any_fail ? kExitOracle : 0;
}

// ---- bench ------------------------------------------------------------------

struct BenchArgs {
  std::string corpus_dir;
  std::string variant = "both";
  bool json_out = false;
};

bool is_smooth(const ProgramDef& prog) {
  for (const auto& instr : prog.instructions)
    if (std::holds_alternative<LibCallInstr>(instr)) return false;
  return true;
}

int cmd_bench(const BenchArgs& args) {
  namespace fs = std::filesystem;
  std::vector<fs::path> progs;
  for (const auto& entry : fs::directory_iterator(args.corpus_dir))
    if (entry.path().extension() == ".prog") progs.push_back(entry.path());
  std::sort(progs.begin(), progs.end());
  if (progs.empty()) throw CliError{kExitParse, "no .prog files in " + args.corpus_dir};

  const bool run_flat = args.variant != "nested";
  const bool run_nested = args.variant != "flat";
  bool violated = false;
  json jrows = json::array();
  if (!args.json_out)
    std::printf("%-28s %6s %9s %9s %9s\n", "program", "points", "flat", "nested", "reverse");

  for (const auto& path : progs) {
    auto loaded = load_program(path.string(), false);
    fs::path pts_path = path;
    pts_path.replace_extension(".points");
    std::vector<QueryPoint> points;
    if (fs::exists(pts_path)) {
      try {
        points = parse_points_text(read_file(pts_path.string()));
      } catch (const ParseError& e) {
        throw CliError{kExitParse, pts_path.string() + ":" + std::to_string(e.line) + ": " +
                                       e.what()};
      }
    }
    if (points.empty())
      throw CliError{kExitParse, "no query points for " + path.string() +
                                     " (expected sibling .points file)"};

    double flat_max = 0, nested_max = 0, reverse_max = 0;
    const bool smooth = is_smooth(loaded.prog);
    int idx = 0;
    for (const auto& qp : points) {
      ++idx;
      if (static_cast<int>(qp.at.size()) != loaded.prog.input_arity)
        throw CliError{kExitDimension, path.string() + " point " + std::to_string(idx) +
                                           ": dimension mismatch"};
      const auto x = to_double_vec(qp.at);
      std::vector<double> v;
      if (qp.dir) {
        if (static_cast<int>(qp.dir->size()) != loaded.prog.input_arity)
          throw CliError{kExitDimension, path.string() + " point " + std::to_string(idx) +
                                             ": direction dimension mismatch"};
        v = to_double_vec(*qp.dir);
      } else {
        std::mt19937_64 rng(static_cast<std::uint64_t>(idx));
        v = sample_direction(loaded.prog.input_arity, rng);
      }
      if (run_flat) {
        auto r = asd_program_flat<double>(loaded.prog, x, v, loaded.lib);
        flat_max = std::max(flat_max, r.cost.ratio);
      }
      if (run_nested) {
        auto r = asd_program<double>(loaded.prog, x, v, loaded.lib);
        nested_max = std::max(nested_max, r.cost.ratio);
      }
      if (smooth) {
        auto r = reverse_gradient<double>(loaded.prog, x, loaded.lib);
        reverse_max = std::max(reverse_max, r.cost.ratio);
      }
    }
    const bool bad = (run_flat && flat_max > 6.0) || (run_nested && nested_max > 10.0) ||
                     (smooth && reverse_max > 5.0);
    violated = violated || bad;
    if (args.json_out) {
      json row{{"program", path.string()},
               {"points", points.size()},
               {"smooth", smooth},
               {"within_bounds", !bad}};
      if (run_flat) row["flat_max_ratio"] = flat_max;
      if (run_nested) row["nested_max_ratio"] = nested_max;
      if (smooth) row["reverse_max_ratio"] = reverse_max;
      jrows.push_back(std::move(row));
    } else {
      const std::string name = path.filename().string();
      auto cell = [](bool on, double v) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.3f", v);
        return on ? std::string(buf) : std::string("-");
      };
      std::printf("%-28s %6zu %9s %9s %9s%s\n", name.c_str(), points.size(),
                  cell(run_flat, flat_max).c_str(), cell(run_nested, nested_max).c_str(),
                  cell(smooth, reverse_max).c_str(), bad ? "  ** bound violated" : "");
    }
  }

  if (args.json_out) {
    json j{{"command", "bench"},
           {"corpus", args.corpus_dir},
           {"bounds", {{"flat", 6.0}, {"nested", 10.0}, {"reverse_smooth", 5.0}}},
           {"pass", !violated},
           {"rows", jrows}};
    std::cout << j.dump(2) << "\n";
  } else {
    std::cout << "bounds: flat<=6 nested<=10 reverse<=5 (smooth subset): "
              << (violated ? "VIOLATED" : "ok") << "\n";
  }
  return violated ? kExitBenchBound : 0;
}

// ---- naive ------------------------------------------------------------------

struct NaiveArgs {
  std::string file;
  std::string at;
  std::optional<double> relu_zero;
  std::optional<std::uint64_t> seed;
  bool json_out = false;
  bool no_cq_check = false;
};

int cmd_naive(const NaiveArgs& args) {
  auto loaded = load_program(args.file, args.no_cq_check);
  auto at = require_point(args.at, loaded.prog.input_arity, "--at");
  const auto at_d = to_double_vec(at);

  NaiveConvention conv = NaiveConvention::frameworks_default();
  if (args.relu_zero) conv.set("relu", {*args.relu_zero});

  auto naive = naive_ad(loaded.prog, at_d, loaded.lib, conv);
  auto correct = subgradient(loaded.prog, at_d, default_seed(args.seed), loaded.lib);

  if (args.json_out) {
    json j{{"command", "naive"},
           {"program", args.file},
           {"at", at_d},
           {"naive_gradient", naive},
           {"subgradient", correct.u},
           {"seed", correct.seed},
           {"relu_zero", args.relu_zero ? json(*args.relu_zero) : json(0.0)}};
    std::cout << j.dump(2) << "\n";
  } else {
    std::cout << "program: " << args.file << "\n";
    std::cout << "at: " << format_vec(at_d) << "\n";
    std::cout << "naive (fixed kink convention): " << format_vec(naive) << "\n";
    std::cout << "engine subgradient (seed " << correct.seed << "): " << format_vec(correct.u)
              << "\n";
  }
  return 0;
}

// ---- pieces -----------------------------------------------------------------

struct PiecesArgs {
  std::string file;
  std::string at;
  std::string dir;
  bool json_out = false;
  bool no_cq_check = false;
  int max_branches = 20;
  std::size_t max_terms = 100000;
};

int cmd_pieces(const PiecesArgs& args) {
  auto loaded = load_program(args.file, args.no_cq_check);
  ExtractLimits limits;
  limits.max_branch_nodes = args.max_branches;
  limits.max_terms = args.max_terms;

  std::vector<PieceDescription> pieces;
  try {
    pieces = extract_program_pieces(loaded.prog, loaded.lib, limits);
  } catch (const ExtractionLimitError& e) {
    throw CliError{kExitExtraction, std::string("extraction bound exceeded: ") + e.what()};
  }

  std::optional<std::size_t> selected;
  std::vector<std::string> warnings;
  std::vector<Rational> at, dir;
  if (args.at.empty() && !args.dir.empty())
    throw CliError{kExitParse, "--dir needs --at for piece selection"};
  if (!args.at.empty()) {
    at = require_point(args.at, loaded.prog.input_arity, "--at");
    if (args.dir.empty())
      throw CliError{kExitParse, "--at needs --dir for piece selection"};
    dir = require_point(args.dir, loaded.prog.input_arity, "--dir");
    const PieceDescription& sel = piece_select(pieces, at, dir);
    for (std::size_t i = 0; i < pieces.size(); ++i)
      if (&pieces[i] == &sel) selected = i;

    // Per-call qualification warnings at the reached argument points.
    for (const auto& site : asd_call_sites<Rational>(loaded.prog, at, dir, loaded.lib)) {
      const LibraryFunction& fn = loaded.lib.at(site.function);
      std::vector<Rational> ax, av;
      for (const auto& dual : site.args) {
        ax.push_back(dual.a);
        av.push_back(dual.d);
      }
      CqResult cq = cq_diagnostic(fn, ax, av, limits);
      if (cq.status == CqResult::Status::fail)
        warnings.push_back("constraint qualification violated by call to '" + site.function +
                           "' at node " + std::to_string(site.node) + ": " +
                           cq.witness->describe());
    }
  }

  if (args.json_out) {
    json jp = json::array();
    for (const auto& piece : pieces) {
      json constraints = json::array();
      for (const auto& [h, s] : piece.constraints)
        constraints.push_back(json{{"polynomial", h.to_string()}, {"sign", s}});
      jp.push_back(json{{"branch_word", piece.z.to_string()},
                        {"constraints", constraints},
                        {"polynomial", piece.piece.to_string()}});
    }
    json j{{"command", "pieces"}, {"program", args.file}, {"pieces", jp},
           {"warnings", warnings}};
    if (selected) j["selected"] = *selected;
    std::cout << j.dump(2) << "\n";
  } else {
    std::cout << pieces.size() << " piece(s) of " << args.file << "\n";
    for (std::size_t i = 0; i < pieces.size(); ++i) {
      const auto& piece = pieces[i];
      std::cout << "piece " << i << " [" << piece.z.to_string() << "]"
                << (selected && *selected == i ? "  <-- selected by --dir" : "") << "\n";
      for (const auto& [h, s] : piece.constraints)
        std::cout << "  where " << h.to_string() << (s > 0 ? " >= 0" : " < 0") << "\n";
      std::cout << "  value " << piece.piece.to_string() << "\n";
      if (selected && *selected == i) {
        std::cout << "  gradient (";
        for (int c = 0; c < loaded.prog.input_arity; ++c)
          std::cout << (c ? "," : "")
                    << to_string(piece.piece.derivative(c).evaluate_exact(at));
        std::cout << ")\n";
      }
    }
    for (const auto& w : warnings) std::cout << "warning: " << w << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"automatic subdifferentiation over branching programs"};
  app.require_subcommand(1);

  RunArgs run_args;
  auto* run = app.add_subcommand("run", "evaluate value, directional derivative and subgradient");
  run->add_option("program", run_args.file, "program file (.prog)")->required();
  run->add_option("--at", run_args.at, "query point, comma-separated (decimals or p/q)")
      ->required();
  run->add_option("--seed", run_args.seed, "direction seed (default: SUBGRAD_SEED or 0)");
  run->add_option("--dir", run_args.dir, "explicit direction instead of a sampled one");
  run->add_option("--variant", run_args.variant, "nested|flat (default flat)")
      ->check(CLI::IsMember({"nested", "flat"}));
  run->add_option("--kink-tol", run_args.kink_tol,
                  "treat |test| <= tol as a tie (nonconforming escape hatch; default 0)");
  run->add_option("--cross-check", run_args.cross_check,
                  "rerun with k independent seeds and report distinct subgradients");
  run->add_flag("--json", run_args.json_out, "machine-readable output");
  run->add_flag("--no-cq-check", run_args.no_cq_check,
                "skip the registration-time sampled qualification diagnostic");

  CheckArgs check_args;
  auto* check = app.add_subcommand("check", "verify a run against the independent oracles");
  check->add_option("program", check_args.file)->required();
  check->add_option("--at", check_args.at)->required();
  check->add_option("--dir", check_args.dir, "direction (default: sampled from seed)");
  check->add_option("--seed", check_args.seed);
  check->add_option("--dirs", check_args.dirs, "directions sampled for the hull oracle");
  check->add_option("--tol", check_args.tol, "hull membership tolerance");
  check->add_option("--max-branches", check_args.max_branches, "piece extraction bound");
  check->add_flag("--json", check_args.json_out);
  check->add_flag("--no-cq-check", check_args.no_cq_check);

  BenchArgs bench_args;
  auto* bench = app.add_subcommand("bench", "cost-ratio table over a corpus directory");
  bench->add_option("corpus", bench_args.corpus_dir, "directory of .prog/.points pairs")
      ->required();
  bench->add_option("--variant", bench_args.variant, "both|nested|flat")
      ->check(CLI::IsMember({"both", "nested", "flat"}));
  bench->add_flag("--json", bench_args.json_out);

  NaiveArgs naive_args;
  auto* naive = app.add_subcommand("naive", "fixed-convention baseline vs the engine");
  naive->add_option("program", naive_args.file)->required();
  naive->add_option("--at", naive_args.at)->required();
  naive->add_option("--relu-zero", naive_args.relu_zero, "value used for relu'(0) (default 0)");
  naive->add_option("--seed", naive_args.seed);
  naive->add_flag("--json", naive_args.json_out);
  naive->add_flag("--no-cq-check", naive_args.no_cq_check);

  PiecesArgs pieces_args;
  auto* pieces = app.add_subcommand("pieces", "list the program's pieces and constraints");
  pieces->add_option("program", pieces_args.file)->required();
  pieces->add_option("--at", pieces_args.at);
  pieces->add_option("--dir", pieces_args.dir);
  pieces->add_option("--max-branches", pieces_args.max_branches);
  pieces->add_option("--max-terms", pieces_args.max_terms);
  pieces->add_flag("--json", pieces_args.json_out);
  pieces->add_flag("--no-cq-check", pieces_args.no_cq_check);

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return cmd_run(run_args);
    if (check->parsed()) return cmd_check(check_args);
    if (bench->parsed()) return cmd_bench(bench_args);
    if (naive->parsed()) return cmd_naive(naive_args);
    if (pieces->parsed()) return cmd_pieces(pieces_args);
  } catch (const CliError& e) {
    std::cerr << "error: " << e.message << "\n";
    return e.code;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
