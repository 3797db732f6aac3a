#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "subgrad/library.hpp"
#include "subgrad/oracle.hpp"
#include "support/test_programs.hpp"

using namespace subgrad;
namespace st = subgrad::testing;

namespace {
const LibraryRegistry& lib() {
  static LibraryRegistry reg = builtin_registry();
  return reg;
}

double call1(const char* name, double x) {
  CostMeter m;
  std::vector<double> v{x};
  return evaluate_branch<double>(*lib().at(name).program, v, m).value;
}

double call2(const char* name, double x, double y) {
  CostMeter m;
  std::vector<double> v{x, y};
  return evaluate_branch<double>(*lib().at(name).program, v, m).value;
}
}  // namespace

TEST_CASE("builtin values") {
  CHECK(call1("relu", -3.0) == 0.0);
  CHECK(call1("relu", 2.5) == 2.5);
  CHECK(call1("relu_bad", -3.0) == 0.0);
  CHECK(call1("relu_bad", 2.5) == 2.5);
  CHECK(call1("abs", -1.5) == 1.5);
  CHECK(call2("max2", 2.0, 5.0) == 5.0);
  CHECK(call2("max2", 5.0, 2.0) == 5.0);
  CHECK(call2("min2", 2.0, 5.0) == 2.0);
  CHECK(lib().find("nope") == nullptr);
}

TEST_CASE("registry rejects duplicates and arity mismatches") {
  LibraryRegistry reg = builtin_registry();
  CHECK_THROWS_AS(reg.add(lib().at("relu")), std::invalid_argument);
  LibraryFunction wrong = lib().at("relu");
  wrong.name = "relu_alias";
  wrong.arity = 2;
  CHECK_THROWS_AS(reg.add(wrong), std::invalid_argument);
}

TEST_CASE("relu_bad fails the qualification diagnostic at (0, -1)") {
  std::vector<Rational> x{Rational(0)}, v{Rational(-1)};
  auto r = cq_diagnostic(lib().at("relu_bad"), x, v);
  REQUIRE(r.status == CqResult::Status::fail);
  REQUIRE(r.witness);
  CHECK(r.witness->constraint.to_string() == "x1^3");
  CHECK(r.witness->limit_sign == -1);
  CHECK(r.witness->first_order_sign == +1);

  // the good implementation passes at the same query
  auto good = cq_diagnostic(lib().at("relu"), x, v);
  CHECK(good.status == CqResult::Status::pass);
  std::vector<Rational> vplus{Rational(1)};
  auto a = cq_diagnostic(lib().at("abs"), x, vplus);
  CHECK(a.status == CqResult::Status::pass);
}

TEST_CASE("qualified builtins pass sampled qualification including active constraints") {
  std::mt19937_64 rng(61);
  for (const char* name : {"relu", "abs", "max2", "min2"}) {
    const auto& fn = lib().at(name);
    int samples = 0;
    while (samples < 1000) {
      std::vector<Rational> x, v;
      const auto d = static_cast<std::size_t>(fn.arity);
      for (std::size_t i = 0; i < d; ++i) {
        x.push_back(st::rand_dyadic(rng, 3, 2));
        v.push_back(st::rand_dyadic(rng, 3, 2));
      }
      bool vz = true;
      for (const auto& c : v) vz = vz && c == 0;
      if (vz) continue;
      // force half the samples onto the constraint's zero set
      if (samples % 2 == 0) {
        if (fn.arity == 1)
          x[0] = 0;  // the only constraint root for relu/abs
        else
          x[1] = x[0];  // x - y = 0 for max2/min2
      }
      ++samples;
      auto r = cq_diagnostic(fn, x, v);
      REQUIRE(r.status == CqResult::Status::pass);
    }
  }
}

TEST_CASE("ladder constructor behaves as relu on a grid") {
  Polynomial x = Polynomial::variable(1, 0);
  auto fn = make_piecewise_poly("relu_ladder", {Rational(0)}, {Polynomial(1), x});
  CHECK(fn.claims_qualified);
  CostMeter m;
  for (double t : {-2.0, -1.0, 0.0, 1.0, 2.0}) {
    std::vector<double> at{t};
    CHECK(evaluate_branch<double>(*fn.program, at, m).value == (t > 0 ? t : 0.0));
  }
}

TEST_CASE("ladder constructor rejects bad inputs") {
  Polynomial x = Polynomial::variable(1, 0);
  // discontinuity: p1(-1) = -1 != p2(-1) = 1
  CHECK_THROWS_AS(make_piecewise_poly("bad", {Rational(-1), Rational(1)},
                                      {x, -x + Polynomial::constant(1, Rational(2)), x}),
                  std::invalid_argument);
  CHECK_THROWS_AS(make_piecewise_poly("bad", {Rational(1), Rational(1)}, {x, x, x}),
                  std::invalid_argument);
  CHECK_THROWS_AS(make_piecewise_poly("bad", {}, {}), std::invalid_argument);
  CHECK_THROWS_AS(make_piecewise_poly("bad", {Rational(0)}, {x}), std::invalid_argument);
}

TEST_CASE("ladder output matches find-interval evaluation to the last bit") {
  // pieces with matching values at the breakpoints: x, x^2 at 1, then the
  // tangent line 2x - 1 at x > 2 ... keep it continuous: p3(2) = 4 = p2(2).
  Polynomial x = Polynomial::variable(1, 0);
  Polynomial p1 = x;
  Polynomial p2 = x.pow(2);
  Polynomial p3(1);
  p3.add_term({1}, Rational(4));
  p3.add_term({0}, Rational(-4));  // 4x - 4, equals 4 at x = 2
  auto fn = make_piecewise_poly("pw3", {Rational(1), Rational(2)}, {p1, p2, p3});

  // direct route: pick the interval by comparisons, then evaluate the piece
  // polynomial with the same term-by-term order the ladder emits
  auto direct = [&](double t) {
    const Polynomial& p = t <= 1.0 ? p1 : (t <= 2.0 ? p2 : p3);
    double acc = 0.0;
    std::vector<std::pair<double, double>> terms;  // (coeff, power value)
    for (const auto& [e, c] : p.terms()) {
      if (e[0] == 0) {
        acc = to_double(c);
      } else {
        double pw = 1.0;
        for (unsigned k = 0; k < e[0]; ++k) pw *= t;
        terms.emplace_back(to_double(c), pw);
      }
    }
    for (const auto& [c, pw] : terms) acc += c * pw;
    return acc;
  };

  CostMeter m;
  for (int k = 0; k <= 10000; ++k) {
    const double t = -3.0 + 6.0 * (static_cast<double>(k) / 10000.0);
    std::vector<double> at{t};
    const double got = evaluate_branch<double>(*fn.program, at, m).value;
    CHECK(got == direct(t));
  }
}

TEST_CASE("ladder kink pieces are direction-selected") {
  Polynomial x = Polynomial::variable(1, 0);
  auto fn = make_piecewise_poly("pw", {Rational(1)}, {x, x.pow(2)});
  auto pieces = extract_pieces(*fn.program);
  std::vector<Rational> at{Rational(1)};
  std::vector<Rational> up_dir{Rational(1)}, down_dir{Rational(-1)};
  const auto& up = piece_select(pieces, at, up_dir);
  CHECK(up.piece == x.pow(2));
  const auto& down = piece_select(pieces, at, down_dir);
  CHECK(down.piece == x);
}

TEST_CASE("lipschitz probe estimates local constants") {
  auto relu = lipschitz_probe(lib().at("relu"), -1.0, 1.0, 4000);
  CHECK(relu.constant <= 1.0 + 1e-12);
  CHECK(relu.constant > 0.9);
  CHECK(!relu.violation);

  auto a = lipschitz_probe(lib().at("abs"), -1.0, 1.0, 4000);
  CHECK(a.constant <= 1.0 + 1e-12);
  CHECK(a.constant > 0.9);

  Polynomial x = Polynomial::variable(1, 0);
  auto sq = make_piecewise_poly("sq_ladder", {Rational(0)}, {x.pow(2), x.pow(2)});
  auto probe = lipschitz_probe(sq, -2.0, 2.0, 8000);
  CHECK(probe.constant <= 4.0 + 1e-9);
  CHECK(probe.constant > 3.5);
}

TEST_CASE("randomly generated qualified functions pass the diagnostic everywhere sampled") {
  std::mt19937_64 rng(71);
  for (int trial = 0; trial < 10; ++trial) {
    st::QualifiedGen opt;
    opt.arity = 1 + static_cast<int>(rng() % 3);
    opt.primitives = 1 + static_cast<int>(rng() % 3);
    auto fn = st::random_qualified_library(rng, "q", opt);
    for (int s = 0; s < 40; ++s) {
      auto x = st::rand_point(rng, fn.arity, 3, 2);
      auto v = st::rand_direction(rng, fn.arity);
      if (s % 2 == 0)
        for (auto& c : x) c = 0;  // common kink location
      auto r = cq_diagnostic(fn, x, v);
      REQUIRE(r.status == CqResult::Status::pass);
    }
  }
}
