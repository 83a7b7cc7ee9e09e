#include <catch_amalgamated.hpp>

#include "inclusol/bounds.hpp"
#include "oracles.hpp"

#include <random>

using namespace inclusol;
using Catch::Approx;

namespace {

double rel(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); }

ScalarFn constant(double v) {
  return [v](double) { return v; };
}

ProblemSpec plain(double x0norm, const GrowthEnvelope& env, long long N = 100) {
  ProblemSpec spec;
  spec.x0 = Vector::Constant(1, x0norm);
  spec.grid = make_grid(1.0, N);
  spec.envelope = env;
  return spec;
}

/// C(t) = {y >= rate t - 1}, zeta(t) = rate t: feasible start x0 = 1 and
/// constant |zeta'| = rate.
ProblemSpec moving(double rate, double L, const GrowthEnvelope& env, long long N = 100) {
  ProblemSpec spec = plain(1.0, env, N);
  MovingSet M;
  M.family = [rate](double t, const Vector&) -> SetGeometry {
    return HalfSpace{Vector::Constant(1, -1.0), 1.0 - rate * t};
  };
  M.zeta = [rate](double t) { return rate * t; };
  M.zeta_dot = [rate](double) { return rate; };
  M.L = L;
  spec.C = M;
  return spec;
}

}  // namespace

TEST_CASE("exp_factor closed forms", "[bounds]") {
  CHECK(exp_factor(0.0, 0.7, {}, {}) == 1.0);
  CHECK(exp_factor(0.3, 0.3, constant(1.0), {}) == 1.0);
  for (double t : {0.25, 0.5, 1.0, 2.0}) {
    CHECK(rel(exp_factor(0.0, t, constant(1.0), {}), std::exp(t)) < 1e-12);
    BivariateFn one = [](double, double) { return 1.0; };
    CHECK(rel(exp_factor(0.0, t, {}, one), std::exp(0.5 * t * t)) < 1e-12);
  }
  CHECK_THROWS(exp_factor(0.5, 0.2, constant(1.0), {}));
}

TEST_CASE("exponential factors satisfy the cocycle identity", "[bounds][property]") {
  auto grid = make_grid(2.0, 64);
  ScalarFn beta = [](double t) { return 1.0 + std::sin(3.0 * t); };
  BivariateFn gamma = [](double t, double s) { return std::exp(s - t) * (1.0 + t); };
  ExpFactor e = make_exp_factor(grid, beta, gamma);
  for (std::size_t i = 0; i <= grid.steps(); i += 3) {
    CHECK(e(grid.node(i), grid.node(i)) == 1.0);
    for (std::size_t j = i; j <= grid.steps(); j += 5) {
      for (std::size_t k = j; k <= grid.steps(); k += 7) {
        double direct = e(grid.node(i), grid.node(k));
        double chained = e(grid.node(i), grid.node(j)) * e(grid.node(j), grid.node(k));
        CHECK(rel(direct, chained) < 1e-10);
        CHECK(direct > 0.0);
      }
    }
  }
}

TEST_CASE("gronwall_bound examples", "[bounds]") {
  auto grid = make_grid(1.0, 50);
  auto flat = gronwall_bound(2.0, {}, {}, {}, grid);
  for (double v : flat.values) CHECK(v == 2.0);

  auto classic = gronwall_bound(1.0, {}, constant(1.0), {}, grid);
  auto boosted = gronwall_bound(1.0, {}, {}, [](double, double) { return 1.0; }, grid);
  for (std::size_t k = 0; k <= grid.steps(); ++k) {
    double t = grid.node(k);
    CHECK(rel(classic.values[k], std::exp(t)) < 1e-12);
    CHECK(rel(boosted.values[k], std::exp(0.5 * t * t)) < 1e-12);
  }
  CHECK_THROWS(gronwall_bound(-1.0, {}, {}, {}, grid));
}

TEST_CASE("gronwall_bound solves the equality equation", "[bounds][property]") {
  // u' = alpha + (beta + int_0^t gamma) u is attained with equality by the bound.
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  const double T = 1.5;
  auto grid = make_grid(T, 300);
  for (int trial = 0; trial < 20; ++trial) {
    const double a0 = U(rng), a1 = U(rng), b0 = U(rng), b1 = U(rng), w = 1.0 + 4.0 * U(rng);
    const double g0 = U(rng), kr = 0.1 + 2.0 * U(rng), u0 = U(rng);
    auto alpha = [=](double t) { return a0 + a1 * t; };
    auto beta = [=](double t) { return b0 + b1 * std::sin(w * t) * std::sin(w * t); };
    auto gamma = [=](double t, double s) { return g0 * std::exp(-kr * (t - s)); };
    auto Gamma = [=](double t) { return g0 * (1.0 - std::exp(-kr * t)) / kr; };
    auto bound = gronwall_bound(u0, alpha, beta, gamma, grid);
    auto ode = oracle::gronwall_equality(u0, alpha, beta, Gamma, T, 300 * 64);
    for (std::size_t k = 0; k <= grid.steps(); ++k) {
      double ref = ode[64 * k][0];
      CHECK(std::abs(bound.values[k] - ref) <= 1e-4 * std::max(1.0, ref));
    }
  }
}

TEST_CASE("envelope examples", "[bounds]") {
  GrowthEnvelope none;
  auto still = envelopes(plain(1.0, none));
  for (std::size_t k = 0; k < still.r.size(); ++k) {
    CHECK(still.r[k] == 1.0);
    CHECK(still.psi[k] == 0.0);
  }

  GrowthEnvelope drift;
  drift.d = constant(1.0);
  auto lin = envelopes(plain(1.0, drift));
  for (std::size_t k = 0; k < lin.r.size(); ++k) CHECK(lin.r[k] == Approx(1.0 + lin.grid.node(k)).epsilon(1e-13));

  GrowthEnvelope growth;
  growth.c = constant(1.0);
  auto ex = envelopes(plain(1.0, growth));
  for (std::size_t k = 0; k < ex.r.size(); ++k) {
    double t = ex.grid.node(k);
    CHECK(rel(ex.r[k], std::exp(t)) < 1e-12);
    CHECK(rel(ex.psi[k], std::exp(t)) < 1e-12);
  }
}

TEST_CASE("velocity envelope against a quadrature oracle", "[bounds]") {
  // c = 0, d = 1, sigma = 1, x0 = 0: e(t,s) = exp((t^2 - s^2)/2),
  // r(t) = int_0^t (1 + s) e(t,s) ds, psi(t) = 1 + t + int_0^t r.
  GrowthEnvelope env;
  env.d = constant(1.0);
  env.sigma = [](double, double) { return 1.0; };
  auto spec = plain(0.0, env, 200);
  auto tab = envelopes(spec);
  auto r = [](double t) {
    return oracle::simpson([t](double s) { return (1.0 + s) * std::exp(0.5 * (t * t - s * s)); }, 0.0, t, 400);
  };
  for (std::size_t k = 0; k <= 200; k += 10) {
    double t = tab.grid.node(k);
    double psi = 1.0 + t + oracle::simpson(r, 0.0, t, 200);
    CHECK(rel(tab.r[k], r(t)) < 1e-5);
    CHECK(rel(tab.psi[k], psi) < 1e-5);
  }
  CHECK(tab.r.front() == 0.0);
}

TEST_CASE("envelopes are monotone in their data", "[bounds][property]") {
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  for (int trial = 0; trial < 10; ++trial) {
    const double c = U(rng), d = U(rng), s = U(rng), z = U(rng), bump = 0.1 + U(rng);
    GrowthEnvelope small;
    small.c = constant(c);
    small.d = constant(d);
    small.sigma = [s](double t, double tau) { return s * std::exp(tau - t); };
    GrowthEnvelope big = small;
    switch (trial % 3) {
      case 0: big.c = constant(c + bump); break;
      case 1: big.d = constant(d + bump); break;
      default: big.sigma = [s, bump](double t, double tau) { return (s + bump) * std::exp(tau - t); }; break;
    }
    auto a = envelopes(plain(1.0, small, 40));
    auto b = envelopes(plain(1.0, big, 40));
    auto sa = sweeping_envelopes(moving(z, 0.2, small, 40));
    auto sb = sweeping_envelopes(moving(z, 0.2, big, 40));
    auto sz = sweeping_envelopes(moving(z + bump, 0.2, small, 40));
    for (std::size_t k = 0; k < a.r.size(); ++k) {
      CHECK(b.r[k] >= a.r[k]);
      CHECK(b.psi[k] >= a.psi[k]);
      CHECK(sb.r[k] >= sa.r[k] - 1e-12);
      CHECK((*sb.m)[k] >= (*sa.m)[k] - 1e-12);
      CHECK(sb.psi[k] >= sa.psi[k] - 1e-12);
      CHECK(sz.r[k] >= sa.r[k] - 1e-12);
      CHECK((*sz.m)[k] >= (*sa.m)[k] - 1e-12);
      CHECK(sz.psi[k] >= sa.psi[k] - 1e-12);
      if (k > 0) CHECK(a.r[k] >= a.r[k - 1]);
      CHECK(a.psi[k] >= d);
    }
  }
}

TEST_CASE("sweeping envelopes closed forms", "[bounds]") {
  GrowthEnvelope none;
  SECTION("static set") {
    auto tab = sweeping_envelopes(moving(0.0, 0.0, none));
    for (std::size_t k = 0; k < tab.r.size(); ++k) {
      CHECK((*tab.m)[k] == 0.0);
      CHECK(tab.r[k] == 1.0);
    }
  }
  SECTION("unit drift") {
    auto tab = sweeping_envelopes(moving(1.0, 0.0, none));
    for (std::size_t k = 0; k < tab.r.size(); ++k) {
      CHECK(std::abs((*tab.m)[k] - 1.0) <= 1e-10);
      CHECK(std::abs(tab.r[k] - (1.0 + tab.grid.node(k))) <= 1e-10);
      CHECK(std::abs(tab.psi[k] - 1.0) <= 1e-10);
    }
  }
  SECTION("half Lipschitz constant") {
    auto tab = sweeping_envelopes(moving(1.0, 0.5, none));
    for (std::size_t k = 0; k < tab.r.size(); ++k) {
      CHECK(std::abs((*tab.m)[k] - 2.0) <= 1e-10);
      CHECK(std::abs(tab.r[k] - (1.0 + 2.0 * tab.grid.node(k))) <= 1e-10);
    }
  }
  SECTION("alpha0 squared must exceed L") {
    auto spec = moving(1.0, 0.5, none);
    spec.alpha_far.alpha0 = 0.7;
    CHECK_THROWS_WITH(sweeping_envelopes(spec), Catch::Matchers::ContainsSubstring("alpha0^2"));
  }
}

TEST_CASE("Picard residuals decay geometrically", "[bounds]") {
  GrowthEnvelope env;
  env.c = constant(0.5);
  env.d = constant(0.2);
  env.sigma = [](double, double) { return 0.3; };
  auto tab = sweeping_envelopes(moving(1.0, 0.3, env));
  const auto& res = tab.picard_residuals;
  REQUIRE(res.size() >= 3);
  CHECK(res.back() <= 1e-10);
  for (std::size_t i = 1; i < res.size(); ++i) CHECK(res[i] < res[i - 1]);

  auto spec = moving(1.0, 0.3, env);
  try {
    sweeping_envelopes(spec, PicardOptions{1e-10, 2, 4});
    FAIL("expected non-convergence");
  } catch (const ConvergenceError& e) {
    CHECK(e.residual() > 1e-10);
    CHECK_THAT(e.what(), Catch::Matchers::ContainsSubstring("did not converge"));
  }
}

TEST_CASE("horizon_split examples", "[bounds]") {
  GrowthEnvelope none;
  auto grid = make_grid(1.0, 100);
  Table zero{grid, std::vector<double>(101, 0.0)};

  auto spec = moving(1.0, 0.0, none);
  auto whole = horizon_split(spec, zero);
  REQUIRE(whole.size() == 1);
  CHECK(whole[0].begin == 0.0);
  CHECK(whole[0].end == 1.0);

  spec.alpha_far.rho = 0.5;
  auto pieces = horizon_split(spec, zero);
  REQUIRE(pieces.size() == 3);
  CHECK(pieces[0].end == Approx(0.45));
  CHECK(pieces[1].end == Approx(0.9));
  CHECK(pieces[2].end == 1.0);
  for (std::size_t i = 0; i < pieces.size(); ++i) {
    CHECK(pieces[i].integral < 0.5);
    if (i > 0) CHECK(pieces[i].begin == pieces[i - 1].end);
  }

  auto bad = spec;
  bad.C->L = 1.0;
  CHECK_THROWS_WITH(horizon_split(bad, zero), Catch::Matchers::ContainsSubstring("L must lie in [0,1)"));

  spec.alpha_far.rho = 0.005;
  CHECK_THROWS_WITH(horizon_split(spec, zero), Catch::Matchers::ContainsSubstring("rho too small"));
}

TEST_CASE("check_bounds examples", "[bounds]") {
  GrowthEnvelope none;
  auto spec = plain(1.0, none, 10);
  auto tab = envelopes(spec);

  Trajectory zero(spec.grid, Vector::Zero(1));
  for (int k = 0; k < 10; ++k) zero.push_velocity(Vector::Zero(1));
  auto ok = check_bounds(zero, tab, 0.0);
  CHECK(ok.compliant());
  CHECK(ok.state_margin == 1.0);

  Trajectory far(spec.grid, Vector::Constant(1, 2.0));
  for (int k = 0; k < 10; ++k) far.push_velocity(Vector::Zero(1));
  auto bad = check_bounds(far, tab, 0.0);
  CHECK(bad.violations == 11);
  for (bool b : bad.state_ok) CHECK_FALSE(b);

  Trajectory other(make_grid(1.0, 5), Vector::Zero(1));
  CHECK_THROWS(check_bounds(other, tab, 0.0));
}

TEST_CASE("quadrature slack is small for smooth data", "[bounds]") {
  GrowthEnvelope env;
  env.c = constant(1.0);
  env.sigma = [](double t, double s) { return std::exp(s - t); };
  auto spec = plain(1.0, env, 200);
  auto tab = envelopes(spec);
  double slack = quadrature_slack(spec, tab);
  CHECK(slack >= 0.0);
  CHECK(slack < 1e-3);
}
