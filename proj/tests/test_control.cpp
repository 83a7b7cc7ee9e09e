#include <catch_amalgamated.hpp>

#include "inclusol/control.hpp"
#include "oracles.hpp"

#include <random>

using namespace inclusol;
using Catch::Approx;
using Catch::Matchers::ContainsSubstring;

namespace {

Vector v1(double a) { return Vector::Constant(1, a); }

/// min int u^2 + 100 (x(1) - 0.5)^2 subject to x' = int_0^t u, x(0) = 0, |u| <= 2.
ControlProblem double_integrator(long long N) {
  ControlProblem P;
  P.dynamics.x0 = v1(0.0);
  P.dynamics.grid = make_grid(1.0, N);
  P.dynamics.g = Kernel::controlled([](double, double, const Vector&, const Vector& u) { return u; }, false);
  P.dynamics.envelope.sigma = [](double, double) { return 2.0; };
  P.running = [](double, const Vector&, const Vector&, const Vector& u) { return u.squaredNorm(); };
  P.terminal = [](const Vector&, const Vector& xT) { return 100.0 * (xT[0] - 0.5) * (xT[0] - 0.5); };
  P.U = Box{v1(-2.0), v1(2.0)};
  return P;
}

}  // namespace

TEST_CASE("transcribed cost equals the quadratic program", "[control]") {
  const long long N = 64;
  auto P = double_integrator(N);
  auto qp = oracle::double_integrator(N);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> U(-2.0, 2.0);
  for (int trial = 0; trial < 20; ++trial) {
    ControlGrid u{P.dynamics.grid, {}};
    std::vector<double> raw;
    for (long long j = 0; j < N; ++j) {
      raw.push_back(U(rng));
      u.values.push_back(v1(raw.back()));
    }
    auto tr = forward_simulate(P, u);
    CHECK(evaluate_cost(P, tr, u) == Approx(qp.cost(raw)).epsilon(1e-12));
    CHECK(tr.consistency_defect() <= 1e-15);
  }
}

TEST_CASE("double integrator optimum", "[control]") {
  auto P = double_integrator(256);
  OptimizeOptions opt;
  opt.starts = 3;
  opt.seed = 7;
  auto res = optimize(P, opt);
  const double same_grid = oracle::double_integrator(256).optimum();
  const double fine = oracle::double_integrator(4096).optimum();
  CHECK(res.cost == Approx(same_grid).epsilon(1e-5));
  CHECK(std::abs(res.cost - fine) <= 0.05 * fine);
  CHECK_FALSE(res.line_search_failed);
  REQUIRE(res.start_costs.size() == 3);
  CHECK(res.cost == *std::min_element(res.start_costs.begin(), res.start_costs.end()));
  res.control.validate(P.U);
  for (std::size_t i = 1; i < res.log.size(); ++i) CHECK(res.log[i].cost <= res.log[i - 1].cost);
  CHECK(res.log.size() < 200);

  // Same seed, same answer.
  auto again = optimize(P, opt);
  CHECK(again.cost == res.cost);
  CHECK(again.best_start == res.best_start);
}

TEST_CASE("fine-grid oracle optimum", "[control]") {
  // The recorded reference for the bundled scenario.
  CHECK(oracle::double_integrator(4096).optimum() == Approx(0.7279981969992408).epsilon(1e-12));
}

TEST_CASE("infeasible endpoints have infinite cost", "[control]") {
  auto P = double_integrator(16);
  P.terminal_box = Box{v1(0.4), v1(0.6)};
  auto u = ControlGrid::constant(P.dynamics.grid, v1(0.0));
  auto tr = forward_simulate(P, u);
  CHECK(std::isinf(evaluate_cost(P, tr, u)));
  // The optimizer does not search for feasibility; every start here misses the box.
  CHECK_THROWS_WITH(optimize(P), ContainsSubstring("no start has finite cost"));
  P.terminal_box = Box{v1(-1.0), v1(1.0)};
  auto res = optimize(P);
  CHECK(std::isfinite(res.cost));
}

TEST_CASE("control problems are validated", "[control]") {
  auto P = double_integrator(8);
  CHECK_NOTHROW(P.validate());

  auto open = P;
  open.U = Box{v1(-std::numeric_limits<double>::infinity()), v1(1.0)};
  CHECK_THROWS_WITH(open.validate(), ContainsSubstring("bounded"));

  auto eta = P;
  eta.eta = [](double) { return 1.0; };
  CHECK_THROWS_WITH(eta.validate(), ContainsSubstring("dominate eta"));

  auto growth = P;
  growth.strengthened_growth = false;
  CHECK_THROWS(growth.validate());

  auto u = ControlGrid::constant(P.dynamics.grid, v1(3.0));
  CHECK_THROWS_WITH(u.validate(P.U), ContainsSubstring("control leaves U"));
  ControlGrid short_u{P.dynamics.grid, {v1(0.0)}};
  CHECK_THROWS(forward_simulate(P, short_u));
}

TEST_CASE("ball control sets", "[control]") {
  ControlProblem P;
  P.dynamics.x0 = Vector::Zero(2);
  P.dynamics.grid = make_grid(1.0, 16);
  P.dynamics.g = Kernel::controlled([](double, double, const Vector&, const Vector& u) { return u; }, false);
  P.U = Ball{Vector::Zero(2), 1.0};
  Vector target(2);
  target << 1.0, -1.0;
  P.terminal = [target](const Vector&, const Vector& xT) { return (xT - target).squaredNorm(); };
  OptimizeOptions opt;
  opt.starts = 2;
  auto res = optimize(P, opt);
  for (const Vector& u : res.control.values) CHECK(u.norm() <= 1.0 + 1e-12);
  // Pushing at full strength along the target direction is optimal: x(1) = h^2 sum (N-1-j).
  const double reach = (1.0 / 256.0) * (15.0 * 16.0 / 2.0);
  CHECK(res.cost == Approx((target.norm() - reach) * (target.norm() - reach)).epsilon(1e-6));
}

TEST_CASE("weak continuity probe", "[control]") {
  WeakProbeOptions opt;
  Kernel lin = Kernel::controlled([](double, double, const Vector&, const Vector& u) { return u; }, false);
  auto res = weak_continuity_probe(lin, opt);
  CHECK(res.monotone);
  CHECK_FALSE(res.flagged);
  // The primitive of a square wave with n periods peaks at a quarter period.
  for (std::size_t i = 0; i < res.modes.size(); ++i) {
    CHECK(res.sup_residual[i] == Approx(0.5 / static_cast<double>(res.modes[i])).epsilon(1e-12));
    CHECK(res.terminal_residual[i] <= 1e-12);
  }

  Kernel square = Kernel::controlled(
      [](double, double, const Vector&, const Vector& u) { return Vector(u.cwiseProduct(u)); }, false);
  auto sq = weak_continuity_probe(square, opt);
  CHECK(sq.flagged);
  CHECK_FALSE(sq.monotone);
  for (double r : sq.sup_residual) CHECK(r == Approx(1.0));

  opt.modes = {3};
  CHECK_THROWS(weak_continuity_probe(lin, opt));
}
