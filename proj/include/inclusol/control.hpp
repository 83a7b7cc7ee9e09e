#pragma once

// Direct transcription of the optimal control problem
//   min l(x(0), x(T)) + int_0^T phi(s, x, x', u) ds
//   x' in F(t,x) + int_0^t g(t,s,x(s),u(s)) ds,  u(s) in U,
// with piecewise-constant controls, and a probe for norm-weak continuity of
// u -> int_0^t g(t,s,x(s),u(s)) ds.

#include "inclusol/solver.hpp"

#include <random>

namespace inclusol {

using RunningCost = std::function<double(double s, const Vector& x, const Vector& v, const Vector& u)>;
using TerminalCost = std::function<double(const Vector& x0, const Vector& xT)>;

struct ControlProblem {
  ProblemSpec dynamics;  ///< dynamics.g is the controlled kernel g(t,s,x,u)
  RunningCost running;   ///< empty: 0
  TerminalCost terminal; ///< empty: 0
  SetGeometry U = Box{Vector::Constant(1, -1.0), Vector::Constant(1, 1.0)};
  std::optional<Box> terminal_box;  ///< x(T) constraint; x(0) is fixed to dynamics.x0
  ScalarFn eta;                     ///< lower bound of phi; empty: 0
  bool strengthened_growth = true;  ///< ||F(t,x)|| <= c(t)||x|| + d(t) declared for the dynamics

  Eigen::Index control_dimension() const {
    if (const auto* b = std::get_if<Box>(&U)) return b->lower.size();
    if (const auto* b = std::get_if<Ball>(&U)) return b->center.size();
    throw std::invalid_argument("control set must be a box or ball");
  }

  Vector control_center() const {
    if (const auto* b = std::get_if<Box>(&U)) return 0.5 * (b->lower + b->upper);
    return std::get<Ball>(U).center;
  }

  double running_cost(double s, const Vector& x, const Vector& v, const Vector& u) const {
    return running ? running(s, x, v, u) : 0.0;
  }

  double terminal_cost(const Vector& x0, const Vector& xT) const { return terminal ? terminal(x0, xT) : 0.0; }

  void validate() const {
    dynamics.validate();
    if (dynamics.C) throw std::invalid_argument("controlled dynamics cannot carry a moving set");
    if (!strengthened_growth) throw std::invalid_argument("dynamics must satisfy the strengthened growth bound");
    control_dimension();
    inclusol::validate(U);
    if (const auto* b = std::get_if<Box>(&U)) {
      if (!b->lower.allFinite() || !b->upper.allFinite()) throw std::invalid_argument("control set must be bounded");
    } else if (!std::isfinite(std::get<Ball>(U).radius)) {
      throw std::invalid_argument("control set must be bounded");
    }
    if (terminal_box) {
      if (terminal_box->lower.size() != dynamics.dimension()) throw std::invalid_argument("dimension mismatch");
      inclusol::validate(SetGeometry{*terminal_box});
    }
    // phi >= eta, sampled at the initial state with zero velocity over the centre and extreme controls.
    std::vector<Vector> us{control_center()};
    if (const auto* b = std::get_if<Box>(&U)) {
      us.push_back(b->lower);
      us.push_back(b->upper);
    }
    const Vector v0 = Vector::Zero(dynamics.dimension());
    const TimeGrid& grid = dynamics.grid;
    for (int i = 0; i <= 16; ++i) {
      double s = grid.horizon() * i / 16.0;
      for (const Vector& u : us) {
        if (running_cost(s, dynamics.x0, v0, u) < eval_or_zero(eta, s) - 1e-12) {
          throw std::invalid_argument("running cost must dominate eta");
        }
      }
    }
  }
};

/// Piecewise-constant control: u_j on [t_j, t_{j+1}).
struct ControlGrid {
  TimeGrid grid;
  std::vector<Vector> values;

  static ControlGrid constant(const TimeGrid& grid, const Vector& u) {
    return ControlGrid{grid, std::vector<Vector>(grid.steps(), u)};
  }

  void validate(const SetGeometry& U) const {
    if (values.size() != grid.steps()) throw std::invalid_argument("one control value per cell required");
    for (const Vector& u : values) {
      if (distance(U, u) > 1e-12) throw std::invalid_argument("control leaves U");
    }
  }
};

namespace detail {

inline Trajectory simulate(const ControlProblem& P, std::span<const Vector> u) {
  const ProblemSpec& spec = P.dynamics;
  return integrate(spec.grid, spec.x0, spec.g, nullptr, u,
                   [&](std::size_t, double t, const Vector& x) { return select(spec.F, t, x); });
}

inline double cost(const ControlProblem& P, const Trajectory& traj, std::span<const Vector> u) {
  const TimeGrid& grid = traj.grid();
  const std::size_t N = grid.steps();
  const Vector& x0 = traj.state(0);
  const Vector& xT = traj.state(N);
  if ((x0 - P.dynamics.x0).norm() > 0.0) return std::numeric_limits<double>::infinity();
  if (P.terminal_box && distance(SetGeometry{*P.terminal_box}, xT) > 1e-12) {
    return std::numeric_limits<double>::infinity();
  }
  double J = P.terminal_cost(x0, xT);
  if (P.running) {
    // Node N has no own velocity or control; the last interval's values are reused.
    auto phi = [&](std::size_t k) {
      std::size_t c = std::min(k, N - 1);
      return P.running(grid.node(k), traj.state(k), traj.velocity(c), u[c]);
    };
    double prev = phi(0);
    for (std::size_t k = 0; k < N; ++k) {
      double next = phi(k + 1);
      J += 0.5 * grid.step(k) * (prev + next);
      prev = next;
    }
  }
  return J;
}

}  // namespace detail

/// solve_idi with the controlled history integral; x(0) = dynamics.x0.
inline Trajectory forward_simulate(const ControlProblem& P, const ControlGrid& u) {
  if (!(u.grid == P.dynamics.grid)) throw std::invalid_argument("grid mismatch");
  if (u.values.size() != u.grid.steps()) throw std::invalid_argument("one control value per cell required");
  return detail::simulate(P, u.values);
}

/// l(x(0), x(T)) + trapezoid of phi(s, x, v, u); infinite when an endpoint leaves its set.
inline double evaluate_cost(const ControlProblem& P, const Trajectory& traj, const ControlGrid& u) {
  if (!(traj.grid() == u.grid)) throw std::invalid_argument("grid mismatch");
  if (!traj.complete() || u.values.size() != u.grid.steps()) throw std::invalid_argument("incomplete data");
  return detail::cost(P, traj, u.values);
}

struct OptimizerLogEntry {
  std::size_t iteration = 0;
  double cost = 0.0;
  double gradient_norm = 0.0;  ///< ||Proj_U(u - grad J) - u||
};

struct OptimizeOptions {
  std::size_t starts = 1;
  std::size_t iterations = 200;
  std::uint64_t seed = 0;
  double tolerance = 1e-10;  ///< stop when the gradient-mapping norm falls below
  double fd_step = 1e-5;     ///< relative central-difference step
  double stall = 1e-13;      ///< stop after three steps each gaining less than stall (1 + |J|)
};

struct OptimizeResult {
  ControlGrid control;
  Trajectory trajectory;
  double cost = std::numeric_limits<double>::infinity();
  double gradient_norm = 0.0;
  std::size_t best_start = 0;
  std::vector<OptimizerLogEntry> log;  ///< iterations of the best start
  std::vector<double> start_costs;
  bool line_search_failed = false;  ///< some start ended in a divergent line search
  std::string message;
};

namespace detail {

inline std::vector<Vector> project_controls(const SetGeometry& U, std::vector<Vector> u) {
  for (Vector& v : u) v = project(U, v);
  return u;
}

inline Vector random_control(const SetGeometry& U, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  if (const auto* b = std::get_if<Box>(&U)) {
    Vector u(b->lower.size());
    for (Eigen::Index i = 0; i < u.size(); ++i) u[i] = b->lower[i] + unit(rng) * (b->upper[i] - b->lower[i]);
    return u;
  }
  const Ball& B = std::get<Ball>(U);
  std::normal_distribution<double> normal;
  Vector dir(B.center.size());
  for (Eigen::Index i = 0; i < dir.size(); ++i) dir[i] = normal(rng);
  double n = dir.norm();
  if (n == 0.0) return B.center;
  double radius = B.radius * std::pow(unit(rng), 1.0 / static_cast<double>(dir.size()));
  return B.center + radius / n * dir;
}

struct Flat {
  std::size_t cells, m;
  Vector pack(std::span<const Vector> u) const {
    Vector z(static_cast<Eigen::Index>(cells * m));
    for (std::size_t j = 0; j < cells; ++j) z.segment(static_cast<Eigen::Index>(j * m), static_cast<Eigen::Index>(m)) = u[j];
    return z;
  }
  std::vector<Vector> unpack(const Vector& z) const {
    std::vector<Vector> u(cells);
    for (std::size_t j = 0; j < cells; ++j) u[j] = z.segment(static_cast<Eigen::Index>(j * m), static_cast<Eigen::Index>(m));
    return u;
  }
};

}  // namespace detail

/// Spectral projected gradient (Barzilai-Borwein steps with a monotone Armijo search) on
/// the piecewise-constant control, with central finite-difference reduced gradients.
/// Start 0 is the least-norm point of U; further starts are uniform in U from seed + i.
inline OptimizeResult optimize(const ControlProblem& P, const OptimizeOptions& opt = {}) {
  P.validate();
  if (opt.starts == 0) throw std::invalid_argument("at least one start required");
  const TimeGrid& grid = P.dynamics.grid;
  const detail::Flat flat{grid.steps(), static_cast<std::size_t>(P.control_dimension())};
  const Eigen::Index m = static_cast<Eigen::Index>(flat.m);

  auto J = [&](const Vector& z) {
    auto u = flat.unpack(z);
    return detail::cost(P, detail::simulate(P, u), u);
  };
  auto proj = [&](const Vector& z) { return flat.pack(detail::project_controls(P.U, flat.unpack(z))); };
  auto gradient = [&](const Vector& z) {
    Vector grad(z.size());
    Vector w = z;
    for (Eigen::Index i = 0; i < z.size(); ++i) {
      const double h = opt.fd_step * std::max(1.0, std::abs(z[i]));
      w[i] = z[i] + h;
      const double up = J(w);
      w[i] = z[i] - h;
      const double down = J(w);
      w[i] = z[i];
      grad[i] = (up - down) / (2.0 * h);
    }
    return grad;
  };

  OptimizeResult best{ControlGrid{grid, {}}, Trajectory(grid, P.dynamics.x0), std::numeric_limits<double>::infinity(), 0.0, 0, {}, {}, false, {}};
  bool have_best = false;
  const Vector zero_control = project(P.U, Vector::Zero(m));
  for (std::size_t s = 0; s < opt.starts; ++s) {
    std::vector<Vector> u0;
    if (s == 0) {
      u0.assign(flat.cells, zero_control);
    } else {
      std::mt19937_64 rng(opt.seed + s);
      for (std::size_t j = 0; j < flat.cells; ++j) u0.push_back(detail::random_control(P.U, rng));
    }
    Vector z = proj(flat.pack(u0));
    double cost = J(z);
    std::vector<OptimizerLogEntry> log;
    bool failed = false;
    double gm = 0.0;
    int stalled = 0;
    if (!std::isfinite(cost)) {
      best.start_costs.push_back(cost);
      continue;
    }
    Vector g = gradient(z);
    double alpha = 1.0;
    {
      double pg = (proj(z - g) - z).lpNorm<Eigen::Infinity>();
      if (pg > 0.0) alpha = std::clamp(1.0 / pg, 1e-10, 1e10);
    }
    for (std::size_t it = 0;; ++it) {
      gm = (proj(z - g) - z).norm();
      log.push_back({it, cost, gm});
      if (it >= opt.iterations || gm <= opt.tolerance) break;
      Vector d = proj(z - alpha * g) - z;
      const double slope = g.dot(d);
      if (!(slope < 0.0)) break;  // stationary up to rounding
      double lambda = 1.0;
      bool accepted = false;
      Vector trial;
      double trial_cost = cost;
      for (int ls = 0; ls < 60; ++ls) {
        trial = z + lambda * d;
        trial_cost = J(trial);
        if (std::isfinite(trial_cost) && trial_cost <= cost + 1e-4 * lambda * slope) {
          accepted = true;
          break;
        }
        lambda *= 0.5;
      }
      if (!accepted) {
        failed = true;
        break;
      }
      // Convex combinations stay in U; the projection only removes rounding.
      trial = proj(trial);
      Vector g_new = gradient(trial);
      Vector sv = trial - z;
      Vector yv = g_new - g;
      const double sy = sv.dot(yv);
      alpha = sy > 0.0 ? std::clamp(sv.squaredNorm() / sy, 1e-10, 1e10) : 1e10;
      z = std::move(trial);
      const double previous = cost;
      cost = J(z);
      g = std::move(g_new);
      stalled = (previous - cost <= opt.stall * (1.0 + std::abs(cost))) ? stalled + 1 : 0;
      if (stalled >= 3) {
        gm = (proj(z - g) - z).norm();
        log.push_back({it + 1, cost, gm});
        break;
      }
    }
    best.start_costs.push_back(cost);
    if (failed) {
      best.line_search_failed = true;
      best.message = "line search failed to decrease the cost (start " + std::to_string(s) + ")";
    }
    if (!have_best || cost < best.cost) {
      have_best = true;
      best.cost = cost;
      best.best_start = s;
      best.gradient_norm = gm;
      best.log = std::move(log);
      best.control = ControlGrid{grid, flat.unpack(z)};
    }
  }
  if (!have_best) throw std::runtime_error("no start has finite cost");
  best.trajectory = forward_simulate(P, best.control);
  return best;
}

// ---------------------------------------------------------------------------
// Weak-continuity probe
// ---------------------------------------------------------------------------

struct WeakProbeOptions {
  double horizon = 1.0;
  std::size_t cells = 4096;  ///< must be a multiple of 2 * max(modes)
  Vector high = Vector::Constant(1, 1.0);
  Vector low = Vector::Constant(1, -1.0);
  std::function<Vector(double)> state;  ///< x(s); empty: zero vector of the control dimension
  std::vector<std::size_t> modes{1, 2, 4, 8, 16, 32};
  double flag_ratio = 0.25;  ///< flagged when residual(n_max) > flag_ratio * residual(n_min)
};

struct WeakProbeResult {
  std::vector<std::size_t> modes;
  std::vector<double> sup_residual;       ///< max over nodes of ||G(x,u_n)(t) - G(x,u_mean)(t)||
  std::vector<double> terminal_residual;  ///< same at t = T
  bool monotone = false;                  ///< sup residuals strictly decreasing in n
  bool flagged = false;                   ///< residuals do not vanish
};

/// Evaluates G(x,u)(t) = int_0^t g(t,s,x(s),u(s)) ds for square waves u_n with n periods
/// (first half `high`, second half `low`) against their weak limit, the mean control.
inline WeakProbeResult weak_continuity_probe(const Kernel& kernel, const WeakProbeOptions& opt = {}) {
  if (opt.modes.empty()) throw std::invalid_argument("modes must be nonempty");
  if (opt.high.size() != opt.low.size()) throw std::invalid_argument("dimension mismatch");
  TimeGrid grid = make_grid(opt.horizon, static_cast<long long>(opt.cells));
  std::vector<Vector> states;
  for (double t : grid.nodes()) states.push_back(opt.state ? opt.state(t) : Vector(Vector::Zero(opt.high.size())));
  const Vector mean = 0.5 * (opt.high + opt.low);

  auto mapping = [&](std::span<const Vector> u) {
    std::vector<Vector> out;
    HistoryQuadrature hist(grid, kernel, states.front().size());
    for (std::size_t k = 0; k <= grid.steps(); ++k) out.push_back(hist.at(k, states, u));
    return out;
  };
  std::vector<Vector> weak_limit = mapping(std::vector<Vector>(grid.steps(), mean));

  WeakProbeResult res;
  for (std::size_t n : opt.modes) {
    if (n == 0 || opt.cells % (2 * n) != 0) throw std::invalid_argument("modes must divide the probe grid");
    const std::size_t half = opt.cells / (2 * n);
    std::vector<Vector> u;
    for (std::size_t j = 0; j < opt.cells; ++j) u.push_back(((j / half) % 2 == 0) ? opt.high : opt.low);
    auto values = mapping(u);
    double sup = 0.0;
    for (std::size_t k = 0; k < values.size(); ++k) sup = std::max(sup, (values[k] - weak_limit[k]).norm());
    res.modes.push_back(n);
    res.sup_residual.push_back(sup);
    res.terminal_residual.push_back((values.back() - weak_limit.back()).norm());
  }
  res.monotone = true;
  for (std::size_t i = 1; i < res.sup_residual.size(); ++i) {
    if (!(res.sup_residual[i] < res.sup_residual[i - 1])) res.monotone = false;
  }
  res.flagged = res.sup_residual.back() > opt.flag_ratio * res.sup_residual.front() && res.sup_residual.front() > 1e-12;
  return res;
}

}  // namespace inclusol
