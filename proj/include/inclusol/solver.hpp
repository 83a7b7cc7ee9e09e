#pragma once

// Time-stepping for integro-differential inclusions and perturbed sweeping processes:
// explicit Euler with a selection of F, the Galerkin dimension cascade, the
// catching-up scheme, the reduced (distance-penalized) form, and the
// Cauchy/uniqueness/convergence diagnostics built on them.

#include "inclusol/bounds.hpp"
#include "inclusol/core.hpp"
#include "inclusol/galerkin.hpp"
#include "inclusol/problem.hpp"
#include "inclusol/sets.hpp"

#include <map>
#include <optional>

namespace inclusol {

enum class Scheme { Euler, Cascade, CatchingUp, Reduced };

using Selection = std::function<Vector(const VelocityMap& F, double t, const Vector& x)>;

struct SolverConfig {
  Scheme scheme = Scheme::Euler;
  Selection selection;  ///< empty: least-norm selection
  std::vector<Eigen::Index> dims;
  std::optional<Matrix> basis;  ///< orthonormal columns; canonical basis when empty
  double tol_projection = 1e-12;
  std::size_t quad_refine = kDefaultRefinement;

  void validate(Eigen::Index D) const {
    for (std::size_t i = 0; i < dims.size(); ++i) {
      if (dims[i] < 1 || dims[i] > D) throw std::invalid_argument("Galerkin ranks must lie in [1, D]");
      if (i > 0 && dims[i] <= dims[i - 1]) throw std::invalid_argument("Galerkin ranks must be strictly increasing");
    }
    if (!(tol_projection > 0.0)) throw std::invalid_argument("projection tolerance must be positive");
    if (quad_refine == 0) throw std::invalid_argument("refinement factor must be positive");
  }

  Projector projector(Eigen::Index D, Eigen::Index rank) const {
    return basis ? Projector(*basis, rank) : Projector(D, rank);
  }
};

/// Least-norm element of F(t,x), which realizes d(0, F(t,x)).
inline Vector select(const VelocityMap& F, double t, const Vector& x) {
  return std::visit(
      [&](const auto& f) -> Vector {
        using T = std::decay_t<decltype(f)>;
        if constexpr (std::is_same_v<T, SingletonMap>) {
          return f.f(t, x);
        } else if constexpr (std::is_same_v<T, AffineSetMap>) {
          if (!is_convex(f.set)) throw std::invalid_argument("unsupported representation");
          Vector o = f.offset(t, x);
          return o + project(f.set, Vector(-o));
        } else {
          if (f.lower.size() != x.size()) throw std::invalid_argument("dimension mismatch");
          return Vector::Zero(x.size()).cwiseMax(f.lower).cwiseMin(f.upper);
        }
      },
      F);
}

namespace detail {

inline Vector choose(const SolverConfig& cfg, const VelocityMap& F, double t, const Vector& x) {
  return cfg.selection ? cfg.selection(F, t, x) : select(F, t, x);
}

/// Explicit Euler for x' = drift(k, t_k, a_k) + int_0^{t_k} g(t_k, s, a(s), u(s)) ds where
/// a = P x when a projector is given (x(0) = P x0) and a = x otherwise.
template <class Drift>
Trajectory integrate(const TimeGrid& grid, const Vector& x0, const Kernel& g, const Projector* P, ControlValues u,
                     Drift&& drift) {
  auto arg = [&](const Vector& x) -> Vector { return P ? P->apply(x) : x; };
  Trajectory traj(grid, arg(x0));
  std::vector<Vector> args;
  args.reserve(grid.steps() + 1);
  args.push_back(arg(traj.state(0)));
  HistoryQuadrature hist(grid, g, x0.size());
  for (std::size_t k = 0; k < grid.steps(); ++k) {
    const double t = grid.node(k);
    Vector v = drift(k, t, args[k]);
    if (!g.is_zero()) v += hist.at(k, args, u);
    traj.push_velocity(v);
    args.push_back(arg(traj.state(k + 1)));
  }
  return traj;
}

}  // namespace detail

/// Explicit Euler with the configured selection:
/// v_k = select(F, t_k, x_k) + history_integral(g, t_k), x_{k+1} = x_k + h v_k.
inline Trajectory solve_idi(const ProblemSpec& spec, const SolverConfig& cfg = {}) {
  if (spec.C) throw std::invalid_argument("solve_idi does not handle moving sets; use solve_sweeping");
  cfg.validate(spec.dimension());
  return detail::integrate(spec.grid, spec.x0, spec.g, nullptr, {},
                           [&](std::size_t, double t, const Vector& x) { return detail::choose(cfg, spec.F, t, x); });
}

// ---------------------------------------------------------------------------
// Cauchy diagnostics
// ---------------------------------------------------------------------------

/// Theta_{n,m}(t_k) = 1/2 ||P_n x_n(t_k) - P_m x_m(t_k)||^2 against its Gronwall-type bound.
struct CauchyPair {
  Eigen::Index n = 0;
  Eigen::Index m = 0;
  std::vector<double> theta;
  std::vector<double> bound;  ///< Theta(0) pi(t,0) + int_0^t |delta(s)| pi(t,s) ds
  double slack = 0.0;         ///< K h
  std::size_t violations = 0;
};

struct CauchyDiagnostics {
  std::vector<CauchyPair> pairs;
  std::vector<double> vartheta;  ///< 1/2 ||x1 - x2||^2 (uniqueness runs)
  std::vector<double> pi_bound;  ///< vartheta(0) pi(t,0)
  double slack = 0.0;
  std::size_t violations = 0;
  double increase = 0.0;  ///< max_k (vartheta_{k+1} - vartheta_k)^+
};

/// pi(to, from) = exp(int (2 k~(s) + 2 int_0^s mu_R(tau) dtau) ds).
///
/// The Gronwall comparison behind this factor needs a nonnegative rate whenever the
/// kernel term is present, so k~ enters through its positive part when mu is declared;
/// with mu absent the signed k~ is used (plain differential inequality).
inline ExpFactor pi_factor(const TimeGrid& grid, const GrowthEnvelope& env, double radius,
                           std::size_t refine = kDefaultRefinement) {
  const bool with_mu = env.has_mu();
  ScalarFn beta = [&env, with_mu](double t) {
    double k = eval_or_zero(env.k_tilde, t);
    return 2.0 * (with_mu ? std::max(k, 0.0) : k);
  };
  BivariateFn gamma;
  if (with_mu) gamma = [&env, radius](double, double tau) { return 2.0 * env.mu_at(radius, tau); };
  return make_exp_factor(grid, beta, gamma, refine);
}

namespace detail {

/// K h with K = T sup||a - b|| (sup||v_a|| + sup||v_b||): first-order effect of the
/// discretization error on 1/2||a - b||^2.
inline double discretization_slack(const TimeGrid& grid, double sup_gap, double va, double vb) {
  return grid.horizon() * sup_gap * (va + vb) * grid.max_step();
}

}  // namespace detail

/// Gap between two solutions of the same problem and its bound vartheta(0) pi(t,0).
/// The Lipschitz radius of the kernel is the largest state norm of either trajectory.
inline CauchyDiagnostics uniqueness_gap(const Trajectory& a, const Trajectory& b, const GrowthEnvelope& envelope,
                                        std::optional<double> slack = std::nullopt) {
  if (!(a.grid() == b.grid())) throw std::invalid_argument("grid mismatch");
  const TimeGrid& grid = a.grid();
  CauchyDiagnostics diag;
  const double radius = std::max(a.max_state_norm(), b.max_state_norm());
  ExpFactor pi = pi_factor(grid, envelope, radius);
  double sup_gap = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    double gap = (a.state(k) - b.state(k)).norm();
    sup_gap = std::max(sup_gap, gap);
    diag.vartheta.push_back(0.5 * gap * gap);
  }
  diag.slack = slack.value_or(
      detail::discretization_slack(grid, sup_gap, a.max_velocity_norm(), b.max_velocity_norm()));
  for (std::size_t k = 0; k < a.size(); ++k) {
    diag.pi_bound.push_back(diag.vartheta.front() * pi(0.0, grid.node(k)));
    if (diag.vartheta[k] > diag.pi_bound[k] + diag.slack) ++diag.violations;
    if (k > 0) diag.increase = std::max(diag.increase, diag.vartheta[k] - diag.vartheta[k - 1]);
  }
  return diag;
}

// ---------------------------------------------------------------------------
// Galerkin cascade
// ---------------------------------------------------------------------------

struct CascadeResult {
  std::vector<Eigen::Index> dims;
  std::vector<Trajectory> trajectories;  ///< x_n for each rank in dims
  CauchyDiagnostics diagnostics;
};

/// For each rank n solves x' in F(t, P_n x) + int_0^t g(t,s,P_n x(s)) ds, x(0) = P_n x0 with
/// the Euler scheme of solve_idi, then fills Theta_{n,m} and its bound for every pair n > m.
inline CascadeResult solve_galerkin_cascade(const ProblemSpec& spec, const SolverConfig& cfg) {
  if (spec.C) throw std::invalid_argument("cascade does not handle moving sets");
  const Eigen::Index D = spec.dimension();
  cfg.validate(D);
  std::vector<Eigen::Index> dims = cfg.dims;
  if (dims.empty()) dims.push_back(D);

  CascadeResult res;
  res.dims = dims;
  std::vector<Projector> projectors;
  for (Eigen::Index n : dims) {
    projectors.push_back(cfg.projector(D, n));
    const Projector& P = projectors.back();
    res.trajectories.push_back(detail::integrate(spec.grid, spec.x0, spec.g, &P, {},
                                                 [&](std::size_t, double t, const Vector& x) {
                                                   return detail::choose(cfg, spec.F, t, x);
                                                 }));
  }

  const TimeGrid& grid = spec.grid;
  const double radius = state_envelope(spec, cfg.quad_refine).values.back();
  ExpFactor pi = pi_factor(grid, spec.envelope, radius, cfg.quad_refine);
  std::vector<double> exps;
  for (double t : grid.nodes()) exps.push_back(pi.exponent(t));
  for (std::size_t i = 0; i < dims.size(); ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      const Projector& Pn = projectors[i];
      const Projector& Pm = projectors[j];
      const Trajectory& xn = res.trajectories[i];
      const Trajectory& xm = res.trajectories[j];
      CauchyPair pair;
      pair.n = dims[i];
      pair.m = dims[j];
      std::vector<double> delta(grid.steps() + 1);
      double sup_gap = 0.0;
      for (std::size_t k = 0; k <= grid.steps(); ++k) {
        double gap = (Pn.apply(xn.state(k)) - Pm.apply(xm.state(k))).norm();
        sup_gap = std::max(sup_gap, gap);
        pair.theta.push_back(0.5 * gap * gap);
        const Vector& vm = xm.velocity(std::min(k, grid.steps() - 1));
        double acc = 0.0;
        for (Eigen::Index e = pair.m; e < pair.n; ++e) acc += Pn.coordinate(xn.state(k), e) * Pn.coordinate(vm, e);
        delta[k] = std::abs(acc);
      }
      const double theta0 = 0.5 * (Pn.apply(spec.x0) - Pm.apply(spec.x0)).squaredNorm();
      // pi(t, s) = exp(E(t) - E(s)), so the convolution is a running sum of |delta| e^{-E}.
      double weighted = 0.0;
      double prev = delta[0];
      for (std::size_t k = 0; k <= grid.steps(); ++k) {
        if (k > 0) {
          double next = delta[k] * std::exp(exps[0] - exps[k]);
          weighted += 0.5 * grid.step(k - 1) * (prev + next);
          prev = next;
        }
        const double growth = std::exp(exps[k] - exps[0]);
        pair.bound.push_back(theta0 * growth + weighted * growth);
      }
      pair.slack = detail::discretization_slack(grid, sup_gap, xn.max_velocity_norm(), xm.max_velocity_norm());
      for (std::size_t k = 0; k <= grid.steps(); ++k) {
        if (pair.theta[k] > pair.bound[k] + pair.slack) ++pair.violations;
      }
      res.diagnostics.violations += pair.violations;
      res.diagnostics.pairs.push_back(std::move(pair));
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// Sweeping processes
// ---------------------------------------------------------------------------

/// Catching-up scheme with the state dependence lagged one step:
/// x_{k+1} = Proj_{C(t_{k+1}, x_k)}(x_k + h (select(F, t_k, x_k) + history_integral)).
/// Velocities are the realized increments.
inline Trajectory solve_sweeping(const ProblemSpec& spec, const SolverConfig& cfg = {}) {
  if (!spec.C) throw std::invalid_argument("sweeping needs a moving set");
  cfg.validate(spec.dimension());
  spec.C->validate();
  const MovingSet& C = *spec.C;
  if (distance(C.at(0.0, spec.x0), spec.x0) > cfg.tol_projection * (1.0 + spec.x0.norm())) {
    throw std::invalid_argument("initial point must lie in C(0, x0)");
  }
  const TimeGrid& grid = spec.grid;
  Trajectory traj(grid, spec.x0);
  HistoryQuadrature hist(grid, spec.g, spec.dimension());
  for (std::size_t k = 0; k < grid.steps(); ++k) {
    const Vector& x = traj.state(k);
    Vector v = detail::choose(cfg, spec.F, grid.node(k), x);
    if (!spec.g.is_zero()) v += hist.at(k, traj.states());
    Vector free = x + grid.step(k) * v;
    SetGeometry target = C.at(grid.node(k + 1), x);
    Vector next = project(target, free);
    if (distance(target, next) > cfg.tol_projection) throw std::runtime_error("projection failure");
    traj.push_state(next);
  }
  return traj;
}

/// Euler for the unconstrained reduction x' in -m(t) ∂d_{C(t,x)}(x) + F(t,x) + int g, with m
/// taken from sweeping_envelopes and the zero subgradient on the set. With a projector the
/// rank-n Galerkin problem (arguments P_n x, start P_n x0) is solved instead.
inline Trajectory solve_reduced(const ProblemSpec& spec, const SolverConfig& cfg, const BoundTable& bounds,
                                const Projector* P = nullptr) {
  if (!spec.C) throw std::invalid_argument("reduced scheme needs a moving set");
  if (!bounds.m) throw std::invalid_argument("bounds must contain m");
  if (!(bounds.grid == spec.grid)) throw std::invalid_argument("grid mismatch");
  cfg.validate(spec.dimension());
  const MovingSet& C = *spec.C;
  const std::vector<double>& m = *bounds.m;
  return detail::integrate(spec.grid, spec.x0, spec.g, P, {}, [&](std::size_t k, double t, const Vector& a) {
    Vector v = detail::choose(cfg, spec.F, t, a);
    SetGeometry S = C.at(t, a);
    Vector p = project(S, a);
    double d = (a - p).norm();
    if (d > cfg.tol_projection) v -= m[k] * (a - p) / d;
    return v;
  });
}

struct ViolationTable {
  std::vector<double> values;
  double max = 0.0;
};

enum class ViolationMode {
  Current,  ///< d(x_k, C(t_k, x_k))
  Lagged    ///< d(x_{k+1}, C(t_{k+1}, x_k)), the catching-up target; node 0 uses C(0, x_0)
};

/// Node-wise distance of a trajectory to its constraint sets.
inline ViolationTable constraint_violation(const Trajectory& traj, const MovingSet& M,
                                           ViolationMode mode = ViolationMode::Current) {
  ViolationTable out;
  const TimeGrid& grid = traj.grid();
  for (std::size_t k = 0; k < traj.size(); ++k) {
    const Vector& x = traj.state(k);
    const Vector& anchor = (mode == ViolationMode::Lagged && k > 0) ? traj.state(k - 1) : x;
    double d = distance(M.at(grid.node(k), anchor), x);
    out.values.push_back(d);
    out.max = std::max(out.max, d);
  }
  return out;
}

/// phi_n(t_k) = d(P_n x_k, C(t_k, P_n x_k)) for a rank-n reduced run against
/// (1+L)||x0 - P_n x0|| plus the discretization allowance K h, K = sup over the
/// run of |zeta'| + (1+L)||v||.
struct ProjectedDistanceReport {
  std::vector<double> phi;
  double truncation_term = 0.0;
  double discretization_term = 0.0;
  std::size_t violations = 0;
};

inline ProjectedDistanceReport projected_distance_check(const ProblemSpec& spec, const Trajectory& traj,
                                                        const Projector& P) {
  if (!spec.C) throw std::invalid_argument("needs a moving set");
  const MovingSet& C = *spec.C;
  const TimeGrid& grid = traj.grid();
  ProjectedDistanceReport rep;
  rep.truncation_term = (1.0 + C.L) * (spec.x0 - P.apply(spec.x0)).norm();
  double zeta_rate = 0.0;
  std::vector<double> rates = detail::abs_zeta_rate(grid, spec.C);
  for (double r : rates) zeta_rate = std::max(zeta_rate, r);
  rep.discretization_term = (zeta_rate + (1.0 + C.L) * traj.max_velocity_norm()) * grid.max_step();
  for (std::size_t k = 0; k < traj.size(); ++k) {
    Vector a = P.apply(traj.state(k));
    double phi = distance(C.at(grid.node(k), a), a);
    rep.phi.push_back(phi);
    if (phi > rep.truncation_term + rep.discretization_term + 1e-12) ++rep.violations;
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Convergence study
// ---------------------------------------------------------------------------

struct ConvergenceStudy {
  std::vector<long long> steps;
  std::vector<double> gaps;  ///< sup gap between consecutive refinements on the coarser nodes
  std::optional<double> order;
  bool exact = false;  ///< all gaps vanish to rounding
};

/// Solves the problem on a uniform grid with each step count in Ns.
inline std::vector<Trajectory> solve_on_grids(const ProblemSpec& spec, const SolverConfig& cfg,
                                              std::span<const long long> Ns) {
  std::vector<Trajectory> out;
  for (long long N : Ns) {
    ProblemSpec s = spec;
    s.grid = make_grid(spec.grid.horizon(), N);
    switch (cfg.scheme) {
      case Scheme::Euler:
        out.push_back(solve_idi(s, cfg));
        break;
      case Scheme::Cascade: {
        auto res = solve_galerkin_cascade(s, cfg);
        out.push_back(std::move(res.trajectories.back()));
        break;
      }
      case Scheme::CatchingUp:
        out.push_back(solve_sweeping(s, cfg));
        break;
      case Scheme::Reduced:
        out.push_back(solve_reduced(s, cfg, sweeping_envelopes(s, PicardOptions{1e-10, 200, cfg.quad_refine})));
        break;
    }
  }
  return out;
}

/// Pairwise sup-norm gaps between consecutive refinements and the least-squares slope of
/// log gap against log h.
inline ConvergenceStudy convergence_study(const ProblemSpec& spec, const SolverConfig& cfg,
                                          std::span<const long long> Ns) {
  if (Ns.size() < 2) throw std::invalid_argument("need at least two grids");
  for (std::size_t i = 0; i + 1 < Ns.size(); ++i) {
    if (Ns[i] < 1 || Ns[i + 1] <= Ns[i] || Ns[i + 1] % Ns[i] != 0) throw std::invalid_argument("misaligned grids");
  }
  ConvergenceStudy st;
  st.steps.assign(Ns.begin(), Ns.end());
  auto runs = solve_on_grids(spec, cfg, Ns);
  double scale = 0.0;
  for (const auto& r : runs) scale = std::max(scale, r.max_state_norm());
  for (std::size_t i = 0; i + 1 < runs.size(); ++i) {
    const auto ratio = static_cast<std::size_t>(Ns[i + 1] / Ns[i]);
    double gap = 0.0;
    for (std::size_t k = 0; k < runs[i].size(); ++k) {
      gap = std::max(gap, (runs[i].state(k) - runs[i + 1].state(k * ratio)).norm());
    }
    st.gaps.push_back(gap);
  }
  const double floor = 1e-14 * (1.0 + scale);
  st.exact = std::all_of(st.gaps.begin(), st.gaps.end(), [&](double g) { return g <= floor; });
  if (st.exact) return st;
  std::vector<double> lx, ly;
  for (std::size_t i = 0; i < st.gaps.size(); ++i) {
    if (st.gaps[i] > floor) {
      lx.push_back(std::log(spec.grid.horizon() / static_cast<double>(Ns[i])));
      ly.push_back(std::log(st.gaps[i]));
    }
  }
  if (lx.size() >= 2) {
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
      mx += lx[i];
      my += ly[i];
    }
    mx /= static_cast<double>(lx.size());
    my /= static_cast<double>(lx.size());
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
      sxy += (lx[i] - mx) * (ly[i] - my);
      sxx += (lx[i] - mx) * (lx[i] - mx);
    }
    st.order = sxy / sxx;
  }
  return st;
}

}  // namespace inclusol
