#pragma once

// Gronwall engine and a-priori envelopes.
//
// All time integrals are composite trapezoid sums on a refinement of the solver
// grid (factor 4 by default). Envelope tables are reported on the solver grid.

#include "inclusol/core.hpp"
#include "inclusol/problem.hpp"

#include <optional>
#include <sstream>

namespace inclusol {

// ---------------------------------------------------------------------------
// Exponential factors
// ---------------------------------------------------------------------------

/// e(to, from) = exp(int_from^to (beta(s) + int_0^s gamma(s,tau) dtau) ds), backed by the
/// cumulative exponent E tabulated on a grid. Cocycle identities hold up to rounding
/// because every factor is a difference of the same table.
class ExpFactor {
 public:
  ExpFactor(TimeGrid grid, std::vector<double> exponent) : grid_(std::move(grid)), exponent_(std::move(exponent)) {
    if (exponent_.size() != grid_.nodes().size()) throw std::invalid_argument("exponent table size mismatch");
  }

  double exponent(double t) const { return interpolate_values(grid_, exponent_, t); }

  /// e(to, from); requires from <= to.
  double operator()(double from, double to) const {
    if (from > to) throw std::invalid_argument("exponential factor needs from <= to");
    return std::exp(exponent(to) - exponent(from));
  }

  const TimeGrid& grid() const { return grid_; }
  std::span<const double> exponents() const { return exponent_; }

 private:
  TimeGrid grid_;
  std::vector<double> exponent_;
};

namespace detail {

/// I_j = int_0^{t_j} gamma(t_j, tau) dtau on the nodes of `fine`.
inline std::vector<double> inner_integrals(const TimeGrid& fine, const BivariateFn& gamma) {
  const std::size_t n = fine.nodes().size();
  std::vector<double> out(n, 0.0);
  if (!gamma) return out;
  for (std::size_t j = 1; j < n; ++j) {
    const double t = fine.node(j);
    double acc = 0.0;
    double prev = gamma(t, fine.node(0));
    for (std::size_t i = 1; i <= j; ++i) {
      double cur = gamma(t, fine.node(i));
      acc += 0.5 * fine.step(i - 1) * (prev + cur);
      prev = cur;
    }
    out[j] = acc;
  }
  return out;
}

/// Lower-triangular samples sigma(t_j, t_i), i <= j, cached when small enough.
class KernelSamples {
 public:
  static constexpr std::size_t kCacheLimit = 8'200'000;

  KernelSamples(const TimeGrid& fine, const BivariateFn& sigma) : fine_(&fine), sigma_(&sigma) {
    const std::size_t n = fine.nodes().size();
    if (sigma && n * (n + 1) / 2 <= kCacheLimit) {
      cache_.resize(n * (n + 1) / 2);
      for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t i = 0; i <= j; ++i) cache_[j * (j + 1) / 2 + i] = sigma(fine.node(j), fine.node(i));
      }
    }
  }

  bool zero() const { return !*sigma_; }

  double operator()(std::size_t j, std::size_t i) const {
    if (!cache_.empty()) return cache_[j * (j + 1) / 2 + i];
    return (*sigma_)(fine_->node(j), fine_->node(i));
  }

  /// J_j = int_0^{t_j} sigma(t_j, tau) w(tau) dtau.
  std::vector<double> against(std::span<const double> w) const {
    const std::size_t n = fine_->nodes().size();
    std::vector<double> out(n, 0.0);
    if (zero()) return out;
    for (std::size_t j = 1; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t i = 1; i <= j; ++i) {
        acc += 0.5 * fine_->step(i - 1) * ((*this)(j, i - 1) * w[i - 1] + (*this)(j, i) * w[i]);
      }
      out[j] = acc;
    }
    return out;
  }

 private:
  const TimeGrid* fine_;
  const BivariateFn* sigma_;
  std::vector<double> cache_;
};

inline std::vector<double> cumulative_exponent(const TimeGrid& fine, const ScalarFn& beta, const BivariateFn& gamma) {
  std::vector<double> rate = sample(beta, fine.nodes());
  std::vector<double> inner = inner_integrals(fine, gamma);
  for (std::size_t j = 0; j < rate.size(); ++j) rate[j] += inner[j];
  return cumulative_trapezoid(fine.nodes(), rate);
}

/// u0 e(t,0) + int_0^t alpha(s) e(t,s) ds on the nodes of `fine`, given E.
inline std::vector<double> gronwall_on(const TimeGrid& fine, double u0, std::span<const double> alpha,
                                       std::span<const double> exponent) {
  std::vector<double> weighted(alpha.size());
  for (std::size_t j = 0; j < alpha.size(); ++j) weighted[j] = alpha[j] * std::exp(-exponent[j]);
  std::vector<double> acc = cumulative_trapezoid(fine.nodes(), weighted);
  std::vector<double> out(alpha.size());
  for (std::size_t j = 0; j < alpha.size(); ++j) out[j] = std::exp(exponent[j]) * (u0 + acc[j]);
  return out;
}

inline std::vector<double> subsample(std::span<const double> fine_values, std::size_t factor) {
  std::vector<double> out;
  out.reserve(fine_values.size() / factor + 1);
  for (std::size_t j = 0; j < fine_values.size(); j += factor) out.push_back(fine_values[j]);
  return out;
}

inline std::vector<double> abs_zeta_rate(const TimeGrid& fine, const std::optional<MovingSet>& C) {
  const std::size_t n = fine.nodes().size();
  std::vector<double> out(n, 0.0);
  if (!C) return out;
  if (C->zeta_dot) {
    for (std::size_t j = 0; j < n; ++j) out[j] = std::abs(C->zeta_dot(fine.node(j)));
  } else if (C->zeta) {
    for (std::size_t j = 0; j + 1 < n; ++j) {
      out[j] = std::abs(C->zeta(fine.node(j + 1)) - C->zeta(fine.node(j))) / fine.step(j);
    }
    out[n - 1] = out[n - 2];
  }
  return out;
}

}  // namespace detail

/// Exponential factor e(t2, t1) of the boosted Gronwall lemma for t1 <= t2, computed
/// on a uniform partition of [0, t2] with `panels` pieces.
inline double exp_factor(double t1, double t2, const ScalarFn& beta, const BivariateFn& gamma,
                         std::size_t panels = 512) {
  if (t1 > t2) throw std::invalid_argument("exponential factor needs t1 <= t2");
  if (t1 < 0.0) throw std::invalid_argument("times must be nonnegative");
  if (t2 == t1) return 1.0;
  TimeGrid fine = make_grid(t2, static_cast<long long>(panels));
  ExpFactor e(fine, detail::cumulative_exponent(fine, beta, gamma));
  return e(t1, t2);
}

/// Tabulated factor e on a refinement of `grid`.
inline ExpFactor make_exp_factor(const TimeGrid& grid, const ScalarFn& beta, const BivariateFn& gamma,
                                 std::size_t refine = kDefaultRefinement) {
  TimeGrid fine = grid.refined(refine);
  auto exponent = detail::cumulative_exponent(fine, beta, gamma);
  return ExpFactor(std::move(fine), std::move(exponent));
}

/// t -> u0 e(t,0) + int_0^t alpha(s) e(t,s) ds on the grid nodes.
inline Table gronwall_bound(double u0, const ScalarFn& alpha, const ScalarFn& beta, const BivariateFn& gamma,
                            const TimeGrid& grid, std::size_t refine = kDefaultRefinement) {
  if (u0 < 0.0) throw std::invalid_argument("initial value must be nonnegative");
  TimeGrid fine = grid.refined(refine);
  auto exponent = detail::cumulative_exponent(fine, beta, gamma);
  auto fine_alpha = sample(alpha, fine.nodes());
  auto bound = detail::gronwall_on(fine, u0, fine_alpha, exponent);
  return {grid, detail::subsample(bound, refine)};
}

// ---------------------------------------------------------------------------
// Envelopes
// ---------------------------------------------------------------------------

struct BoundTable {
  TimeGrid grid;
  std::vector<double> r;
  std::vector<double> psi;
  std::optional<std::vector<double>> m;
  ExpFactor factor;  ///< e (or epsilon) with rate c + int sigma
  std::vector<double> picard_residuals;

  Table r_table() const { return {grid, r}; }
  Table psi_table() const { return {grid, psi}; }
};

namespace detail {

struct FineEnvelope {
  TimeGrid fine;
  std::vector<double> c, d, inner_sigma, exponent;
  KernelSamples sigma;

  FineEnvelope(const ProblemSpec& spec, std::size_t refine)
      : fine(spec.grid.refined(refine)),
        c(sample(spec.envelope.c, fine.nodes())),
        d(sample(spec.envelope.d, fine.nodes())),
        inner_sigma(inner_integrals(fine, spec.envelope.sigma)),
        sigma(fine, spec.envelope.sigma) {
    std::vector<double> rate(c.size());
    for (std::size_t j = 0; j < c.size(); ++j) rate[j] = c[j] + inner_sigma[j];
    exponent = cumulative_trapezoid(fine.nodes(), rate);
  }

  std::vector<double> state(double x0_norm, std::span<const double> extra_rate) const {
    std::vector<double> alpha(d.size());
    for (std::size_t j = 0; j < d.size(); ++j) alpha[j] = d[j] + inner_sigma[j] + extra_rate[j];
    return gronwall_on(fine, x0_norm, alpha, exponent);
  }

  /// c r + d + int sigma + int sigma r
  std::vector<double> velocity(std::span<const double> r) const {
    std::vector<double> sr = sigma.against(r);
    std::vector<double> out(r.size());
    for (std::size_t j = 0; j < r.size(); ++j) out[j] = c[j] * r[j] + d[j] + inner_sigma[j] + sr[j];
    return out;
  }
};

}  // namespace detail

/// r(t) = ||x0|| e(t,0) + int_0^t (d(s) + int_0^s sigma(s,tau) dtau) e(t,s) ds.
inline Table state_envelope(const ProblemSpec& spec, std::size_t refine = kDefaultRefinement) {
  detail::FineEnvelope fe(spec, refine);
  std::vector<double> zero(fe.c.size(), 0.0);
  return {spec.grid, detail::subsample(fe.state(spec.x0.norm(), zero), refine)};
}

/// psi(t) = c(t) r(t) + d(t) + int_0^t sigma(t,s) ds + int_0^t sigma(t,s) r(s) ds, with r
/// interpolated linearly between its grid nodes.
inline Table velocity_envelope(const ProblemSpec& spec, const Table& r, std::size_t refine = kDefaultRefinement) {
  if (!(r.grid == spec.grid)) throw std::invalid_argument("grid mismatch");
  detail::FineEnvelope fe(spec, refine);
  auto r_fine = resample(r.grid, r.values, fe.fine);
  return {spec.grid, detail::subsample(fe.velocity(r_fine), refine)};
}

/// r, psi and e for the unconstrained inclusion.
inline BoundTable envelopes(const ProblemSpec& spec, std::size_t refine = kDefaultRefinement) {
  detail::FineEnvelope fe(spec, refine);
  std::vector<double> zero(fe.c.size(), 0.0);
  auto r = fe.state(spec.x0.norm(), zero);
  auto psi = fe.velocity(r);
  return {spec.grid,
          detail::subsample(r, refine),
          detail::subsample(psi, refine),
          std::nullopt,
          ExpFactor(fe.fine, fe.exponent),
          {}};
}

struct PicardOptions {
  double tolerance = 1e-10;
  std::size_t max_iterations = 200;
  std::size_t refine = kDefaultRefinement;
};

class ConvergenceError : public std::runtime_error {
 public:
  ConvergenceError(const std::string& what, double residual) : std::runtime_error(what), residual_(residual) {}
  double residual() const { return residual_; }

 private:
  double residual_;
};

/// Solves the coupled system for the sweeping envelopes
///   m = (|zeta'| + (1+L)(c r + d + int sigma + int sigma r)) / (alpha0^2 - L),
///   r = ||x0|| eps(t,0) + int_0^t (d + m + int sigma) eps(t,s) ds,
/// by Picard iteration starting from m = 0, then psi = c r + d + m + int sigma + int sigma r.
/// The residual is the sup distance between successive (m, r) iterates, relative to
/// max(1, sup m, sup r).
inline BoundTable sweeping_envelopes(const ProblemSpec& spec, const PicardOptions& opt = {}) {
  const double L = spec.C ? spec.C->L : 0.0;
  const double a2 = spec.alpha_far.alpha0 * spec.alpha_far.alpha0;
  if (!(a2 > L)) throw std::invalid_argument("alpha0^2 must exceed L");
  const double inv = 1.0 / (a2 - L);

  detail::FineEnvelope fe(spec, opt.refine);
  const std::vector<double> zeta_rate = detail::abs_zeta_rate(fe.fine, spec.C);
  const std::size_t n = fe.c.size();

  std::vector<double> m(n, 0.0);
  std::vector<double> r = fe.state(spec.x0.norm(), m);
  std::vector<double> residuals;
  bool converged = false;
  for (std::size_t it = 0; it < opt.max_iterations; ++it) {
    std::vector<double> base = fe.velocity(r);
    std::vector<double> m_next(n);
    for (std::size_t j = 0; j < n; ++j) m_next[j] = inv * (zeta_rate[j] + (1.0 + L) * base[j]);
    std::vector<double> r_next = fe.state(spec.x0.norm(), m_next);
    double diff = 0.0, scale = 1.0;
    for (std::size_t j = 0; j < n; ++j) {
      diff = std::max({diff, std::abs(m_next[j] - m[j]), std::abs(r_next[j] - r[j])});
      scale = std::max({scale, std::abs(m_next[j]), std::abs(r_next[j])});
    }
    m = std::move(m_next);
    r = std::move(r_next);
    residuals.push_back(diff / scale);
    if (residuals.back() <= opt.tolerance) {
      converged = true;
      break;
    }
  }
  if (!converged) {
    std::ostringstream msg;
    msg << "Picard iteration did not converge after " << opt.max_iterations << " iterations (residual "
        << residuals.back() << ")";
    throw ConvergenceError(msg.str(), residuals.back());
  }
  std::vector<double> psi = fe.velocity(r);
  for (std::size_t j = 0; j < n; ++j) psi[j] += m[j];
  return {spec.grid,
          detail::subsample(r, opt.refine),
          detail::subsample(psi, opt.refine),
          detail::subsample(m, opt.refine),
          ExpFactor(fe.fine, fe.exponent),
          std::move(residuals)};
}

// ---------------------------------------------------------------------------
// Horizon splitting
// ---------------------------------------------------------------------------

struct SubHorizon {
  std::size_t first = 0;  ///< node index of the left end
  std::size_t last = 0;   ///< node index of the right end
  double begin = 0.0;
  double end = 0.0;
  double integral = 0.0;  ///< int (|zeta'| + (1+L) psi) over the piece
};

/// Splits [0,T] into consecutive grid-aligned pieces, each as long as possible, on which
/// int (|zeta'(s)| + (1+L) psi(s)) ds <= 0.9 rho.
inline std::vector<SubHorizon> horizon_split(const ProblemSpec& spec, const Table& psi) {
  const double L = spec.C ? spec.C->L : 0.0;
  if (!(L >= 0.0 && L < 1.0)) throw std::invalid_argument("L must lie in [0,1)");
  const double rho = spec.alpha_far.rho;
  if (!(rho > 0.0)) throw std::invalid_argument("rho must be positive");
  const TimeGrid& grid = psi.grid;
  if (std::isinf(rho)) {
    return {SubHorizon{0, grid.steps(), 0.0, grid.horizon(), std::numeric_limits<double>::infinity()}};
  }
  std::vector<double> rate = detail::abs_zeta_rate(grid, spec.C);
  for (std::size_t k = 0; k < rate.size(); ++k) rate[k] += (1.0 + L) * psi.values[k];

  const double budget = 0.9 * rho;
  const double slack = 1e-12 * (1.0 + budget);
  std::vector<SubHorizon> pieces;
  SubHorizon cur{0, 0, 0.0, 0.0, 0.0};
  for (std::size_t k = 0; k < grid.steps(); ++k) {
    double cell = 0.5 * grid.step(k) * (rate[k] + rate[k + 1]);
    if (cell > budget + slack) throw std::domain_error("rho too small for grid");
    if (cur.integral + cell > budget + slack) {
      cur.end = grid.node(k);
      cur.last = k;
      pieces.push_back(cur);
      cur = SubHorizon{k, k, grid.node(k), grid.node(k), 0.0};
    }
    cur.integral += cell;
  }
  cur.last = grid.steps();
  cur.end = grid.horizon();
  pieces.push_back(cur);
  return pieces;
}

// ---------------------------------------------------------------------------
// Compliance
// ---------------------------------------------------------------------------

struct BoundsReport {
  std::vector<bool> state_ok;     ///< ||x_k|| <= r(t_k) + tol
  std::vector<bool> velocity_ok;  ///< ||v_k|| <= max(psi(t_k), psi(t_{k+1})) + tol
  double state_margin = std::numeric_limits<double>::infinity();
  double velocity_margin = std::numeric_limits<double>::infinity();
  std::size_t violations = 0;

  bool compliant() const { return violations == 0; }
};

/// Node-wise check of a trajectory against r and psi. A velocity lives on the whole
/// interval [t_k, t_{k+1}], so it is compared with the larger of the two endpoint values.
inline BoundsReport check_bounds(const Trajectory& traj, const BoundTable& table, double tol) {
  if (!(traj.grid() == table.grid)) throw std::invalid_argument("grid mismatch");
  BoundsReport rep;
  for (std::size_t k = 0; k < traj.size(); ++k) {
    double margin = table.r[k] - traj.state(k).norm();
    rep.state_margin = std::min(rep.state_margin, margin);
    rep.state_ok.push_back(margin + tol >= 0.0);
    if (!rep.state_ok.back()) ++rep.violations;
  }
  for (std::size_t k = 0; k < traj.velocities().size(); ++k) {
    double cap = std::max(table.psi[k], table.psi[k + 1]);
    double margin = cap - traj.velocity(k).norm();
    rep.velocity_margin = std::min(rep.velocity_margin, margin);
    rep.velocity_ok.push_back(margin + tol >= 0.0);
    if (!rep.velocity_ok.back()) ++rep.violations;
  }
  return rep;
}

/// Measured quadrature slack for check_bounds: the change of the envelopes when the
/// refinement is doubled plus the gap between the solver-grid trapezoid and the fine
/// trapezoid of int_0^t sigma(t,s)(1 + r(s)) ds.
inline double quadrature_slack(const ProblemSpec& spec, const BoundTable& table,
                               std::size_t refine = kDefaultRefinement) {
  const bool sweeping = table.m.has_value();
  BoundTable finer = sweeping ? sweeping_envelopes(spec, PicardOptions{1e-10, 200, 2 * refine})
                              : envelopes(spec, 2 * refine);
  double slack = 0.0;
  for (std::size_t k = 0; k < table.r.size(); ++k) {
    slack = std::max({slack, std::abs(finer.r[k] - table.r[k]), std::abs(finer.psi[k] - table.psi[k])});
  }
  if (spec.envelope.sigma) {
    const TimeGrid& grid = spec.grid;
    detail::FineEnvelope fe(spec, refine);
    auto r_fine = resample(grid, table.r, fe.fine);
    std::vector<double> one_plus_r(r_fine.size());
    for (std::size_t j = 0; j < r_fine.size(); ++j) one_plus_r[j] = 1.0 + r_fine[j];
    auto fine_int = fe.sigma.against(one_plus_r);
    for (std::size_t k = 1; k <= grid.steps(); ++k) {
      double coarse = 0.0;
      const double t = grid.node(k);
      for (std::size_t j = 0; j < k; ++j) {
        coarse += 0.5 * grid.step(j) *
                  (spec.envelope.sigma(t, grid.node(j)) * (1.0 + table.r[j]) +
                   spec.envelope.sigma(t, grid.node(j + 1)) * (1.0 + table.r[j + 1]));
      }
      slack = std::max(slack, std::abs(coarse - fine_int[k * refine]));
    }
  }
  return slack;
}

}  // namespace inclusol
