#pragma once

// Time grids, discrete trajectories, growth envelopes and the history-integral
// quadrature shared by every other module.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace inclusol {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Scalar function of time. An empty function stands for the zero function.
using ScalarFn = std::function<double(double)>;
/// Scalar function on the triangle {(t, s) : s <= t}. Empty means zero.
using BivariateFn = std::function<double(double, double)>;

inline constexpr std::size_t kDefaultRefinement = 4;

inline double eval_or_zero(const ScalarFn& f, double t) { return f ? f(t) : 0.0; }
inline double eval_or_zero(const BivariateFn& f, double t, double s) { return f ? f(t, s) : 0.0; }

// ---------------------------------------------------------------------------
// TimeGrid
// ---------------------------------------------------------------------------

/// Partition 0 = t_0 < t_1 < ... < t_N = T of the horizon.
class TimeGrid {
 public:
  explicit TimeGrid(std::vector<double> nodes) : nodes_(std::move(nodes)) {
    if (nodes_.size() < 2) throw std::invalid_argument("empty grid");
    if (nodes_.front() != 0.0) throw std::invalid_argument("grid must start at t = 0");
    for (std::size_t k = 0; k + 1 < nodes_.size(); ++k) {
      if (!(nodes_[k + 1] > nodes_[k])) throw std::invalid_argument("grid nodes must be strictly increasing");
    }
  }

  double horizon() const { return nodes_.back(); }
  std::size_t steps() const { return nodes_.size() - 1; }
  double node(std::size_t k) const { return nodes_[k]; }
  double step(std::size_t k) const { return nodes_[k + 1] - nodes_[k]; }
  std::span<const double> nodes() const { return nodes_; }

  double max_step() const {
    double h = 0.0;
    for (std::size_t k = 0; k < steps(); ++k) h = std::max(h, step(k));
    return h;
  }

  /// Index k of the interval [t_k, t_{k+1}] containing t (the last interval for t = T).
  std::size_t locate(double t) const {
    if (t < 0.0 || t > horizon()) throw std::out_of_range("time outside [0, T]");
    auto it = std::upper_bound(nodes_.begin(), nodes_.end(), t);
    std::size_t k = static_cast<std::size_t>(it - nodes_.begin());
    return k == 0 ? 0 : std::min(k - 1, steps() - 1);
  }

  /// Every interval split into `factor` equal pieces; node k of this grid is node k*factor of the result.
  TimeGrid refined(std::size_t factor) const {
    if (factor == 0) throw std::invalid_argument("refinement factor must be positive");
    std::vector<double> fine;
    fine.reserve(steps() * factor + 1);
    for (std::size_t k = 0; k < steps(); ++k) {
      for (std::size_t j = 0; j < factor; ++j) {
        fine.push_back(nodes_[k] + step(k) * static_cast<double>(j) / static_cast<double>(factor));
      }
    }
    fine.push_back(horizon());
    return TimeGrid(std::move(fine));
  }

  bool operator==(const TimeGrid&) const = default;

 private:
  std::vector<double> nodes_;
};

/// Uniform grid with h = T/N.
inline TimeGrid make_grid(double horizon, long long steps) {
  if (steps < 1) throw std::invalid_argument("empty grid");
  if (!(horizon > 0.0) || !std::isfinite(horizon)) throw std::invalid_argument("horizon must be positive");
  std::vector<double> nodes(static_cast<std::size_t>(steps) + 1);
  for (long long k = 0; k < steps; ++k) {
    nodes[static_cast<std::size_t>(k)] = horizon * static_cast<double>(k) / static_cast<double>(steps);
  }
  nodes.back() = horizon;
  return TimeGrid(std::move(nodes));
}

/// Piecewise-linear interpolation of node values.
inline double interpolate_values(const TimeGrid& grid, std::span<const double> values, double t) {
  std::size_t k = grid.locate(t);
  double w = (t - grid.node(k)) / grid.step(k);
  return (1.0 - w) * values[k] + w * values[k + 1];
}

/// Scalar values attached to the nodes of a grid.
struct Table {
  TimeGrid grid;
  std::vector<double> values;

  /// Piecewise-linear evaluation.
  double at(double t) const { return interpolate_values(grid, values, t); }
  double max() const { return *std::max_element(values.begin(), values.end()); }
};

// ---------------------------------------------------------------------------
// Trajectory
// ---------------------------------------------------------------------------

/// Piecewise-linear absolutely continuous function: states at the nodes and the
/// constant velocity on each interval, x_{k+1} = x_k + h_k v_k.
///
/// Built incrementally by a solver, then treated as a value.
class Trajectory {
 public:
  Trajectory(TimeGrid grid, Vector x0) : grid_(std::move(grid)) {
    states_.reserve(grid_.steps() + 1);
    velocities_.reserve(grid_.steps());
    states_.push_back(std::move(x0));
  }

  /// Appends v_k and the state x_k + h_k v_k.
  void push_velocity(const Vector& v) {
    check_room(v);
    std::size_t k = velocities_.size();
    states_.push_back(states_[k] + grid_.step(k) * v);
    velocities_.push_back(v);
  }

  /// Appends x_{k+1} as given and records the realized increment (x_{k+1} - x_k)/h_k.
  void push_state(const Vector& next) {
    check_room(next);
    std::size_t k = velocities_.size();
    velocities_.push_back((next - states_[k]) / grid_.step(k));
    states_.push_back(next);
  }

  const TimeGrid& grid() const { return grid_; }
  std::span<const Vector> states() const { return states_; }
  std::span<const Vector> velocities() const { return velocities_; }
  const Vector& state(std::size_t k) const { return states_[k]; }
  const Vector& velocity(std::size_t k) const { return velocities_[k]; }
  Eigen::Index dimension() const { return states_.front().size(); }
  std::size_t size() const { return states_.size(); }
  bool complete() const { return velocities_.size() == grid_.steps(); }

  /// max_k ||x_{k+1} - x_k - h_k v_k||.
  double consistency_defect() const {
    double worst = 0.0;
    for (std::size_t k = 0; k < velocities_.size(); ++k) {
      worst = std::max(worst, (states_[k + 1] - states_[k] - grid_.step(k) * velocities_[k]).norm());
    }
    return worst;
  }

  double max_state_norm() const {
    double m = 0.0;
    for (const auto& x : states_) m = std::max(m, x.norm());
    return m;
  }
  double max_velocity_norm() const {
    double m = 0.0;
    for (const auto& v : velocities_) m = std::max(m, v.norm());
    return m;
  }

 private:
  void check_room(const Vector& v) const {
    if (complete()) throw std::logic_error("trajectory already spans the whole grid");
    if (v.size() != states_.front().size()) throw std::invalid_argument("dimension mismatch");
  }

  TimeGrid grid_;
  std::vector<Vector> states_;
  std::vector<Vector> velocities_;
};

/// Value of the piecewise-linear representative at time t; exact at nodes.
inline Vector interpolate(const Trajectory& traj, double t) {
  const TimeGrid& grid = traj.grid();
  std::size_t k = grid.locate(t);
  if (t == grid.node(k)) return traj.state(k);
  if (t == grid.node(k + 1) && k + 1 < traj.size()) return traj.state(k + 1);
  if (k + 1 >= traj.size()) throw std::out_of_range("trajectory does not reach t");
  double w = (t - grid.node(k)) / grid.step(k);
  return (1.0 - w) * traj.state(k) + w * traj.state(k + 1);
}

/// sup_k ||a_k - b_k|| over common nodes.
inline double sup_distance(const Trajectory& a, const Trajectory& b) {
  if (!(a.grid() == b.grid())) throw std::invalid_argument("grid mismatch");
  double gap = 0.0;
  for (std::size_t k = 0; k < std::min(a.size(), b.size()); ++k) gap = std::max(gap, (a.state(k) - b.state(k)).norm());
  return gap;
}

// ---------------------------------------------------------------------------
// Kernels and the history integral
// ---------------------------------------------------------------------------

/// Volterra kernel g(t, s, x, u). Uncontrolled kernels ignore u.
struct Kernel {
  using Fn = std::function<Vector(double t, double s, const Vector& x, const Vector& u)>;

  Fn eval;
  /// False when g does not depend on its first argument; the history then
  /// becomes a running sum.
  bool depends_on_t = true;

  bool is_zero() const { return !eval; }

  static Kernel zero() { return {}; }

  static Kernel state(std::function<Vector(double, double, const Vector&)> f, bool depends_on_t = true) {
    return {[f = std::move(f)](double t, double s, const Vector& x, const Vector&) { return f(t, s, x); },
            depends_on_t};
  }

  static Kernel controlled(Fn f, bool depends_on_t = true) { return {std::move(f), depends_on_t}; }

  Vector operator()(double t, double s, const Vector& x, const Vector& u) const { return eval(t, s, x, u); }
};

/// Control values per interval, u_j on [t_j, t_{j+1}). Empty span means uncontrolled.
using ControlValues = std::span<const Vector>;

namespace detail {

inline const Vector& empty_control() {
  static const Vector none;
  return none;
}

inline const Vector& control_at(ControlValues u, std::size_t j) {
  return u.empty() ? empty_control() : u[j];
}

/// Trapezoid over one cell [t_j, t_{j+1}] with the control frozen at u_j.
inline Vector history_cell(const TimeGrid& grid, std::span<const Vector> states, const Kernel& g, double t,
                           std::size_t j, ControlValues u) {
  const Vector& uj = control_at(u, j);
  return 0.5 * grid.step(j) * (g(t, grid.node(j), states[j], uj) + g(t, grid.node(j + 1), states[j + 1], uj));
}

}  // namespace detail

/// Composite trapezoid approximation of int_0^{t_k} g(t_k, s, x(s), u(s)) ds over the
/// history nodes t_0..t_k. Piecewise-constant controls are frozen per cell.
inline Vector history_integral(const TimeGrid& grid, std::span<const Vector> states, const Kernel& g, std::size_t k,
                               ControlValues u = {}) {
  if (k >= states.size()) throw std::out_of_range("history node beyond stored states");
  Vector acc = Vector::Zero(states.front().size());
  if (g.is_zero()) return acc;
  const double t = grid.node(k);
  for (std::size_t j = 0; j < k; ++j) acc += detail::history_cell(grid, states, g, t, j, u);
  return acc;
}

inline Vector history_integral(const Trajectory& traj, const Kernel& g, std::size_t k, ControlValues u = {}) {
  return history_integral(traj.grid(), traj.states(), g, k, u);
}

/// Incremental form of history_integral used while a trajectory is being built.
/// For kernels independent of t the cell sums are accumulated once; otherwise the
/// sum is recomputed in the same order as history_integral.
class HistoryQuadrature {
 public:
  HistoryQuadrature(const TimeGrid& grid, const Kernel& g, Eigen::Index dim)
      : grid_(&grid), g_(&g), running_(Vector::Zero(dim)) {}

  Vector at(std::size_t k, std::span<const Vector> states, ControlValues u = {}) {
    if (g_->is_zero()) return Vector::Zero(running_.size());
    if (g_->depends_on_t) return history_integral(*grid_, states, *g_, k, u);
    while (cells_ < k) {
      running_ += detail::history_cell(*grid_, states, *g_, 0.0, cells_, u);
      ++cells_;
    }
    return running_;
  }

 private:
  const TimeGrid* grid_;
  const Kernel* g_;
  Vector running_;
  std::size_t cells_ = 0;
};

// ---------------------------------------------------------------------------
// Scalar quadrature helpers
// ---------------------------------------------------------------------------

/// F_j = int_{t_0}^{t_j} f, composite trapezoid on the given nodes.
inline std::vector<double> cumulative_trapezoid(std::span<const double> nodes, std::span<const double> f) {
  std::vector<double> out(nodes.size(), 0.0);
  for (std::size_t j = 1; j < nodes.size(); ++j) {
    out[j] = out[j - 1] + 0.5 * (nodes[j] - nodes[j - 1]) * (f[j] + f[j - 1]);
  }
  return out;
}

inline std::vector<double> sample(const ScalarFn& f, std::span<const double> nodes) {
  std::vector<double> out(nodes.size(), 0.0);
  if (f) std::transform(nodes.begin(), nodes.end(), out.begin(), f);
  return out;
}

/// Piecewise-linear resampling of node values from `coarse` onto `fine`.
inline std::vector<double> resample(const TimeGrid& coarse, std::span<const double> values, const TimeGrid& fine) {
  Table table{coarse, {values.begin(), values.end()}};
  std::vector<double> out(fine.nodes().size());
  for (std::size_t j = 0; j < out.size(); ++j) out[j] = table.at(std::min(fine.node(j), coarse.horizon()));
  return out;
}

// ---------------------------------------------------------------------------
// Growth envelope
// ---------------------------------------------------------------------------

/// Coefficients of the linear-growth, kernel and monotonicity hypotheses.
/// Empty callables mean identically zero.
struct GrowthEnvelope {
  ScalarFn c;            ///< d(0, F(t,x)) <= c(t)||x|| + d(t)
  ScalarFn d;
  BivariateFn sigma;     ///< ||g(t,s,x)|| <= sigma(t,s)(1 + ||x||)
  std::function<double(double radius, double t)> mu;  ///< Lipschitz modulus of g on the ball of given radius
  ScalarFn k;            ///< noncompactness modulus of F
  ScalarFn k_tilde;      ///< one-sided Lipschitz constant of F, any sign

  double mu_at(double radius, double t) const { return mu ? mu(radius, t) : 0.0; }
  bool has_mu() const { return static_cast<bool>(mu); }

  /// Throws if a coefficient that must be nonnegative is negative on a sample of grid nodes.
  void validate(const TimeGrid& grid) const {
    std::vector<double> probe;
    std::size_t stride = std::max<std::size_t>(1, grid.steps() / 64);
    for (std::size_t j = 0; j <= grid.steps(); j += stride) probe.push_back(grid.node(j));
    probe.push_back(grid.horizon());
    for (double t : probe) {
      if (eval_or_zero(c, t) < 0.0) throw std::invalid_argument("envelope c must be nonnegative");
      if (eval_or_zero(d, t) < 0.0) throw std::invalid_argument("envelope d must be nonnegative");
      if (eval_or_zero(k, t) < 0.0) throw std::invalid_argument("envelope k must be nonnegative");
      if (mu && mu(1.0, t) < 0.0) throw std::invalid_argument("envelope mu must be nonnegative");
      if (mu && mu(2.0, t) < mu(1.0, t)) throw std::invalid_argument("envelope mu must be nondecreasing in the radius");
      for (double s : probe) {
        if (s > t) break;
        if (eval_or_zero(sigma, t, s) < 0.0) throw std::invalid_argument("envelope sigma must be nonnegative");
      }
    }
  }
};

}  // namespace inclusol
