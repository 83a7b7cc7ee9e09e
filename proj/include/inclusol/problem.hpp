#pragma once

// Data of one inclusion instance: x' in F(t,x) + int_0^t g(t,s,x(s)) ds, optionally
// swept by a moving set C(t,x).

#include "inclusol/core.hpp"
#include "inclusol/sets.hpp"

#include <optional>
#include <variant>

namespace inclusol {

using StateMap = std::function<Vector(double t, const Vector& x)>;

/// F(t,x) = {f(t,x)}.
struct SingletonMap {
  StateMap f;
};

/// F(t,x) = offset(t,x) + S with S closed and convex.
struct AffineSetMap {
  StateMap offset;
  SetGeometry set;
};

/// F(t,x) = [lower, upper], a fixed box of velocities.
struct VelocityBox {
  Vector lower;
  Vector upper;
};

/// Supported representations of a set-valued map with closed convex values.
using VelocityMap = std::variant<SingletonMap, AffineSetMap, VelocityBox>;

inline VelocityMap zero_map() {
  return SingletonMap{[](double, const Vector& x) -> Vector { return Vector::Zero(x.size()); }};
}

/// alpha_0 in (0,1] and rho in (0, inf] of the alpha-far hypothesis.
struct AlphaFar {
  double alpha0 = 1.0;
  double rho = std::numeric_limits<double>::infinity();
};

struct ProblemSpec {
  Vector x0;
  TimeGrid grid = make_grid(1.0, 1);
  VelocityMap F = zero_map();
  Kernel g;
  std::optional<MovingSet> C;
  GrowthEnvelope envelope;
  AlphaFar alpha_far;

  Eigen::Index dimension() const { return x0.size(); }

  /// Throws std::invalid_argument naming the failed invariant.
  void validate(bool sweeping = false) const {
    if (x0.size() == 0) throw std::invalid_argument("initial point must be nonempty");
    envelope.validate(grid);
    if (!(alpha_far.alpha0 > 0.0 && alpha_far.alpha0 <= 1.0)) throw std::invalid_argument("alpha0 must lie in (0,1]");
    if (!(alpha_far.rho > 0.0)) throw std::invalid_argument("rho must be positive");
    if (C) {
      C->validate();
      if (distance(C->at(0.0, x0), x0) > 1e-9 * (1.0 + x0.norm())) {
        throw std::invalid_argument("initial point must lie in C(0, x0)");
      }
      if (sweeping && !(alpha_far.alpha0 * alpha_far.alpha0 > C->L)) {
        throw std::invalid_argument("alpha0^2 must exceed L");
      }
    }
  }
};

}  // namespace inclusol
