#pragma once

// Closed constraint sets in R^D: distance, projection, distance subgradients,
// alpha-far estimation and moving (time and state dependent) families.
//
// Subsmoothness of the bundled variants holds by construction: halfspaces, boxes,
// balls and polyhedra are convex, the complement of an open ball is prox-regular
// with constant equal to its radius, and finite unions of convex members are
// handled through their active member.

#include "inclusol/core.hpp"

#include <optional>
#include <variant>

namespace inclusol {

/// {y : <a, y> <= b}
struct HalfSpace {
  Vector normal;
  double offset = 0.0;
};

/// {y : lower <= y <= upper} componentwise.
struct Box {
  Vector lower;
  Vector upper;
};

struct Ball {
  Vector center;
  double radius = 1.0;
};

/// {y : A y <= b}, a finite intersection of halfspaces.
struct Polyhedron {
  Matrix A;
  Vector b;
};

/// {y : ||y - center|| >= radius}, prox-regular with constant `radius`.
struct BallComplement {
  Vector center;
  double radius = 1.0;
};

using ConvexSet = std::variant<HalfSpace, Box, Ball, Polyhedron>;

/// Finite union of convex members.
struct Union {
  std::vector<ConvexSet> members;
};

using SetGeometry = std::variant<HalfSpace, Box, Ball, Polyhedron, BallComplement, Union>;

inline bool is_convex(const SetGeometry& S) {
  return !std::holds_alternative<BallComplement>(S) && !std::holds_alternative<Union>(S);
}

namespace detail {

inline double scale_tol(double base, double magnitude) { return base * (1.0 + magnitude); }

inline bool lex_greater(const Vector& a, const Vector& b) {
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    if (a[i] != b[i]) return a[i] > b[i];
  }
  return false;
}

inline void check_dim(const Vector& expected, const Vector& x) {
  if (expected.size() != x.size()) throw std::invalid_argument("dimension mismatch");
}

// Exact projection onto {A y <= b}: enumerate candidate active sets by size and
// return the first KKT point. Meant for the small polytopes used in scenarios.
inline Vector project_polyhedron(const Polyhedron& P, const Vector& x) {
  const Eigen::Index m = P.A.rows();
  const Eigen::Index dim = P.A.cols();
  if (dim != x.size()) throw std::invalid_argument("dimension mismatch");
  auto feasible = [&](const Vector& y) {
    Vector slack = P.A * y - P.b;
    for (Eigen::Index i = 0; i < m; ++i) {
      if (slack[i] > scale_tol(1e-12, std::abs(P.b[i]) + P.A.row(i).norm() * y.norm())) return false;
    }
    return true;
  };
  if (feasible(x)) return x;

  const Eigen::Index max_active = std::min(m, dim);
  std::vector<Eigen::Index> idx;
  std::size_t visited = 0;
  for (Eigen::Index size = 1; size <= max_active; ++size) {
    // Lexicographic enumeration of size-subsets of {0..m-1}.
    idx.resize(static_cast<std::size_t>(size));
    for (Eigen::Index i = 0; i < size; ++i) idx[static_cast<std::size_t>(i)] = i;
    while (true) {
      if (++visited > 2'000'000) throw std::runtime_error("polyhedron too large for exact projection");
      Matrix As(size, dim);
      Vector bs(size);
      for (Eigen::Index i = 0; i < size; ++i) {
        As.row(i) = P.A.row(idx[static_cast<std::size_t>(i)]);
        bs[i] = P.b[idx[static_cast<std::size_t>(i)]];
      }
      Matrix gram = As * As.transpose();
      Eigen::FullPivLU<Matrix> lu(gram);
      if (lu.isInvertible()) {
        Vector lambda = lu.solve(As * x - bs);
        if (lambda.minCoeff() >= -1e-12 * (1.0 + lambda.cwiseAbs().maxCoeff())) {
          Vector y = x - As.transpose() * lambda;
          if (feasible(y)) return y;
        }
      }
      // next subset
      Eigen::Index pos = size - 1;
      while (pos >= 0 && idx[static_cast<std::size_t>(pos)] == m - size + pos) --pos;
      if (pos < 0) break;
      ++idx[static_cast<std::size_t>(pos)];
      for (Eigen::Index i = pos + 1; i < size; ++i) {
        idx[static_cast<std::size_t>(i)] = idx[static_cast<std::size_t>(i - 1)] + 1;
      }
    }
  }
  throw std::runtime_error("polyhedron is empty");
}

inline Vector project_convex(const ConvexSet& S, const Vector& x) {
  return std::visit(
      [&](const auto& s) -> Vector {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, HalfSpace>) {
          check_dim(s.normal, x);
          double excess = s.normal.dot(x) - s.offset;
          if (excess <= 0.0) return x;
          return x - (excess / s.normal.squaredNorm()) * s.normal;
        } else if constexpr (std::is_same_v<T, Box>) {
          check_dim(s.lower, x);
          return x.cwiseMax(s.lower).cwiseMin(s.upper);
        } else if constexpr (std::is_same_v<T, Ball>) {
          check_dim(s.center, x);
          Vector diff = x - s.center;
          double n = diff.norm();
          if (n <= s.radius) return x;
          return s.center + (s.radius / n) * diff;
        } else {
          return project_polyhedron(s, x);
        }
      },
      S);
}

}  // namespace detail

/// Checks the structural invariants of a set declaration.
inline void validate(const SetGeometry& S) {
  auto check_convex = [](const ConvexSet& c) {
    std::visit(
        [](const auto& s) {
          using T = std::decay_t<decltype(s)>;
          if constexpr (std::is_same_v<T, HalfSpace>) {
            if (s.normal.norm() == 0.0) throw std::invalid_argument("halfspace normal must be nonzero");
          } else if constexpr (std::is_same_v<T, Box>) {
            if (s.lower.size() != s.upper.size()) throw std::invalid_argument("box bounds dimension mismatch");
            if ((s.upper - s.lower).minCoeff() < 0.0) throw std::invalid_argument("box is empty");
          } else if constexpr (std::is_same_v<T, Ball>) {
            if (!(s.radius > 0.0)) throw std::invalid_argument("radius must be positive");
          } else {
            if (s.A.rows() != s.b.size() || s.A.rows() == 0) throw std::invalid_argument("polyhedron shape mismatch");
          }
        },
        c);
  };
  std::visit(
      [&](const auto& s) {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, BallComplement>) {
          if (!(s.radius > 0.0)) throw std::invalid_argument("radius must be positive");
        } else if constexpr (std::is_same_v<T, Union>) {
          if (s.members.empty()) throw std::invalid_argument("union needs at least one member");
          for (const auto& m : s.members) check_convex(m);
        } else {
          check_convex(ConvexSet{s});
        }
      },
      S);
}

/// One element of Proj_S(x). Among equidistant candidates (unions, the center of a
/// ball complement) the lexicographically largest point is returned.
inline Vector project(const SetGeometry& S, const Vector& x) {
  return std::visit(
      [&](const auto& s) -> Vector {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, BallComplement>) {
          detail::check_dim(s.center, x);
          Vector diff = x - s.center;
          double n = diff.norm();
          if (n >= s.radius) return x;
          if (n == 0.0) {
            Vector p = s.center;
            p[0] += s.radius;
            return p;
          }
          return s.center + (s.radius / n) * diff;
        } else if constexpr (std::is_same_v<T, Union>) {
          std::optional<Vector> best;
          double best_d = std::numeric_limits<double>::infinity();
          for (const auto& member : s.members) {
            Vector p = detail::project_convex(member, x);
            double d = (x - p).norm();
            double tie = detail::scale_tol(1e-12, std::min(d, best_d));
            if (!best || d < best_d - tie) {
              best = std::move(p);
              best_d = d;
            } else if (std::abs(d - best_d) <= tie && detail::lex_greater(p, *best)) {
              best = std::move(p);
              best_d = std::min(d, best_d);
            }
          }
          return *best;
        } else {
          return detail::project_convex(ConvexSet{s}, x);
        }
      },
      S);
}

/// d_S(x) = inf_{y in S} ||x - y||.
inline double distance(const SetGeometry& S, const Vector& x) { return (x - project(S, x)).norm(); }

namespace detail {

enum class Location { Interior, Boundary, Exterior };

inline double boundary_tol(const Vector& x) { return scale_tol(1e-10, x.norm()); }

// Location of x together with an outward unit normal when x is on the boundary.
inline std::pair<Location, Vector> locate_convex(const ConvexSet& S, const Vector& x) {
  const double tol = boundary_tol(x);
  return std::visit(
      [&](const auto& s) -> std::pair<Location, Vector> {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, HalfSpace>) {
          double an = s.normal.norm();
          double excess = (s.normal.dot(x) - s.offset) / an;
          if (excess > tol) return {Location::Exterior, {}};
          if (excess < -tol) return {Location::Interior, {}};
          return {Location::Boundary, s.normal / an};
        } else if constexpr (std::is_same_v<T, Box>) {
          for (Eigen::Index i = 0; i < x.size(); ++i) {
            if (x[i] > s.upper[i] + tol || x[i] < s.lower[i] - tol) return {Location::Exterior, {}};
          }
          for (Eigen::Index i = 0; i < x.size(); ++i) {
            if (std::abs(x[i] - s.upper[i]) <= tol) return {Location::Boundary, Vector::Unit(x.size(), i)};
            if (std::abs(x[i] - s.lower[i]) <= tol) return {Location::Boundary, -Vector::Unit(x.size(), i)};
          }
          return {Location::Interior, {}};
        } else if constexpr (std::is_same_v<T, Ball>) {
          Vector diff = x - s.center;
          double n = diff.norm();
          if (n > s.radius + tol) return {Location::Exterior, {}};
          if (n < s.radius - tol) return {Location::Interior, {}};
          return {Location::Boundary, diff / n};
        } else {
          Vector slack = s.A * x - s.b;
          std::optional<Vector> normal;
          for (Eigen::Index i = 0; i < slack.size(); ++i) {
            double an = s.A.row(i).norm();
            double e = slack[i] / an;
            if (e > tol) return {Location::Exterior, {}};
            if (e >= -tol && !normal) normal = Vector(s.A.row(i).transpose() / an);
          }
          if (normal) return {Location::Boundary, *normal};
          return {Location::Interior, {}};
        }
      },
      S);
}

}  // namespace detail

/// Element of the Clarke subdifferential of d_S at x with unit norm: (x - p)/d_S(x)
/// outside S, the outward unit normal of the active variant on the boundary.
/// Interior points have only the zero subgradient and are rejected.
inline Vector distance_subgradient(const SetGeometry& S, const Vector& x) {
  Vector p = project(S, x);
  double d = (x - p).norm();
  if (d > detail::boundary_tol(x)) return (x - p) / d;

  auto interior = []() -> Vector { throw std::domain_error("no nonzero subgradient selected"); };
  return std::visit(
      [&](const auto& s) -> Vector {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, BallComplement>) {
          Vector diff = s.center - x;
          double n = diff.norm();
          if (n < s.radius - detail::boundary_tol(x)) return interior();
          return diff / n;
        } else if constexpr (std::is_same_v<T, Union>) {
          std::optional<Vector> normal;
          for (const auto& member : s.members) {
            auto [where, n] = detail::locate_convex(member, x);
            if (where == detail::Location::Interior) return interior();
            if (where == detail::Location::Boundary && !normal) normal = n;
          }
          if (!normal) throw std::domain_error("no active member at boundary point");
          return *normal;
        } else {
          auto [where, n] = detail::locate_convex(ConvexSet{s}, x);
          if (where == detail::Location::Interior) return interior();
          if (where == detail::Location::Exterior) throw std::domain_error("boundary point not located");
          return n;
        }
      },
      S);
}

namespace detail {

/// Minimum-norm point of conv{u_1..u_k} by projected gradient on the simplex.
inline Vector min_norm_in_hull(const std::vector<Vector>& points) {
  const std::size_t k = points.size();
  if (k == 1) return points.front();
  Matrix U(points.front().size(), static_cast<Eigen::Index>(k));
  for (std::size_t i = 0; i < k; ++i) U.col(static_cast<Eigen::Index>(i)) = points[i];
  Matrix G = U.transpose() * U;
  double lip = std::max(G.diagonal().sum(), 1e-300);
  Vector w = Vector::Constant(static_cast<Eigen::Index>(k), 1.0 / static_cast<double>(k));
  auto simplex_project = [](Vector v) {
    Vector sorted = v;
    std::sort(sorted.data(), sorted.data() + sorted.size(), std::greater<>());
    double cum = 0.0, theta = 0.0;
    for (Eigen::Index i = 0; i < sorted.size(); ++i) {
      cum += sorted[i];
      double candidate = (cum - 1.0) / static_cast<double>(i + 1);
      if (sorted[i] - candidate > 0.0) theta = candidate;
    }
    return Vector((v.array() - theta).max(0.0));
  };
  for (int it = 0; it < 5000; ++it) {
    Vector next = simplex_project(w - (G * w) / lip);
    if ((next - w).lpNorm<Eigen::Infinity>() < 1e-15) {
      w = next;
      break;
    }
    w = next;
  }
  return U * w;
}

}  // namespace detail

struct AlphaFarEstimate {
  double value = 1.0;          ///< sampled inf of d(0, ∂d_S(x)) over the tube
  std::size_t tube_samples = 0;
  Vector worst_point;
};

/// Sampled estimate of inf_{x in U_rho(S)} d(0, ∂d_S(x)). Where several members of a
/// union (or the whole sphere of a ball complement) are nearest up to a relative
/// tolerance of 1e-6, the minimum-norm point of the hull of their unit directions is used.
/// This never certifies the alpha-far property; it only samples it.
inline AlphaFarEstimate alpha_far_estimate(const SetGeometry& S, double rho, std::span<const Vector> samples) {
  if (!(rho > 0.0)) throw std::invalid_argument("rho must be positive");
  if (samples.empty()) throw std::invalid_argument("no samples");
  constexpr double kNearTie = 1e-6;
  AlphaFarEstimate est;
  for (const Vector& x : samples) {
    double d = distance(S, x);
    if (!(d > 0.0) || !(d < rho)) continue;
    ++est.tube_samples;
    double value = 1.0;
    if (const auto* u = std::get_if<Union>(&S)) {
      std::vector<std::pair<double, Vector>> cands;
      for (const auto& m : u->members) {
        Vector p = detail::project_convex(m, x);
        cands.emplace_back((x - p).norm(), (x - p));
      }
      double dmin = std::numeric_limits<double>::infinity();
      for (const auto& c : cands) dmin = std::min(dmin, c.first);
      std::vector<Vector> dirs;
      for (const auto& c : cands) {
        if (c.first <= dmin * (1.0 + kNearTie)) dirs.push_back(c.second / c.first);
      }
      value = detail::min_norm_in_hull(dirs).norm();
    } else if (const auto* bc = std::get_if<BallComplement>(&S)) {
      // The center is equidistant from the whole sphere; the hull of all unit directions contains 0.
      if ((x - bc->center).norm() <= kNearTie * bc->radius) value = 0.0;
    }
    if (value < est.value || est.worst_point.size() == 0) {
      est.value = value;
      est.worst_point = x;
    }
  }
  if (est.tube_samples == 0) throw std::domain_error("empty tube sample");
  return est;
}

// ---------------------------------------------------------------------------
// Moving sets
// ---------------------------------------------------------------------------

enum class VariationKind { StateDependent, TimeOnly };

/// Family (t, x) -> C(t, x) with |d(z,C(t,x)) - d(z,C(s,y))| <= |zeta(t)-zeta(s)| + L||x-y||.
struct MovingSet {
  std::function<SetGeometry(double t, const Vector& x)> family;
  ScalarFn zeta;
  ScalarFn zeta_dot;  ///< optional; forward differences of zeta are used when empty
  double L = 0.0;
  VariationKind kind = VariationKind::StateDependent;

  SetGeometry at(double t, const Vector& x) const { return family(t, x); }

  void validate() const {
    if (!family) throw std::invalid_argument("moving set without family");
    if (kind == VariationKind::StateDependent && !(L >= 0.0 && L < 1.0)) {
      throw std::invalid_argument("L must lie in [0,1)");
    }
    if (kind == VariationKind::TimeOnly && L != 0.0) throw std::invalid_argument("time-only families have L = 0");
  }

  static MovingSet fixed(SetGeometry S) {
    return {[S = std::move(S)](double, const Vector&) { return S; }, {}, {}, 0.0, VariationKind::TimeOnly};
  }
};

/// Probe point for lipschitz_probe.
struct LipschitzProbe {
  double t = 0.0;
  Vector x;
  Vector z;
};

struct LipschitzReport {
  double worst_ratio = 0.0;       ///< max variation / (|Δζ| + L||Δx||) over pairs with positive denominator
  double worst_zeta_ratio = 0.0;  ///< max variation / |Δζ| over pairs with Δx = 0
  double empirical_L = 0.0;       ///< max (variation - |Δζ|)/||Δx|| over pairs with Δx != 0
  std::size_t pairs = 0;
  std::size_t violations = 0;
  bool compliant() const { return violations == 0; }
};

/// Compares |d(z_i, C(t_i, x_i)) - d(z_i, C(t_j, x_j))| against the declared (zeta, L)
/// over all ordered probe pairs.
inline LipschitzReport lipschitz_probe(const MovingSet& M, std::span<const LipschitzProbe> probes) {
  LipschitzReport rep;
  auto zeta = [&](double t) { return eval_or_zero(M.zeta, t); };
  for (std::size_t i = 0; i < probes.size(); ++i) {
    for (std::size_t j = 0; j < probes.size(); ++j) {
      if (i == j) continue;
      const auto& a = probes[i];
      const auto& b = probes[j];
      double var = std::abs(distance(M.at(a.t, a.x), a.z) - distance(M.at(b.t, b.x), a.z));
      double dz = std::abs(zeta(a.t) - zeta(b.t));
      double dx = M.kind == VariationKind::TimeOnly ? 0.0 : (a.x - b.x).norm();
      double denom = dz + M.L * dx;
      ++rep.pairs;
      if (var > denom + 1e-12 * (1.0 + var)) ++rep.violations;
      if (denom > 0.0) rep.worst_ratio = std::max(rep.worst_ratio, var / denom);
      if (dx == 0.0 && dz > 0.0) rep.worst_zeta_ratio = std::max(rep.worst_zeta_ratio, var / dz);
      if (dx > 0.0) rep.empirical_L = std::max(rep.empirical_L, (var - dz) / dx);
    }
  }
  return rep;
}

}  // namespace inclusol
