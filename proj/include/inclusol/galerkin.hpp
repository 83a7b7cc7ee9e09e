#pragma once

// Orthogonal projectors onto span{e_1..e_n}, radial truncation, and the
// Hausdorff measure-of-noncompactness estimator built on the projector residuals.

#include "inclusol/core.hpp"

#include <optional>

namespace inclusol {

/// P_n x = sum_{k<=n} <x, e_k> e_k for an orthonormal basis (e_k) of R^D.
class Projector {
 public:
  /// Canonical basis.
  Projector(Eigen::Index dimension, Eigen::Index rank) : dimension_(dimension), rank_(rank) { check_rank(); }

  /// Basis given by the columns of `basis`; orthonormality is checked to 1e-12.
  Projector(Matrix basis, Eigen::Index rank) : dimension_(basis.rows()), rank_(rank), basis_(std::move(basis)) {
    if (basis_->cols() != basis_->rows()) throw std::invalid_argument("basis must be square");
    double defect = (basis_->transpose() * *basis_ - Matrix::Identity(dimension_, dimension_)).cwiseAbs().maxCoeff();
    if (defect > 1e-12) throw std::invalid_argument("basis is not orthonormal");
    check_rank();
  }

  Eigen::Index dimension() const { return dimension_; }
  Eigen::Index rank() const { return rank_; }
  bool canonical() const { return !basis_; }

  Vector basis_vector(Eigen::Index k) const {
    return basis_ ? Vector(basis_->col(k)) : Vector(Vector::Unit(dimension_, k));
  }

  /// <x, e_k>
  double coordinate(const Vector& x, Eigen::Index k) const { return basis_ ? basis_->col(k).dot(x) : x[k]; }

  Vector apply(const Vector& x) const {
    if (x.size() != dimension_) throw std::invalid_argument("dimension mismatch");
    if (!basis_) {
      if (rank_ == dimension_) return x;
      Vector out = Vector::Zero(dimension_);
      out.head(rank_) = x.head(rank_);
      return out;
    }
    auto B = basis_->leftCols(rank_);
    return B * (B.transpose() * x);
  }

  Projector with_rank(Eigen::Index rank) const {
    Projector p = *this;
    p.rank_ = rank;
    p.check_rank();
    return p;
  }

 private:
  void check_rank() const {
    if (rank_ < 1 || rank_ > dimension_) throw std::invalid_argument("rank must lie in [1, D]");
  }

  Eigen::Index dimension_;
  Eigen::Index rank_;
  std::optional<Matrix> basis_;
};

inline Vector apply(const Projector& P, const Vector& x) { return P.apply(x); }

/// p_r(x) = x if ||x|| <= r, else r x/||x||.
inline Vector radial_truncate(const Vector& x, double r) {
  if (r < 0.0) throw std::invalid_argument("radius must be nonnegative");
  double n = x.norm();
  if (n <= r) return x;
  return (r / n) * x;
}

struct HausdorffEstimate {
  double lower = 0.0;
  double upper = 0.0;
  std::vector<double> profile;  ///< profile[n] = sup_{x in cloud} ||(I - P_n) x||, n = 0..D
};

/// Gohberg-Goldenstein-Markus sandwich with a = 1 (orthogonal projectors):
/// upper = min_{1<=n<=D} profile(n), lower = upper / a. In finite ambient dimension
/// upper is 0 at n = D; the profile curve is the informative part.
inline HausdorffEstimate hausdorff_estimate(std::span<const Vector> cloud, const Projector& basis) {
  if (cloud.empty()) throw std::invalid_argument("empty cloud");
  const Eigen::Index D = basis.dimension();
  HausdorffEstimate est;
  est.profile.assign(static_cast<std::size_t>(D) + 1, 0.0);
  for (const Vector& x : cloud) {
    if (x.size() != D) throw std::invalid_argument("dimension mismatch");
    // Tail norms sum_{k>n} <x,e_k>^2 accumulated from the back.
    std::vector<double> coords(static_cast<std::size_t>(D));
    for (Eigen::Index k = 0; k < D; ++k) coords[static_cast<std::size_t>(k)] = basis.coordinate(x, k);
    double tail = 0.0;
    for (Eigen::Index n = D; n >= 0; --n) {
      auto un = static_cast<std::size_t>(n);
      est.profile[un] = std::max(est.profile[un], std::sqrt(tail));
      if (n > 0) tail += coords[un - 1] * coords[un - 1];
    }
  }
  constexpr double a = 1.0;
  est.upper = *std::min_element(est.profile.begin() + 1, est.profile.end());
  est.lower = est.upper / a;
  return est;
}

}  // namespace inclusol
