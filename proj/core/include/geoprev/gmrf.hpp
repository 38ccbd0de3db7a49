#pragma once

#include "geoprev/geometry.hpp"

#include <Eigen/Dense>

#include <memory>

namespace geoprev {

/// Sparse Cholesky factorization of a symmetric positive definite precision
/// with approximate-minimum-degree ordering: P Q P^T = L L^T.
class SparseCholesky {
 public:
  /// Throws NumericalError if q is not positive definite.
  explicit SparseCholesky(const SparseMatrix& q);
  ~SparseCholesky();
  SparseCholesky(SparseCholesky&&) noexcept;
  SparseCholesky& operator=(SparseCholesky&&) noexcept;

  Eigen::Index size() const;
  Eigen::VectorXd solve(const Eigen::VectorXd& b) const;
  Eigen::MatrixXd solve(const Eigen::MatrixXd& b) const;
  double log_determinant() const;

  /// Maps a standard normal vector z to a draw from N(0, Q^-1).
  Eigen::VectorXd correlate(const Eigen::VectorXd& z) const;

  /// Diagonal of Q^-1 via the Takahashi recursion on the factor.
  Eigen::VectorXd inverse_diagonal() const;

  /// Q^-1 restricted to the sparsity pattern of L + L^T (Takahashi).
  class SelectedInverse {
   public:
    /// Entry (i, j) of Q^-1 in original ordering; throws if outside the pattern.
    double operator()(Eigen::Index i, Eigen::Index j) const;
    Eigen::VectorXd diagonal() const;

   private:
    friend class SparseCholesky;
    SparseMatrix sigma_;  // lower triangle, permuted ordering, same pattern as L
    Eigen::VectorXi perm_;  // original index -> permuted index
  };
  SelectedInverse selected_inverse() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace geoprev
