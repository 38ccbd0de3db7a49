#pragma once

#include "geoprev/geometry.hpp"

#include <iosfwd>

namespace geoprev {

/// Matérn field parameters. Precision assembly supports nu = 1 (alpha = 2) only.
struct MaternParams {
  double sigma2 = 1.0;  // marginal variance
  double kappa = 1.0;   // scale
  double nu = 1.0;      // smoothness

  double alpha() const { return nu + 1.0; }
};

/// Internal SPDE parameterization: theta1 = log tau, theta2 = log kappa.
struct SpdeTheta {
  double log_tau = 0.0;
  double log_kappa = 0.0;

  double tau() const;
  double kappa() const;
};

double matern_cov(double distance, const MaternParams& params);
double matern_corr(double distance, double kappa, double nu);

/// tau^2 = Gamma(nu) / (Gamma(nu + 1) * 4 pi * kappa^(2 nu) * sigma2).
double tau_from_sigma(double sigma2, double kappa, double nu);
double sigma_from_tau(double tau, double kappa, double nu);

/// Distance sqrt(8 nu) / kappa at which the correlation is about 0.13.
double practical_range(double kappa, double nu);

SpdeTheta to_theta(const MaternParams& params);
MaternParams from_theta(const SpdeTheta& theta, double nu = 1.0);

/// Q = tau^2 (kappa^4 C + 2 kappa^2 G + G C^-1 G) for alpha = 2 with lumped C.
SparseMatrix assemble_precision(const FemMatrices& fem, const SpdeTheta& theta);

/// Throws NumericalError (with a smallest-eigenvalue estimate) unless Q has a
/// Cholesky factorization.
void check_positive_definite(const SparseMatrix& q);

/// Writes the lower triangle in MatrixMarket coordinate symmetric format.
void write_matrix_market(std::ostream& out, const SparseMatrix& q);

}  // namespace geoprev
