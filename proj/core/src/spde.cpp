#include "geoprev/spde.hpp"

#include "geoprev/error.hpp"

#include <Eigen/SparseCholesky>

#include <cmath>
#include <iomanip>
#include <ostream>
#include <sstream>

namespace geoprev {

double SpdeTheta::tau() const { return std::exp(log_tau); }
double SpdeTheta::kappa() const { return std::exp(log_kappa); }

double matern_corr(double distance, double kappa, double nu) {
  if (distance < 0.0) throw std::invalid_argument("matern_corr: negative distance");
  const double r = kappa * distance;
  if (r == 0.0) return 1.0;
  // K_nu underflows long before the correlation is representable.
  if (r > 700.0) return 0.0;
  return std::pow(r, nu) * std::cyl_bessel_k(nu, r) / (std::pow(2.0, nu - 1.0) * std::tgamma(nu));
}

double matern_cov(double distance, const MaternParams& params) {
  return params.sigma2 * matern_corr(distance, params.kappa, params.nu);
}

double tau_from_sigma(double sigma2, double kappa, double nu) {
  const double alpha = nu + 1.0;
  const double tau2 =
      std::tgamma(nu) / (std::tgamma(alpha) * 4.0 * M_PI * std::pow(kappa, 2.0 * nu) * sigma2);
  return std::sqrt(tau2);
}

double sigma_from_tau(double tau, double kappa, double nu) {
  const double alpha = nu + 1.0;
  return std::tgamma(nu) / (std::tgamma(alpha) * 4.0 * M_PI * std::pow(kappa, 2.0 * nu) * tau * tau);
}

double practical_range(double kappa, double nu) { return std::sqrt(8.0 * nu) / kappa; }

SpdeTheta to_theta(const MaternParams& params) {
  return {std::log(tau_from_sigma(params.sigma2, params.kappa, params.nu)), std::log(params.kappa)};
}

MaternParams from_theta(const SpdeTheta& theta, double nu) {
  return {sigma_from_tau(theta.tau(), theta.kappa(), nu), theta.kappa(), nu};
}

SparseMatrix assemble_precision(const FemMatrices& fem, const SpdeTheta& theta) {
  const Eigen::Index n = fem.c.rows();
  if (fem.g.rows() != n || fem.g.cols() != n) throw std::invalid_argument("assemble_precision: C/G size mismatch");
  Eigen::VectorXd c_inv(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double c = fem.c.coeff(i, i);
    if (!(c > 0.0)) throw NumericalError("assemble_precision: non-positive lumped mass at vertex " + std::to_string(i));
    c_inv[i] = 1.0 / c;
  }
  const double k2 = std::exp(2.0 * theta.log_kappa);
  const double tau2 = std::exp(2.0 * theta.log_tau);
  const SparseMatrix gcg = fem.g * c_inv.asDiagonal() * fem.g;
  SparseMatrix q = tau2 * (k2 * k2 * fem.c + 2.0 * k2 * fem.g + gcg);
  // G C^-1 G is symmetric in exact arithmetic; symmetrize away the rounding.
  q = 0.5 * (q + SparseMatrix(q.transpose()));
  q.makeCompressed();
  return q;
}

void check_positive_definite(const SparseMatrix& q) {
  Eigen::SimplicialLLT<SparseMatrix, Eigen::Lower, Eigen::AMDOrdering<int>> llt(q);
  if (llt.info() == Eigen::Success) return;
  // Gershgorin lower bound as a cheap smallest-eigenvalue estimate.
  double lower = std::numeric_limits<double>::infinity();
  for (Eigen::Index k = 0; k < q.outerSize(); ++k) {
    double diag = 0.0, off = 0.0;
    for (SparseMatrix::InnerIterator it(q, k); it; ++it) {
      if (it.row() == k) diag = it.value();
      else off += std::abs(it.value());
    }
    lower = std::min(lower, diag - off);
  }
  std::ostringstream msg;
  msg << "precision matrix is not positive definite (Gershgorin smallest-eigenvalue bound " << lower << ")";
  throw NumericalError(msg.str());
}

void write_matrix_market(std::ostream& out, const SparseMatrix& q) {
  std::size_t nnz = 0;
  for (Eigen::Index k = 0; k < q.outerSize(); ++k) {
    for (SparseMatrix::InnerIterator it(q, k); it; ++it) nnz += it.row() >= it.col();
  }
  out << "%%MatrixMarket matrix coordinate real symmetric\n";
  out << q.rows() << ' ' << q.cols() << ' ' << nnz << '\n';
  out << std::setprecision(17);
  for (Eigen::Index k = 0; k < q.outerSize(); ++k) {
    for (SparseMatrix::InnerIterator it(q, k); it; ++it) {
      if (it.row() >= it.col()) out << it.row() + 1 << ' ' << it.col() + 1 << ' ' << it.value() << '\n';
    }
  }
}

}  // namespace geoprev
