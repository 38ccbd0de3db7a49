#include "geoprev/gmrf.hpp"

#include "geoprev/error.hpp"

#include <Eigen/SparseCholesky>

#include <algorithm>
#include <cmath>

namespace geoprev {

struct SparseCholesky::Impl {
  Eigen::SimplicialLLT<SparseMatrix, Eigen::Lower, Eigen::AMDOrdering<int>> llt;
};

SparseCholesky::SparseCholesky(const SparseMatrix& q) : impl_(std::make_unique<Impl>()) {
  impl_->llt.compute(q);
  if (impl_->llt.info() != Eigen::Success) {
    throw NumericalError("sparse Cholesky failed: matrix of size " + std::to_string(q.rows()) +
                         " is not positive definite");
  }
}

SparseCholesky::~SparseCholesky() = default;
SparseCholesky::SparseCholesky(SparseCholesky&&) noexcept = default;
SparseCholesky& SparseCholesky::operator=(SparseCholesky&&) noexcept = default;

Eigen::Index SparseCholesky::size() const { return impl_->llt.rows(); }

Eigen::VectorXd SparseCholesky::solve(const Eigen::VectorXd& b) const { return impl_->llt.solve(b); }

Eigen::MatrixXd SparseCholesky::solve(const Eigen::MatrixXd& b) const { return impl_->llt.solve(b); }

double SparseCholesky::log_determinant() const {
  const auto& l = impl_->llt.matrixL().nestedExpression();
  double s = 0.0;
  for (Eigen::Index k = 0; k < l.outerSize(); ++k) {
    // Diagonal is the first stored entry of each column of the lower factor.
    SparseMatrix::InnerIterator it(l, k);
    s += std::log(it.value());
  }
  return 2.0 * s;
}

Eigen::VectorXd SparseCholesky::correlate(const Eigen::VectorXd& z) const {
  const auto& l = impl_->llt.matrixL().nestedExpression();
  Eigen::VectorXd v = l.transpose().triangularView<Eigen::Upper>().solve(z);
  return impl_->llt.permutationPinv() * v;
}

SparseCholesky::SelectedInverse SparseCholesky::selected_inverse() const {
  const SparseMatrix& l = impl_->llt.matrixL().nestedExpression();
  const Eigen::Index n = l.cols();
  SelectedInverse out;
  out.sigma_ = l;  // same pattern; values overwritten below
  const int* outer = out.sigma_.outerIndexPtr();
  const int* inner = out.sigma_.innerIndexPtr();
  double* sig = out.sigma_.valuePtr();
  const double* lv = l.valuePtr();

  // For column i with off-diagonal rows J and values u = L(J, i):
  //   Sigma(J, i) = -Sigma(J, J) u / L_ii,  Sigma_ii = 1 / L_ii^2 - u . Sigma(J, i) / L_ii.
  // Sigma(J, J) lives in columns > i, already final; it is applied by
  // scanning each column k in J and picking rows that are also in J.
  std::vector<int> pos(static_cast<std::size_t>(n), -1);
  std::vector<double> y;
  for (Eigen::Index i = n - 1; i >= 0; --i) {
    const int begin = outer[i];
    const int end = outer[i + 1];
    const double lii = lv[begin];
    const int m = end - begin - 1;
    for (int a = 0; a < m; ++a) pos[inner[begin + 1 + a]] = a;
    y.assign(static_cast<std::size_t>(m), 0.0);
    for (int a = 0; a < m; ++a) {
      const int k = inner[begin + 1 + a];
      const double ua = lv[begin + 1 + a];
      for (int p = outer[k]; p < outer[k + 1]; ++p) {
        const int b = pos[inner[p]];
        if (b < 0) continue;
        const double v = sig[p];
        y[a] += v * lv[begin + 1 + b];
        if (b != a) y[b] += v * ua;
      }
    }
    double acc = 0.0;
    for (int a = 0; a < m; ++a) {
      sig[begin + 1 + a] = -y[a] / lii;
      acc += lv[begin + 1 + a] * sig[begin + 1 + a];
      pos[inner[begin + 1 + a]] = -1;
    }
    sig[begin] = 1.0 / (lii * lii) - acc / lii;
  }
  out.perm_ = impl_->llt.permutationP().indices();
  return out;
}

Eigen::VectorXd SparseCholesky::inverse_diagonal() const { return selected_inverse().diagonal(); }

double SparseCholesky::SelectedInverse::operator()(Eigen::Index i, Eigen::Index j) const {
  int r = perm_[i];
  int c = perm_[j];
  if (r < c) std::swap(r, c);
  for (SparseMatrix::InnerIterator it(sigma_, c); it; ++it) {
    if (it.row() == r) return it.value();
  }
  throw NumericalError("selected inverse: requested entry is outside the factor pattern");
}

Eigen::VectorXd SparseCholesky::SelectedInverse::diagonal() const {
  const Eigen::Index n = sigma_.cols();
  Eigen::VectorXd d(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    SparseMatrix::InnerIterator it(sigma_, perm_[i]);
    d[i] = it.value();
  }
  return d;
}

}  // namespace geoprev
