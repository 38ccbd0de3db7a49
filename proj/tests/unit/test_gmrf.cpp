#include "geoprev/error.hpp"
#include "geoprev/gmrf.hpp"
#include "geoprev/spde.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace geoprev;

namespace {

SparseMatrix random_spd(int n, double density, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1, 1), coin(0, 1);
  std::vector<Eigen::Triplet<double>> t;
  Eigen::VectorXd rowsum = Eigen::VectorXd::Zero(n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < i; ++j) {
      if (coin(rng) < density) {
        const double v = u(rng);
        t.emplace_back(i, j, v);
        t.emplace_back(j, i, v);
        rowsum[i] += std::abs(v);
        rowsum[j] += std::abs(v);
      }
    }
  }
  for (int i = 0; i < n; ++i) t.emplace_back(i, i, rowsum[i] + 0.5);
  SparseMatrix q(n, n);
  q.setFromTriplets(t.begin(), t.end());
  return q;
}

}  // namespace

class CholeskyOracle : public ::testing::TestWithParam<unsigned> {};

TEST_P(CholeskyOracle, SolveDeterminantAndInverseMatchDense) {
  const SparseMatrix q = random_spd(60, 0.08, GetParam());
  const Eigen::MatrixXd d = oracle::dense(q);
  const SparseCholesky chol(q);
  ASSERT_EQ(chol.size(), 60);
  const Eigen::MatrixXd inv = d.inverse();

  const Eigen::VectorXd b = Eigen::VectorXd::LinSpaced(60, -1, 2);
  EXPECT_LT((chol.solve(b) - inv * b).cwiseAbs().maxCoeff(), 1e-10);
  const Eigen::MatrixXd bm = Eigen::MatrixXd::Identity(60, 3);
  EXPECT_LT((chol.solve(bm) - inv.leftCols(3)).cwiseAbs().maxCoeff(), 1e-10);

  EXPECT_NEAR(chol.log_determinant(), std::log(d.determinant()), 1e-8);
  EXPECT_LT((chol.inverse_diagonal() - inv.diagonal()).cwiseAbs().maxCoeff(), 1e-10);

  const auto sel = chol.selected_inverse();
  EXPECT_LT((sel.diagonal() - inv.diagonal()).cwiseAbs().maxCoeff(), 1e-10);
  for (int k = 0; k < q.outerSize(); ++k) {
    for (SparseMatrix::InnerIterator it(q, k); it; ++it) {
      EXPECT_NEAR(sel(it.row(), it.col()), inv(it.row(), it.col()), 1e-10);
    }
  }
}

TEST_P(CholeskyOracle, CorrelateHasTargetCovariance) {
  const SparseMatrix q = random_spd(30, 0.15, GetParam());
  const SparseCholesky chol(q);
  Eigen::MatrixXd m(30, 30);
  for (int i = 0; i < 30; ++i) m.col(i) = chol.correlate(Eigen::VectorXd::Unit(30, i));
  EXPECT_LT((m * m.transpose() - oracle::dense(q).inverse()).cwiseAbs().maxCoeff(), 1e-10);
}

INSTANTIATE_TEST_SUITE_P(RandomSparse, CholeskyOracle, ::testing::Values(1u, 2u, 3u, 4u, 5u));

TEST(Cholesky, SpdePrecisionSelectedInverse) {
  MeshOptions o;
  o.interior_max_edge = 0.5;
  const TriMesh mesh = build_mesh(oracle::rectangle(0, 0, 3, 2), o);
  const SparseMatrix q = assemble_precision(fem_matrices(mesh), {0.0, 0.5});
  const SparseCholesky chol(q);
  const Eigen::MatrixXd inv = oracle::dense(q).inverse();
  EXPECT_LT((chol.inverse_diagonal() - inv.diagonal()).cwiseAbs().maxCoeff(), 1e-9 * inv.diagonal().maxCoeff());
}

TEST(Cholesky, RejectsIndefiniteMatrix) {
  SparseMatrix q(3, 3);
  q.insert(0, 0) = 1;
  q.insert(1, 1) = -1;
  q.insert(2, 2) = 1;
  EXPECT_THROW(SparseCholesky{q}, NumericalError);
}

TEST(Cholesky, SelectedInverseOutsidePatternThrows) {
  SparseMatrix q(3, 3);
  q.insert(0, 0) = 2;
  q.insert(1, 1) = 2;
  q.insert(2, 2) = 2;
  const SparseCholesky chol(q);
  const auto sel = chol.selected_inverse();
  EXPECT_DOUBLE_EQ(sel(1, 1), 0.5);
  EXPECT_THROW(sel(0, 2), std::exception);
}

TEST(Cholesky, MoveLeavesUsableFactor) {
  const SparseMatrix q = random_spd(10, 0.3, 9);
  SparseCholesky a(q);
  SparseCholesky b(std::move(a));
  EXPECT_EQ(b.size(), 10);
  EXPECT_NEAR(b.log_determinant(), std::log(oracle::dense(q).determinant()), 1e-9);
}
