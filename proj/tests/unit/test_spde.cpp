#include "geoprev/error.hpp"
#include "geoprev/gmrf.hpp"
#include "geoprev/spde.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

#include <numbers>
#include <sstream>

using namespace geoprev;

TEST(Matern, DesignConstants) {
  EXPECT_NEAR(practical_range(std::exp(0.5), 1.0), 1.7155, 1e-3);
  EXPECT_NEAR(practical_range(std::exp(0.5), 1.0), std::sqrt(8.0) * std::exp(-0.5), 1e-12);
  EXPECT_NEAR(sigma_from_tau(std::exp(-0.5), std::exp(0.5), 1.0), 0.0796, 1e-3);
  EXPECT_NEAR(sigma_from_tau(std::exp(-0.5), std::exp(0.5), 1.0), 1.0 / (4.0 * std::numbers::pi), 1e-12);
}

TEST(Matern, TauSigmaRoundTrip) {
  for (double nu : {0.5, 1.0, 1.5}) {
    for (double kappa : {0.3, 1.0, 4.0}) {
      for (double s2 : {0.01, 1.0, 7.0}) {
        const double tau = tau_from_sigma(s2, kappa, nu);
        EXPECT_NEAR(sigma_from_tau(tau, kappa, nu), s2, 1e-12 * s2);
      }
    }
  }
  const MaternParams p{0.3, 2.0, 1.0};
  const MaternParams q = from_theta(to_theta(p));
  EXPECT_NEAR(q.sigma2, p.sigma2, 1e-12);
  EXPECT_NEAR(q.kappa, p.kappa, 1e-12);
}

TEST(Matern, CovarianceMatchesBesselIntegralOracle) {
  const MaternParams p{0.7, 1.3, 1.0};
  EXPECT_DOUBLE_EQ(matern_cov(0.0, p), 0.7);
  for (double d : {0.05, 0.3, 1.0, 2.0, 4.0}) {
    EXPECT_NEAR(matern_cov(d, p), oracle::matern1_cov(d, 0.7, 1.3), 1e-7) << d;
  }
  // Exponential covariance at nu = 1/2.
  EXPECT_NEAR(matern_corr(0.8, 1.5, 0.5), std::exp(-1.2), 1e-12);
  // About 0.13-0.14 at the practical range.
  const double c = matern_corr(practical_range(1.3, 1.0), 1.3, 1.0);
  EXPECT_GT(c, 0.12);
  EXPECT_LT(c, 0.15);
}

TEST(Matern, CorrelationDecreasesWithDistance) {
  double prev = 1.0;
  for (double d = 0.01; d < 10; d *= 1.3) {
    const double c = matern_corr(d, 0.9, 1.0);
    EXPECT_LT(c, prev);
    EXPECT_GT(c, 0.0);
    prev = c;
  }
}

class Precision : public ::testing::Test {
 protected:
  void SetUp() override {
    MeshOptions o;
    o.interior_max_edge = 0.4;
    mesh = build_mesh(oracle::rectangle(0, 0, 3, 3), o);
    fem = fem_matrices(mesh);
  }
  TriMesh mesh;
  FemMatrices fem;
};

TEST_F(Precision, MatchesDenseAssembly) {
  const SpdeTheta th{0.3, -0.2};
  const SparseMatrix q = assemble_precision(fem, th);
  const Eigen::MatrixXd c = oracle::dense(fem.c), g = oracle::dense(fem.g);
  const double k2 = std::exp(2 * th.log_kappa), t2 = std::exp(2 * th.log_tau);
  const Eigen::MatrixXd expect = t2 * (k2 * k2 * c + 2 * k2 * g + g * c.inverse() * g);
  EXPECT_LT((oracle::dense(q) - expect).cwiseAbs().maxCoeff(), 1e-10 * expect.cwiseAbs().maxCoeff());
  EXPECT_TRUE(is_symmetric(q));
  EXPECT_NO_THROW(check_positive_definite(q));
}

TEST_F(Precision, ScalesWithTauSquared) {
  const SparseMatrix a = assemble_precision(fem, {0.0, 0.1});
  const SparseMatrix b = assemble_precision(fem, {std::log(3.0), 0.1});
  EXPECT_LT((oracle::dense(b) - 9.0 * oracle::dense(a)).cwiseAbs().maxCoeff(), 1e-9);
}

TEST_F(Precision, InteriorVarianceApproachesMaternVariance) {
  const MaternParams p{1.0, 3.0, 1.0};
  const SparseCholesky chol(assemble_precision(fem, to_theta(p)));
  const Eigen::VectorXd v = chol.inverse_diagonal();
  double sum = 0.0;
  int n = 0;
  for (std::size_t i = 0; i < mesh.num_vertices(); ++i) {
    const Point2 q = mesh.vertices[i];
    if (q.x > 1 && q.x < 2 && q.y > 1 && q.y < 2) {
      sum += v[static_cast<Eigen::Index>(i)];
      ++n;
    }
  }
  ASSERT_GT(n, 0);
  EXPECT_NEAR(sum / n, 1.0, 0.25);
}

TEST(PrecisionErrors, NonPositiveDefiniteIsNumericalError) {
  SparseMatrix q(2, 2);
  q.insert(0, 0) = 1.0;
  q.insert(0, 1) = 2.0;
  q.insert(1, 0) = 2.0;
  q.insert(1, 1) = 1.0;
  EXPECT_THROW(check_positive_definite(q), NumericalError);
}

TEST(PrecisionIo, MatrixMarketWritesLowerTriangle) {
  SparseMatrix q(3, 3);
  q.insert(0, 0) = 2.0;
  q.insert(1, 0) = -1.0;
  q.insert(0, 1) = -1.0;
  q.insert(1, 1) = 2.0;
  q.insert(2, 2) = 1.5;
  std::ostringstream out;
  write_matrix_market(out, q);
  std::istringstream in(out.str());
  std::string header;
  std::getline(in, header);
  EXPECT_NE(header.find("symmetric"), std::string::npos);
  std::string line;
  do {
    std::getline(in, line);
  } while (!line.empty() && line[0] == '%');
  int r, c, nnz;
  std::istringstream(line) >> r >> c >> nnz;
  EXPECT_EQ(r, 3);
  EXPECT_EQ(c, 3);
  EXPECT_EQ(nnz, 4);
  int i, j;
  double v;
  while (in >> i >> j >> v) EXPECT_GE(i, j);
}
