#pragma once

#include "geoprev/areal.hpp"

#include "oracles.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <set>
#include <vector>

namespace geoprev::oracle {

struct DenseModel {
  Eigen::MatrixXd a;  // design
  Eigen::MatrixXd q;  // prior precision
  Eigen::VectorXd y;
  Eigen::VectorXd v;  // gaussian variances
};

struct DensePosterior {
  Eigen::VectorXd mean;
  Eigen::VectorXd sd;
  Eigen::MatrixXd cov;
  double log_evidence = 0.0;
};

/// Conjugate posterior of x ~ N(0, Q^-1) restricted to the orthogonal
/// complement of `constraints`, y | x ~ N(A x, diag v).
inline DensePosterior dense_posterior(const DenseModel& m, const Eigen::MatrixXd& constraints = {}) {
  const Eigen::Index d = m.q.rows();
  Eigen::MatrixXd u = Eigen::MatrixXd::Identity(d, d);
  if (constraints.rows() > 0) {
    const Eigen::JacobiSVD<Eigen::MatrixXd> svd(constraints, Eigen::ComputeFullV);
    u = svd.matrixV().rightCols(d - constraints.rows());
  }
  const Eigen::MatrixXd vinv = m.v.cwiseInverse().asDiagonal();
  const Eigen::MatrixXd h = u.transpose() * (m.q + m.a.transpose() * vinv * m.a) * u;
  const Eigen::MatrixXd hinv = h.inverse();
  DensePosterior p;
  p.mean = u * hinv * u.transpose() * m.a.transpose() * vinv * m.y;
  p.cov = u * hinv * u.transpose();
  p.sd = p.cov.diagonal().cwiseSqrt();
  const Eigen::MatrixXd prior_cov = u * (u.transpose() * m.q * u).inverse() * u.transpose();
  const Eigen::MatrixXd marg = m.a * prior_cov * m.a.transpose() + Eigen::MatrixXd(m.v.asDiagonal());
  p.log_evidence = gaussian_log_density(m.y, Eigen::VectorXd::Zero(m.y.size()), marg);
  return p;
}

inline double log_pdet(const Eigen::MatrixXd& r) {
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(r);
  double s = 0.0;
  for (Eigen::Index i = 0; i < r.rows(); ++i) {
    if (es.eigenvalues()[i] > 1e-9) s += std::log(es.eigenvalues()[i]);
  }
  return s;
}

/// Dense posterior of eta = beta0 + S + eps at fixed precisions, S restricted
/// to sum to zero on each connected component of non-singleton areas.
inline void dense_bym(const AdjacencyGraph& g, const Eigen::VectorXd& y, const Eigen::VectorXd& v, double tau_s, double tau_e,
               Eigen::VectorXd* mean, Eigen::VectorXd* sd) {
  const int k = static_cast<int>(g.size());
  std::vector<int> pos(static_cast<std::size_t>(k), -1);
  int ns = 0;
  for (int i = 0; i < k; ++i) {
    if (!g.neighbors[static_cast<std::size_t>(i)].empty()) pos[static_cast<std::size_t>(i)] = ns++;
  }
  const int d = 1 + ns + k;
  Eigen::MatrixXd q = Eigen::MatrixXd::Zero(d, d), a = Eigen::MatrixXd::Zero(k, d);
  q(0, 0) = 0.001;
  for (int i = 0; i < k; ++i) {
    const int pi = pos[static_cast<std::size_t>(i)];
    a(i, 0) = 1;
    a(i, 1 + ns + i) = 1;
    q(1 + ns + i, 1 + ns + i) = tau_e;
    if (pi < 0) continue;
    a(i, 1 + pi) = 1;
    for (int j : g.neighbors[static_cast<std::size_t>(i)]) {
      q(1 + pi, 1 + pi) += tau_s;
      q(1 + pi, 1 + pos[static_cast<std::size_t>(j)]) -= tau_s;
    }
  }
  std::set<int> comps;
  for (int i = 0; i < k; ++i) {
    if (pos[static_cast<std::size_t>(i)] >= 0) comps.insert(g.component[static_cast<std::size_t>(i)]);
  }
  Eigen::MatrixXd c = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(comps.size()), d);
  int r = 0;
  for (int comp : comps) {
    for (int i = 0; i < k; ++i) {
      if (pos[static_cast<std::size_t>(i)] >= 0 && g.component[static_cast<std::size_t>(i)] == comp) {
        c(r, 1 + pos[static_cast<std::size_t>(i)]) = 1;
      }
    }
    ++r;
  }
  Eigen::MatrixXd u = Eigen::MatrixXd::Identity(d, d);
  if (c.rows() > 0) {
    const Eigen::JacobiSVD<Eigen::MatrixXd> svd(c, Eigen::ComputeFullV);
    u = svd.matrixV().rightCols(d - c.rows());
  }
  const Eigen::MatrixXd vinv = v.cwiseInverse().asDiagonal();
  const Eigen::MatrixXd h = u.transpose() * (q + a.transpose() * vinv * a) * u;
  const Eigen::MatrixXd cov = u * h.inverse() * u.transpose();
  *mean = a * cov * a.transpose() * vinv * y;
  *sd = (a * cov * a.transpose()).diagonal().cwiseSqrt();
}

}  // namespace geoprev::oracle
