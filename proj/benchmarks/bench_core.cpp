#include "geoprev/functionals.hpp"
#include "geoprev/gmrf.hpp"
#include "geoprev/inference.hpp"
#include "geoprev/simulate.hpp"
#include "geoprev/spde.hpp"
#include "geoprev/synthetic.hpp"

#include <benchmark/benchmark.h>

#include <cmath>
#include <memory>
#include <random>

using namespace geoprev;

namespace {

TriMesh country_mesh(double edge) {
  MeshOptions o;
  o.interior_max_edge = edge;
  return build_mesh(synthetic_country_boundary(), o);
}

SparseMatrix country_precision(double edge) {
  static const TriMesh mesh = country_mesh(edge);
  return assemble_precision(fem_matrices(mesh), to_theta({1.0, std::exp(0.5), 1.0}));
}

void BM_BuildMesh(benchmark::State& state) {
  const double edge = 1.0 / static_cast<double>(state.range(0));
  std::size_t n = 0;
  for (auto _ : state) {
    const TriMesh mesh = country_mesh(edge);
    n = mesh.num_vertices();
    benchmark::DoNotOptimize(n);
  }
  state.counters["vertices"] = static_cast<double>(n);
}
BENCHMARK(BM_BuildMesh)->Arg(2)->Arg(4)->Arg(8)->Unit(benchmark::kMillisecond);

void BM_Factorize(benchmark::State& state) {
  const SparseMatrix q = country_precision(0.25);
  for (auto _ : state) {
    const SparseCholesky chol(q);
    benchmark::DoNotOptimize(chol.log_determinant());
  }
  state.counters["dim"] = static_cast<double>(q.rows());
}
BENCHMARK(BM_Factorize)->Unit(benchmark::kMillisecond);

void BM_SelectedInverse(benchmark::State& state) {
  const SparseCholesky chol(country_precision(0.25));
  for (auto _ : state) {
    const Eigen::VectorXd d = chol.inverse_diagonal();
    benchmark::DoNotOptimize(d.data());
  }
}
BENCHMARK(BM_SelectedInverse)->Unit(benchmark::kMillisecond);

void BM_GaussianApprox(benchmark::State& state) {
  const SimConfig sim;
  const Polygon boundary = synthetic_country_boundary();
  const SimOutput data = simulate_survey(sim, boundary, voronoi_areas(boundary, 47, 2003));
  const TriMesh mesh = country_mesh(0.25);
  auto fem = std::make_shared<const FemMatrices>(fem_matrices(mesh));
  std::vector<Point2> locs;
  std::vector<double> y, n;
  for (const auto& c : data.frame.clusters) {
    for (const auto& h : c.households) {
      if (!(h.trials > 0.0)) continue;
      locs.push_back(c.location);
      y.push_back(h.positives);
      n.push_back(h.trials);
    }
  }
  const auto len = static_cast<Eigen::Index>(y.size());
  const Eigen::Map<Eigen::VectorXd> positives(y.data(), len), trials(n.data(), len);
  LatentModelBuilder b(ObservationStage::binomial(positives, trials));
  b.add_intercept()
      .add_spde("field", fem, project(mesh, locs), to_theta({1.0, std::exp(0.5), 1.0}))
      .add_nugget("nugget", std::log(100.0));
  const LatentModel model = b.build();
  for (auto _ : state) {
    const GaussianApprox g = gaussian_approx(model, model.theta_prior_mean);
    benchmark::DoNotOptimize(g.log_evidence);
  }
  state.counters["latent_dim"] = static_cast<double>(model.latent_dim);
}
BENCHMARK(BM_GaussianApprox)->Unit(benchmark::kMillisecond);

void BM_Excursions(benchmark::State& state) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> z;
  const auto points = static_cast<Eigen::Index>(state.range(0));
  Eigen::MatrixXd eta(1000, points);
  for (Eigen::Index i = 0; i < eta.rows(); ++i) {
    const double common = z(rng);
    for (Eigen::Index j = 0; j < points; ++j) eta(i, j) = -2.6 + 0.5 * (0.8 * common + 0.6 * z(rng));
  }
  for (auto _ : state) {
    const ExcursionResult r = simultaneous_excursions(eta, 0.07, 0.05);
    benchmark::DoNotOptimize(r.joint_above);
  }
}
BENCHMARK(BM_Excursions)->Arg(500)->Arg(2000)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
