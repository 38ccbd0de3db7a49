// Acceptance runner: one PASS/FAIL line per criterion.
//   geoprev_acceptance        run all criteria
//   geoprev_acceptance N      run criterion N only

#include "config.hpp"
#include "pipeline.hpp"

#include "geoprev/areal.hpp"
#include "geoprev/functionals.hpp"
#include "geoprev/gmrf.hpp"
#include "geoprev/inference.hpp"
#include "geoprev/parallel.hpp"
#include "geoprev/simulate.hpp"
#include "geoprev/spde.hpp"
#include "geoprev/survey.hpp"

#include "dense_oracles.hpp"

#include <spdlog/spdlog.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

using namespace geoprev;
namespace fs = std::filesystem;
namespace gp = geoprev::pipeline;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + std::string("failed: ") + what;
    }
  }
  void note(const std::string& what) { detail += (detail.empty() ? "" : "; ") + what; }
};

std::string format(const char* f, auto... args) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

class Stopwatch {
 public:
  double seconds() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count(); }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

// ---------------------------------------------------------------- criterion 1

struct CorrelationCheck {
  double max_error = 0.0;
  double seconds = 0.0;
  std::size_t vertices = 0;
};

/// Max |corr_SPDE(c, c + d e) - matern_corr(d)| over d in [0.3, 5] along four
/// directions from the centre of [0,10]^2.
CorrelationCheck spde_correlation_error(double edge) {
  const Stopwatch clock;
  MeshOptions o;
  o.interior_max_edge = edge;
  o.extension_factor = 1.3;
  o.exterior_max_edge = 1.0;
  const TriMesh mesh = build_mesh(oracle::rectangle(0, 0, 10, 10), o);
  const FemMatrices fem = fem_matrices(mesh);
  const double kappa = std::exp(0.5);
  const SparseCholesky chol(assemble_precision(fem, to_theta({1.0, kappa, 1.0})));

  const Point2 c{5.0, 5.0};
  std::vector<Point2> pts{c};
  std::vector<double> dist{0.0};
  for (int k = 0; k < 4; ++k) {
    const double a = k * std::numbers::pi / 4.0 + 0.1;
    for (int i = 0; i <= 47; ++i) {
      const double d = 0.3 + 0.1 * i;
      pts.push_back({c.x + d * std::cos(a), c.y + d * std::sin(a)});
      dist.push_back(d);
    }
  }
  const Projector p = project(mesh, pts);
  const SparseMatrix at = SparseMatrix(p.weights.transpose());
  const Eigen::MatrixXd x = chol.solve(Eigen::MatrixXd(at));
  const Eigen::MatrixXd cov = Eigen::MatrixXd(at.transpose()) * x;

  CorrelationCheck r;
  r.vertices = mesh.num_vertices();
  for (std::size_t j = 1; j < pts.size(); ++j) {
    const auto jj = static_cast<Eigen::Index>(j);
    const double corr = cov(0, jj) / std::sqrt(cov(0, 0) * cov(jj, jj));
    r.max_error = std::max(r.max_error, std::abs(corr - matern_corr(dist[j], kappa, 1.0)));
  }
  r.seconds = clock.seconds();
  return r;
}

Outcome criterion1() {
  Outcome out;
  const CorrelationCheck coarse = spde_correlation_error(0.3);
  const CorrelationCheck fine = spde_correlation_error(0.15);
  const CorrelationCheck finer = spde_correlation_error(0.075);
  out.note(format("max error %.4f (edge 0.3, %zu vertices), %.4f (edge 0.15, %zu vertices, %.1f s), %.4f (edge 0.075)",
               coarse.max_error, coarse.vertices, fine.max_error, fine.vertices, fine.seconds, finer.max_error));
  out.require(fine.max_error < 0.05, "max error < 0.05 at edge 0.15");
  out.require(fine.max_error < coarse.max_error, "error decreases from edge 0.3 to 0.15");
  out.require(finer.max_error < fine.max_error, "error decreases from edge 0.15 to 0.075");
  out.require(fine.seconds < 60.0, "runtime < 60 s at edge 0.15");
  return out;
}

// ---------------------------------------------------------------- criterion 2

Outcome criterion2() {
  Outcome out;
  const double range = practical_range(std::exp(0.5), 1.0);
  const double sigma2 = sigma_from_tau(std::exp(-0.5), std::exp(0.5), 1.0);
  out.note(format("practical range %.6f, marginal variance %.6f", range, sigma2));
  out.require(std::abs(range - 1.7155) < 1e-3, "practical range 1.7155");
  out.require(std::abs(sigma2 - 1.0 / (4.0 * std::numbers::pi)) < 1e-3, "marginal variance 1/(4 pi)");
  out.require(std::abs(sigma2 - 0.0796) < 1e-3, "marginal variance 0.0796");
  return out;
}

// ---------------------------------------------------------------- criterion 3

Outcome criterion3() {
  Outcome out;
  const Stopwatch clock;
  MeshOptions o;
  o.interior_max_edge = 0.8;
  o.extension_factor = 1.2;
  o.exterior_max_edge = 1.2;
  const TriMesh mesh = build_mesh(oracle::rectangle(0, 0, 3, 3), o);
  auto fem = std::make_shared<const FemMatrices>(fem_matrices(mesh));
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(0, 3);
  std::normal_distribution<double> z;
  const int n = 150;
  std::vector<Point2> pts(n);
  Eigen::VectorXd y(n), v(n);
  for (int i = 0; i < n; ++i) {
    pts[static_cast<std::size_t>(i)] = {u(rng), u(rng)};
    y[i] = -1.0 + std::sin(pts[static_cast<std::size_t>(i)].x) * std::cos(pts[static_cast<std::size_t>(i)].y) +
           0.3 * z(rng);
    v[i] = 0.05 + 0.1 * (i % 4);
  }
  LatentModelBuilder b(ObservationStage::gaussian(y, v));
  b.add_intercept().add_spde("field", fem, project(mesh, pts), {0.0, 0.3});
  auto model = std::make_shared<const LatentModel>(b.build());
  const Eigen::Index d = model->latent_dim;

  auto dense_at = [&](const Eigen::VectorXd& theta) {
    oracle::DenseModel dm{oracle::dense(model->design), Eigen::MatrixXd::Zero(d, d), y, v};
    dm.q(0, 0) = 0.001;
    dm.q.bottomRightCorner(d - 1, d - 1) = oracle::dense(assemble_precision(*fem, {theta[0], theta[1]}));
    return oracle::dense_posterior(dm);
  };

  // Fixed theta: mode, marginal sds, evidence.
  Eigen::VectorXd theta(2);
  theta << -0.4, 0.5;
  const GaussianApprox g = gaussian_approx(*model, theta);
  const oracle::DensePosterior p = dense_at(theta);
  const double err_mean = (g.mode - p.mean).cwiseAbs().maxCoeff();
  const double err_sd = (g.marginal_sd - p.sd).cwiseAbs().maxCoeff();
  const double err_ev = std::abs(g.log_evidence - p.log_evidence);

  // Hyperparameter grid: mixture moments against dense mixtures with weights
  // from the dense evidence.
  FitOptions fo;
  fo.center = CenterStrategy::kFixed;
  fo.grid.offsets = {-0.5, 0.0, 0.5};
  fo.grid.quadrature = {1.0, 1.0, 1.0};
  fo.threads = 1;
  const FitResult fit = geoprev::fit(model, theta, fo);
  std::vector<double> logw;
  std::vector<oracle::DensePosterior> comps;
  for (const auto& pt : fit.points) {
    comps.push_back(dense_at(pt.theta));
    logw.push_back(comps.back().log_evidence + model->log_hyperprior(pt.theta));
  }
  const double mx = *std::max_element(logw.begin(), logw.end());
  double wsum = 0.0;
  for (double& w : logw) {
    w = std::exp(w - mx);
    wsum += w;
  }
  double err_w = 0.0;
  Eigen::VectorXd m1 = Eigen::VectorXd::Zero(d), m2 = Eigen::VectorXd::Zero(d);
  for (std::size_t k = 0; k < comps.size(); ++k) {
    const double w = logw[k] / wsum;
    err_w = std::max(err_w, std::abs(w - fit.points[k].weight));
    m1 += w * comps[k].mean;
    m2 += w * (comps[k].sd.array().square() + comps[k].mean.array().square()).matrix();
  }
  double err_mix_mean = 0.0, err_mix_sd = 0.0;
  for (Eigen::Index i = 0; i < d; ++i) {
    err_mix_mean = std::max(err_mix_mean, std::abs(fit.latent[static_cast<std::size_t>(i)].mean - m1[i]));
    err_mix_sd = std::max(err_mix_sd,
                          std::abs(fit.latent[static_cast<std::size_t>(i)].sd - std::sqrt(m2[i] - m1[i] * m1[i])));
  }
  const double secs = clock.seconds();
  out.note(format("%zu mesh nodes, %d observations; fixed theta errors mean %.2e sd %.2e evidence %.2e; "
               "grid errors weight %.2e mean %.2e sd %.2e; %.2f s",
               mesh.num_vertices(), n, err_mean, err_sd, err_ev, err_w, err_mix_mean, err_mix_sd, secs));
  out.require(err_mean < 1e-6 && err_sd < 1e-6 && err_ev < 1e-6, "fixed-theta agreement to 1e-6");
  out.require(err_w < 1e-6 && err_mix_mean < 1e-6 && err_mix_sd < 1e-6, "grid mixture agreement to 1e-6");
  out.require(secs < 5.0, "runtime < 5 s");
  return out;
}

// ------------------------------------------------------ simulated replicates

struct Replicate {
  SimOutput sim;
  gp::Geography geo;
  gp::SpdeSetup setup;
  FitResult fit;
  FieldLayout layout;
  double seconds = 0.0;
};

gp::PipelineConfig replicate_config(std::uint64_t seed) {
  gp::PipelineConfig c;
  c.seed = seed;
  c.sim.seed = seed;
  c.threads = 1;
  return c;
}

Replicate run_replicate(const gp::PipelineConfig& config) {
  const Stopwatch clock;
  Replicate r;
  r.geo = gp::load_geography(config);
  r.sim = simulate_survey(config.sim, r.geo.boundary, r.geo.areas);
  r.setup = gp::build_spde_model(r.sim.frame, r.geo.boundary, config.model);
  r.fit = geoprev::fit(r.setup.model, r.setup.model->theta_prior_mean, gp::fit_options(config));
  r.layout = FieldLayout::from_model(*r.setup.model);
  r.seconds = clock.seconds();
  return r;
}

// ---------------------------------------------------------------- criterion 4

Outcome criterion4() {
  Outcome out;
  const double beta0 = std::log(0.07 / 0.93);
  int covered = 0;
  double min_r = 1.0, max_secs = 0.0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const Replicate rep = run_replicate(replicate_config(seed));
    const auto& b = rep.fit.latent[static_cast<std::size_t>(rep.layout.intercept)];
    const bool cov = b.q025 <= beta0 && beta0 <= b.q975;
    covered += cov;

    std::vector<Point2> locs;
    for (const auto& c : rep.sim.frame.clusters) locs.push_back(c.location);
    const Projector a = project(rep.setup.mesh, locs);
    std::vector<Eigen::Triplet<double>> t;
    for (Eigen::Index i = 0; i < a.weights.outerSize(); ++i) {
      for (decltype(a.weights)::InnerIterator it(a.weights, i); it; ++it) {
        t.emplace_back(static_cast<int>(it.row()), rep.layout.field_offset + static_cast<int>(it.col()), it.value());
      }
    }
    SparseMatrix rows(static_cast<Eigen::Index>(locs.size()), rep.setup.model->latent_dim);
    rows.setFromTriplets(t.begin(), t.end());
    const auto med = linear_combinations(rep.fit, rows);
    std::vector<double> est, truth;
    for (std::size_t i = 0; i < locs.size(); ++i) {
      est.push_back(med[i].q50);
      truth.push_back(rep.sim.cluster_field[static_cast<Eigen::Index>(i)]);
    }
    const double r = oracle::pearson(est, truth);
    min_r = std::min(min_r, r);
    max_secs = std::max(max_secs, rep.seconds);
    spdlog::info("criterion 4 seed {}: beta0 interval [{:.3f}, {:.3f}] {}, r = {:.3f}, {:.1f} s", seed, b.q025, b.q975,
                 cov ? "covers" : "misses", r, rep.seconds);
  }
  out.note(format("beta0 covered in %d/20 runs, min Pearson r %.3f, slowest run %.1f s", covered, min_r, max_secs));
  out.require(covered >= 17, "beta0 coverage >= 17/20");
  out.require(min_r > 0.6, "Pearson r > 0.6 in every run");
  out.require(max_secs < 300.0, "runtime < 5 min per run");
  return out;
}

// ---------------------------------------------------------------- criterion 5

SurveyFrame random_frame(std::mt19937_64& rng, int clusters, const std::string& area, double w_lo, double w_hi) {
  SurveyFrame f;
  std::uniform_int_distribution<int> m(3, 8), size(1, 6);
  std::uniform_real_distribution<double> w(w_lo, w_hi);
  std::normal_distribution<double> re(0.0, 0.5);
  for (int i = 0; i < clusters; ++i) {
    Cluster c;
    c.id = area + "c" + std::to_string(i);
    c.area_id = area;
    const double pi = oracle::expit(oracle::logit(0.2) + re(rng));
    const double wi = w(rng);
    const int mi = m(rng);
    for (int j = 0; j < mi; ++j) {
      const int n = size(rng);
      std::binomial_distribution<int> b(n, pi);
      c.households.push_back({c.id + "h" + std::to_string(j), double(n), double(b(rng)), wi});
    }
    f.clusters.push_back(c);
  }
  return f;
}

struct PopCluster {
  std::vector<std::pair<int, int>> households;  // (members, positives)
};

Outcome criterion5() {
  Outcome out;
  const Stopwatch clock;
  std::mt19937_64 rng(55);

  // Equal weights: weighted ratio equals the pooled proportion.
  double max_rel = 0.0;
  for (int rep = 0; rep < 200; ++rep) {
    const double w = std::uniform_real_distribution<double>(1.0, 5000.0)(rng);
    const SurveyFrame f = random_frame(rng, 25, "A", w, w);
    double y = 0, n = 0;
    for (const auto& c : f.clusters) {
      for (const auto& h : c.households) {
        y += h.positives;
        n += h.trials;
      }
    }
    max_rel = std::max(max_rel, std::abs(hajek(f, "A") - y / n) / (y / n));
  }
  out.require(max_rel < 1e-14, "Hajek equals pooled proportion under equal weights");

  // Linearization variance against the cluster bootstrap.
  double worst_ratio = 1.0;
  for (int rep = 0; rep < 5; ++rep) {
    const SurveyFrame f = random_frame(rng, 30, "X", 50.0, 300.0);
    const double v = *design_variance(f, "X", hajek(f, "X"));
    std::uniform_int_distribution<std::size_t> pick(0, f.clusters.size() - 1);
    std::vector<double> est;
    for (int b = 0; b < 2000; ++b) {
      SurveyFrame r;
      for (std::size_t i = 0; i < f.clusters.size(); ++i) r.clusters.push_back(f.clusters[pick(rng)]);
      est.push_back(hajek(r, "X"));
    }
    const double m = mean_of(est);
    double s = 0;
    for (double e : est) s += (e - m) * (e - m);
    s /= double(est.size() - 1);
    if (std::abs(v / s - 1.0) > std::abs(worst_ratio - 1.0)) worst_ratio = v / s;
  }
  out.require(std::abs(worst_ratio - 1.0) <= 0.15, "linearization variance within 15% of bootstrap");

  // Repeated two-stage sampling from a fixed finite population.
  const int num_ea = 2000, n_sample = 40, m_take = 6;
  std::vector<PopCluster> pop(num_ea);
  std::uniform_int_distribution<int> households(20, 60), size(1, 8);
  std::normal_distribution<double> re(0.0, 0.6);
  double pop_y = 0, pop_n = 0;
  for (auto& c : pop) {
    const double pi = oracle::expit(oracle::logit(0.08) + re(rng));
    const int h = households(rng);
    for (int j = 0; j < h; ++j) {
      const int n = size(rng);
      const int y = std::binomial_distribution<int>(n, pi)(rng);
      c.households.emplace_back(n, y);
      pop_y += y;
      pop_n += n;
    }
  }
  const double truth = oracle::logit(pop_y / pop_n);
  int hits = 0;
  const int reps = 500;
  std::uniform_int_distribution<int> pick_ea(0, num_ea - 1);
  for (int rep = 0; rep < reps; ++rep) {
    SurveyFrame f;
    for (int i = 0; i < n_sample; ++i) {
      const PopCluster& pc = pop[static_cast<std::size_t>(pick_ea(rng))];
      std::vector<std::size_t> idx(pc.households.size());
      for (std::size_t k = 0; k < idx.size(); ++k) idx[k] = k;
      std::shuffle(idx.begin(), idx.end(), rng);
      Cluster c;
      c.id = "c" + std::to_string(i);
      c.area_id = "P";
      const double w = (double(num_ea) / n_sample) * (double(pc.households.size()) / m_take);
      for (int k = 0; k < m_take; ++k) {
        const auto [n, y] = pc.households[idx[static_cast<std::size_t>(k)]];
        c.households.push_back({c.id + "h" + std::to_string(k), double(n), double(y), w});
      }
      f.clusters.push_back(c);
    }
    const auto est = direct_estimates(f);
    const double half = 1.959963984540054 * std::sqrt(est[0].v_logit);
    hits += std::abs(est[0].y_logit - truth) <= half;
  }
  const double coverage = double(hits) / reps;
  const double secs = clock.seconds();
  out.note(format("equal-weight max rel diff %.1e; worst variance/bootstrap ratio %.3f; logit coverage %.3f (%d/%d); "
               "%.1f s",
               max_rel, worst_ratio, coverage, hits, reps, secs));
  out.require(coverage >= 0.90 && coverage <= 0.98, "logit interval coverage in [0.90, 0.98]");
  out.require(secs < 120.0, "runtime < 2 min");
  return out;
}

// ---------------------------------------------------------------- criterion 6

JointSamples linear_field_samples(const TriMesh& mesh, const std::vector<std::array<double, 4>>& coef) {
  JointSamples s;
  const auto n = static_cast<Eigen::Index>(mesh.num_vertices());
  s.values.resize(static_cast<Eigen::Index>(coef.size()), n + 1);
  for (std::size_t r = 0; r < coef.size(); ++r) {
    const auto [b0, a, b, c] = coef[r];
    s.values(static_cast<Eigen::Index>(r), 0) = b0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const Point2 p = mesh.vertices[static_cast<std::size_t>(i)];
      s.values(static_cast<Eigen::Index>(r), i + 1) = a * p.x + b * p.y + c;
    }
    s.theta_index.push_back(0);
  }
  return s;
}

Outcome criterion6() {
  Outcome out;
  const gp::PipelineConfig config;
  const gp::Geography geo = gp::load_geography(config);
  MeshOptions o;
  o.interior_max_edge = 0.5;
  o.extension_factor = 1.2;
  const TriMesh mesh = build_mesh(geo.boundary, o);
  const FieldLayout layout{0, 1, static_cast<int>(mesh.num_vertices())};

  const double beta0 = std::log(0.07 / 0.93);
  const JointSamples flat = linear_field_samples(mesh, {{beta0, 0, 0, 0}, {-1.0, 0, 0, 0}});
  const AreaAverageResult r = area_averages(flat, layout, mesh, geo.areas, 100, 9);
  double max_err = 0.0;
  bool all_j = true;
  for (std::size_t k = 0; k < geo.areas.size(); ++k) {
    max_err = std::max(max_err, std::abs(r.draws(0, static_cast<Eigen::Index>(k)) - oracle::expit(beta0)));
    max_err = std::max(max_err, std::abs(r.draws(1, static_cast<Eigen::Index>(k)) - oracle::expit(-1.0)));
    all_j = all_j && r.areas[k].num_points == 100;
  }
  out.require(max_err < 1e-3, "constant field gives expit(beta0) to 1e-3");
  out.require(all_j, "J = 100 points per area");

  // Linear fields over rectangles and the first few synthetic areas; the
  // oracle is a 1e6-point midpoint rule (rejection on the bounding box for
  // the irregular areas).
  std::mt19937_64 rng(66);
  std::uniform_real_distribution<double> coef(-1.0, 1.0);
  int checks = 0, within = 0;
  double worst_z = 0.0;
  std::vector<Polygon> targets{oracle::rectangle(36.0, 0.0, 38.0, 1.5, "r1")};
  for (std::size_t k = 0; k < 6; ++k) targets.push_back(geo.areas[k]);
  for (const auto& area : targets) {
    for (int rep = 0; rep < 3; ++rep) {
      const BoundingBox box = area.bounds();
      const double cx = 0.5 * (box.lo.x + box.hi.x), cy = 0.5 * (box.lo.y + box.hi.y);
      const double b0 = -2.0 + coef(rng), a = coef(rng), b = coef(rng);
      const JointSamples s = linear_field_samples(mesh, {{b0, a, b, -a * cx - b * cy}});
      const std::size_t j = 100;
      const AreaAverageResult avg = area_averages(s, layout, mesh, {area}, j, 700 + checks);
      const int n = 1000;
      double m1 = 0, m2 = 0, cnt = 0;
      for (int ix = 0; ix < n; ++ix) {
        for (int iy = 0; iy < n; ++iy) {
          const Point2 p{box.lo.x + (ix + 0.5) * box.width() / n, box.lo.y + (iy + 0.5) * box.height() / n};
          if (!point_in_area(p, area)) continue;
          const double v = oracle::expit(b0 + a * (p.x - cx) + b * (p.y - cy));
          m1 += v;
          m2 += v * v;
          cnt += 1;
        }
      }
      m1 /= cnt;
      m2 /= cnt;
      const double se = std::sqrt(std::max(0.0, m2 - m1 * m1) / double(j));
      const double z = std::abs(avg.draws(0, 0) - m1) / se;
      worst_z = std::max(worst_z, z);
      within += z <= 3.0;
      ++checks;
    }
  }
  out.note(format("constant-field max error %.1e; linear fields within 3 SE in %d/%d checks (max |z| %.2f)", max_err,
               within, checks, worst_z));
  out.require(within == checks, "linear-field averages within 3 MC standard errors");
  return out;
}

// ---------------------------------------------------------------- criterion 7

Eigen::MatrixXd random_posterior(std::mt19937_64& rng, int samples, int points) {
  std::normal_distribution<double> z;
  std::uniform_real_distribution<double> mu(-4.0, -1.0), rho(0.0, 0.95), sd(0.1, 1.5);
  const double r = rho(rng);
  Eigen::VectorXd m(points), s(points);
  for (int j = 0; j < points; ++j) {
    m[j] = mu(rng);
    s[j] = sd(rng);
  }
  Eigen::MatrixXd eta(samples, points);
  for (int i = 0; i < samples; ++i) {
    const double common = z(rng);
    for (int j = 0; j < points; ++j) eta(i, j) = m[j] + s[j] * (std::sqrt(r) * common + std::sqrt(1 - r) * z(rng));
  }
  return eta;
}

Outcome criterion7() {
  Outcome out;
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> uu(0.03, 0.3), aa(0.01, 0.3), up(1.05, 2.0), af(0.2, 0.95);
  int nesting = 0, disjoint = 0, level = 0, ubound = 0;
  const int reps = 1000;
  for (int rep = 0; rep < reps; ++rep) {
    const Eigen::MatrixXd eta = random_posterior(rng, 400, 40);
    const double u = uu(rng), alpha = aa(rng);
    const ExcursionResult r = simultaneous_excursions(eta, u, alpha);
    const ExcursionResult tighter = simultaneous_excursions(eta, u, alpha * af(rng));
    const ExcursionResult higher = simultaneous_excursions(eta, u * up(rng), alpha);
    bool nest = true, disj = true, lev = true, ub = true;
    for (int j = 0; j < 40; ++j) {
      const auto l = r.labels[static_cast<std::size_t>(j)];
      if (l == ExcursionLabel::kAbove && r.exceed_prob[j] < 1 - alpha - 1e-12) nest = false;
      if (l == ExcursionLabel::kBelow && 1 - r.exceed_prob[j] < 1 - alpha - 1e-12) nest = false;
      const auto lt = tighter.labels[static_cast<std::size_t>(j)];
      if (lt != ExcursionLabel::kIndeterminate && lt != l) lev = false;
      if (higher.labels[static_cast<std::size_t>(j)] == ExcursionLabel::kAbove && l != ExcursionLabel::kAbove) {
        ub = false;
      }
    }
    // Disjointness: every point carries exactly one label and the joint sets
    // meet their probability targets.
    disj = r.labels.size() == 40u && r.joint_above >= 1 - alpha - 1e-12 && r.joint_below >= 1 - alpha - 1e-12;
    nesting += nest;
    disjoint += disj;
    level += lev;
    ubound += ub;
  }
  out.require(nesting == reps, "nesting");
  out.require(disjoint == reps, "disjointness");
  out.require(level == reps, "monotonicity in level");
  out.require(ubound == reps, "monotonicity in u");

  // Independent coordinates, each above u with probability 0.99.
  int kstar = 0;
  while (std::pow(0.99, kstar + 1) >= 0.95) ++kstar;
  std::bernoulli_distribution above(0.99);
  const int s = 1000000, k = 8;
  Eigen::MatrixXd eta(s, k);
  for (int i = 0; i < s; ++i) {
    for (int j = 0; j < k; ++j) eta(i, j) = above(rng) ? 1.0 : -1.0;
  }
  const ExcursionResult ind = simultaneous_excursions(eta, 0.5, 0.05);
  out.require(kstar == 5, "analytic k* = 5");
  out.require(ind.count(ExcursionLabel::kAbove) == static_cast<std::size_t>(kstar), "greedy set size equals k*");

  // Simulated survey data at u = 0.07, alpha = 0.05.
  const gp::PipelineConfig config = replicate_config(7);
  const Replicate rep = run_replicate(config);
  const JointSamples samples = sample_joint(rep.fit, 1000, config.seed, config.threads);
  const std::vector<Point2> grid = gp::evaluation_grid(rep.geo.boundary, config);
  const Eigen::MatrixXd surf = surface_samples(samples, rep.layout, project(rep.setup.mesh, grid));
  const ExcursionResult ex = simultaneous_excursions(surf, 0.07, 0.05);
  const std::size_t na = ex.count(ExcursionLabel::kAbove), nb = ex.count(ExcursionLabel::kBelow),
                    ni = ex.count(ExcursionLabel::kIndeterminate);
  out.note(format("1000 posteriors: nesting %d, disjoint %d, level %d, u %d; k* = %d, greedy %zu; "
               "simulated data: %zu above, %zu below, %zu indeterminate",
               nesting, disjoint, level, ubound, kstar, ind.count(ExcursionLabel::kAbove), na, nb, ni));
  out.require(ni > 0, "nonempty indeterminate set on simulated data");
  return out;
}

// ---------------------------------------------------------------- criterion 8

AdjacencyGraph random_graph(int k, double p, std::mt19937_64& rng) {
  std::bernoulli_distribution coin(p);
  std::vector<std::pair<int, int>> e;
  for (int i = 0; i < k; ++i) {
    for (int j = i + 1; j < k; ++j) {
      if (coin(rng)) e.emplace_back(i, j);
    }
  }
  return adjacency_from_edges(static_cast<std::size_t>(k), e);
}

BymModel model_on(const AdjacencyGraph& g, const Eigen::VectorXd& y, const Eigen::VectorXd& v) {
  BymModel m;
  for (std::size_t i = 0; i < g.size(); ++i) m.area_ids.push_back("a" + std::to_string(i));
  m.graph = g;
  for (int i = 0; i < y.size(); ++i) m.observed_area.push_back(i);
  m.y = y;
  m.variance = v;
  return m;
}

double spread(const std::vector<double>& v) {
  const double m = mean_of(v);
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / double(v.size() - 1));
}

/// Mean over areas of |truth - mean(truth)| - |est - mean(est)|.
double mean_shrinkage(const std::vector<double>& truth, const std::vector<double>& est) {
  const double mt = mean_of(truth), me = mean_of(est);
  double s = 0.0;
  for (std::size_t k = 0; k < truth.size(); ++k) s += std::abs(truth[k] - mt) - std::abs(est[k] - me);
  return s / double(truth.size());
}

Outcome criterion8() {
  Outcome out;
  std::mt19937_64 rng(88);
  std::normal_distribution<double> z;

  // Limits in the sampling variance.
  double interp_err = 0.0, shrink_ratio = 0.0;
  for (int rep = 0; rep < 5; ++rep) {
    const auto g = random_graph(12, 0.25, rng);
    Eigen::VectorXd y(12);
    for (int i = 0; i < 12; ++i) y[i] = -2 + z(rng);
    const BymResult small = fit_bym(model_on(g, y, Eigen::VectorXd::Constant(12, 1e-8)));
    for (int i = 0; i < 12; ++i) {
      interp_err = std::max(interp_err, std::abs(small.eta[static_cast<std::size_t>(i)].mean - y[i]));
    }
    const BymResult big = fit_bym(model_on(g, y, Eigen::VectorXd::Constant(12, 1e6)));
    std::vector<double> m, yy(y.data(), y.data() + 12);
    for (const auto& e : big.eta) m.push_back(e.mean);
    shrink_ratio = std::max(shrink_ratio, spread(m) / spread(yy));
  }
  out.require(interp_err < 1e-3, "small-variance interpolation");
  out.require(shrink_ratio < 0.01, "large-variance shrinkage");

  // Dense oracle at fixed hyperparameters.
  FitOptions single;
  single.center = CenterStrategy::kFixed;
  single.grid = GridSpec::single_point();
  double dense_err = 0.0;
  for (int k : {3, 7, 15, 30, 50}) {
    const auto g = random_graph(k, 3.0 / k, rng);
    std::uniform_real_distribution<double> uv(0.05, 0.5);
    Eigen::VectorXd y(k), v(k);
    for (int i = 0; i < k; ++i) {
      y[i] = -1.5 + z(rng);
      v[i] = uv(rng);
    }
    BymModel m = model_on(g, y, v);
    m.initial_log_precision_icar = 0.7;
    m.initial_log_precision_iid = 1.9;
    const BymResult r = fit_bym(m, single);
    Eigen::VectorXd mean, sd;
    oracle::dense_bym(g, y, v, std::exp(0.7), std::exp(1.9), &mean, &sd);
    for (int i = 0; i < k; ++i) {
      dense_err = std::max(dense_err, std::abs(r.eta[static_cast<std::size_t>(i)].mean - mean[i]));
      dense_err = std::max(dense_err, std::abs(r.eta[static_cast<std::size_t>(i)].sd - sd[i]));
    }
  }
  out.require(dense_err < 1e-8, "dense oracle agreement to 1e-8");

  // Simulated replicates: SPDE area averages against BYM.
  double min_rho = 1.0;
  std::vector<double> shrink_spde, shrink_bym;
  for (std::uint64_t seed = 101; seed <= 105; ++seed) {
    const gp::PipelineConfig config = replicate_config(seed);
    const Replicate rep = run_replicate(config);
    const JointSamples samples = sample_joint(rep.fit, 1000, config.seed, config.threads);
    const AreaAverageResult spde = area_averages(samples, rep.layout, rep.setup.mesh, rep.geo.areas, 100,
                                                 derive_seed(config.seed, 101), config.threads);
    const BymResult bym = fit_bym(gp::build_bym_model(rep.sim.frame, rep.geo, config), gp::fit_options(config));
    std::vector<double> a, b, t;
    for (std::size_t k = 0; k < rep.geo.areas.size(); ++k) {
      a.push_back(spde.areas[k].mean);
      b.push_back(bym.prevalence[k].mean);
      t.push_back(rep.sim.area_truth[k]);
    }
    const double rho = oracle::spearman(a, b);
    min_rho = std::min(min_rho, rho);
    shrink_spde.push_back(mean_shrinkage(t, a));
    shrink_bym.push_back(mean_shrinkage(t, b));
    spdlog::info("criterion 8 seed {}: rank correlation {:.3f}, truth {:.3f}/{:.3f}, shrinkage {:.4f}/{:.4f}", seed,
                 rho, oracle::spearman(a, t), oracle::spearman(b, t), shrink_spde.back(), shrink_bym.back());
  }
  const double ss = mean_of(shrink_spde), sb = mean_of(shrink_bym);
  out.note(format("interpolation error %.1e, shrinkage spread ratio %.1e, dense error %.1e; "
               "min SPDE-BYM rank correlation %.3f over 5 replicates; mean shrinkage SPDE %.4f, BYM %.4f",
               interp_err, shrink_ratio, dense_err, min_rho, ss, sb));
  out.require(min_rho > 0.5, "SPDE-BYM rank correlation > 0.5");
  out.require(ss > 0.0 && sb > 0.0, "positive mean shrinkage for both methods");
  return out;
}

// ---------------------------------------------------------------- criterion 9

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

/// Width, height and pixel bytes of a binary PGM.
std::string pgm_pixels(const fs::path& p, int* w, int* h) {
  std::ifstream in(p, std::ios::binary);
  std::string magic;
  int maxval = 0;
  in >> magic >> *w >> *h >> maxval;
  in.get();
  std::string px(static_cast<std::size_t>(*w) * static_cast<std::size_t>(*h), '\0');
  in.read(px.data(), static_cast<std::streamsize>(px.size()));
  return magic == "P5" && in ? px : std::string();
}

Outcome criterion9() {
  Outcome out;
  std::vector<fs::path> dirs;
  for (const char* name : {"a", "b"}) {
    const fs::path d = fs::temp_directory_path() / (std::string("geoprev_acceptance_") + name);
    fs::remove_all(d);
    fs::create_directories(d);
    std::ofstream(d / "run.ini") << "[run]\nseed = 9\nthreads = 2\n[paths]\noutput_dir = out\n";
    for (const char* cmd : {"simulate", "fit", "areas", "excursions", "report"}) {
      const std::string line = "cd '" + d.string() + "' && '" GEOPREV_CLI_PATH "' " + cmd +
                               " --config run.ini --log-level warn >> cli.log 2>&1";
      const int status = std::system(line.c_str());
      out.require(status == 0, std::string(cmd) + " exits 0");
    }
    dirs.push_back(d / "out");
  }
  int csv = 0, pgm = 0, csv_same = 0, pgm_same = 0;
  for (const auto& e : fs::directory_iterator(dirs[0])) {
    const auto name = e.path().filename();
    const fs::path other = dirs[1] / name;
    if (e.path().extension() == ".csv") {
      ++csv;
      csv_same += fs::exists(other) && slurp(e.path()) == slurp(other);
    } else if (e.path().extension() == ".pgm") {
      ++pgm;
      int w1 = 0, h1 = 0, w2 = 0, h2 = 0;
      const std::string a = pgm_pixels(e.path(), &w1, &h1);
      const std::string b = fs::exists(other) ? pgm_pixels(other, &w2, &h2) : std::string();
      pgm_same += !a.empty() && w1 == w2 && h1 == h2 && a == b;
    }
  }
  out.note(format("%d/%d CSV files byte-identical, %d/%d PGM images pixel-identical", csv_same, csv, pgm_same, pgm));
  out.require(csv >= 10 && csv_same == csv, "byte-identical CSV outputs");
  out.require(pgm >= 3 && pgm_same == pgm, "pixel-identical PGM outputs");
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_level(spdlog::level::info);
  const std::vector<std::function<Outcome()>> criteria{criterion1, criterion2, criterion3, criterion4, criterion5,
                                                       criterion6, criterion7, criterion8, criterion9};
  int first = 1, last = static_cast<int>(criteria.size());
  if (argc > 1) {
    first = last = std::atoi(argv[1]);
    if (first < 1 || first > static_cast<int>(criteria.size())) {
      std::cerr << "usage: " << argv[0] << " [criterion 1-9]\n";
      return 2;
    }
  }
  bool all = true;
  for (int i = first; i <= last; ++i) {
    Outcome o;
    const Stopwatch clock;
    try {
      o = criteria[static_cast<std::size_t>(i - 1)]();
    } catch (const std::exception& e) {
      o.require(false, std::string("exception: ") + e.what());
    }
    std::cout << "criterion " << i << ": " << (o.pass ? "PASS" : "FAIL") << " (" << format("%.1f s", clock.seconds())
              << ") " << o.detail << std::endl;
    all = all && o.pass;
  }
  return all ? 0 : 1;
}
