#include "geoprev/simulate.hpp"

#include "geoprev/error.hpp"
#include "geoprev/functionals.hpp"
#include "geoprev/geo_io.hpp"
#include "geoprev/gmrf.hpp"
#include "geoprev/parallel.hpp"

#include <fftw3.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <ostream>
#include <random>
#include <sstream>

namespace geoprev {

namespace {

constexpr std::size_t kDenseLimit = 5000;

double expit(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// FFTW planning is not thread-safe.
std::mutex& fftw_mutex() {
  static std::mutex m;
  return m;
}

Eigen::LLT<Eigen::MatrixXd> dense_factor(std::span<const Point2> locations, const MaternParams& params) {
  const auto n = static_cast<Eigen::Index>(locations.size());
  Eigen::MatrixXd cov(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    cov(i, i) = params.sigma2;
    for (Eigen::Index j = 0; j < i; ++j) {
      cov(i, j) = cov(j, i) = matern_cov(distance(locations[i], locations[j]), params);
    }
  }
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success) {
    spdlog::warn("Matérn covariance is not positive definite (duplicate locations?); adding 1e-8 jitter");
    cov.diagonal().array() += 1e-8;
    llt.compute(cov);
    if (llt.info() != Eigen::Success) throw NumericalError("Matérn covariance is not positive definite after jitter");
  }
  return llt;
}

Eigen::MatrixXd mesh_field_replicates(std::span<const Point2> locations, const MaternParams& params, int replicates,
                                      std::uint64_t seed) {
  BoundingBox box{locations[0], locations[0]};
  for (const auto& p : locations) {
    box.lo = {std::min(box.lo.x, p.x), std::min(box.lo.y, p.y)};
    box.hi = {std::max(box.hi.x, p.x), std::max(box.hi.y, p.y)};
  }
  const double pad = std::max(1e-6, 0.01 * box.diagonal());
  Polygon rect{"sim", {{{box.lo.x - pad, box.lo.y - pad},
                        {box.hi.x + pad, box.lo.y - pad},
                        {box.hi.x + pad, box.hi.y + pad},
                        {box.lo.x - pad, box.hi.y + pad}}}};
  MeshOptions opt;
  opt.interior_max_edge = practical_range(params.kappa, params.nu) / 8.0;
  opt.exterior_max_edge = std::max(opt.interior_max_edge, practical_range(params.kappa, params.nu));
  const TriMesh mesh = build_mesh(rect, opt);
  const FemMatrices fem = fem_matrices(mesh);
  const SparseCholesky chol(assemble_precision(fem, to_theta(params)));
  const Projector proj = project(mesh, locations);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  Eigen::MatrixXd out(replicates, static_cast<Eigen::Index>(locations.size()));
  Eigen::VectorXd z(chol.size());
  for (int r = 0; r < replicates; ++r) {
    for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = normal(rng);
    out.row(r) = (proj.weights * chol.correlate(z)).transpose();
  }
  return out;
}

}  // namespace

void SimConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) { throw ConfigError("sim." + field + ": " + why); };
  if (!std::isfinite(beta0)) fail("beta0", "must be finite");
  if (!(tau > 0.0) || !std::isfinite(tau)) fail("tau", "must be positive");
  if (!(kappa > 0.0) || !std::isfinite(kappa)) fail("kappa", "must be positive");
  if (!(nugget_variance >= 0.0)) fail("nugget_variance", "must be non-negative");
  if (n_clusters <= 0) fail("n_clusters", "must be positive");
  if (total_psu < n_clusters) fail("total_psu", "must be at least n_clusters");
  if (households_per_ea <= 0) fail("households_per_ea", "must be positive");
  if (m_min < 1 || m_max < m_min || m_max > households_per_ea) {
    fail("m_range", "needs 1 <= m_min <= m_max <= households_per_ea");
  }
  if (household_size_probs.empty()) fail("household_sizes", "distribution is empty");
  double s = 0.0;
  for (double p : household_size_probs) {
    if (!(p >= 0.0)) fail("household_sizes", "probabilities must be non-negative");
    s += p;
  }
  if (!(s > 0.0)) fail("household_sizes", "probabilities sum to zero");
  if (truth_lattice < 2) fail("truth_lattice", "needs at least 2 nodes per side");
}

MaternParams SimConfig::matern() const {
  return {sigma_from_tau(tau, kappa, 1.0), kappa, 1.0};
}

Eigen::MatrixXd simulate_field_replicates(std::span<const Point2> locations, const MaternParams& params,
                                          int replicates, std::uint64_t seed) {
  if (locations.empty() || replicates <= 0) return Eigen::MatrixXd(std::max(replicates, 0), locations.size());
  for (const auto& p : locations) {
    if (!is_finite(p)) throw DataError("simulate_field: non-finite location");
  }
  if (locations.size() > kDenseLimit) return mesh_field_replicates(locations, params, replicates, seed);
  const Eigen::LLT<Eigen::MatrixXd> llt = dense_factor(locations, params);
  const auto n = static_cast<Eigen::Index>(locations.size());
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  Eigen::MatrixXd z(n, replicates);
  for (int r = 0; r < replicates; ++r) {
    for (Eigen::Index i = 0; i < n; ++i) z(i, r) = normal(rng);
  }
  return (llt.matrixL() * z).transpose();
}

Eigen::VectorXd simulate_field(std::span<const Point2> locations, const MaternParams& params, std::uint64_t seed) {
  return simulate_field_replicates(locations, params, 1, seed).row(0).transpose();
}

int TruthLattice::nearest(Point2 p) const {
  const int i = std::clamp(static_cast<int>(std::floor((p.x - box.lo.x) / dx())), 0, nx - 1);
  const int j = std::clamp(static_cast<int>(std::floor((p.y - box.lo.y) / dy())), 0, ny - 1);
  return j * nx + i;
}

Eigen::VectorXd lattice_field(const BoundingBox& box, int nx, int ny, const MaternParams& params,
                              std::uint64_t seed) {
  const double dx = box.width() / nx;
  const double dy = box.height() / ny;
  // Embedding torus at least twice the lattice; grown until the circulant
  // spectrum is non-negative up to rounding.
  for (int factor = 2; factor <= 8; factor *= 2) {
    const int mx = factor * nx;
    const int my = factor * ny;
    const std::size_t total = static_cast<std::size_t>(mx) * static_cast<std::size_t>(my);
    auto* buf = static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * total));
    fftw_plan plan;
    {
      std::lock_guard<std::mutex> lock(fftw_mutex());
      plan = fftw_plan_dft_2d(my, mx, buf, buf, FFTW_FORWARD, FFTW_ESTIMATE);
    }
    for (int j = 0; j < my; ++j) {
      const double hy = std::min(j, my - j) * dy;
      for (int i = 0; i < mx; ++i) {
        const double hx = std::min(i, mx - i) * dx;
        const std::size_t k = static_cast<std::size_t>(j) * mx + i;
        buf[k][0] = matern_cov(std::hypot(hx, hy), params);
        buf[k][1] = 0.0;
      }
    }
    fftw_execute(plan);
    std::vector<double> lambda(total);
    double max_l = 0.0, min_l = 0.0;
    for (std::size_t k = 0; k < total; ++k) {
      lambda[k] = buf[k][0];
      max_l = std::max(max_l, lambda[k]);
      min_l = std::min(min_l, lambda[k]);
    }
    if (min_l < -1e-8 * max_l && factor < 8) {
      std::lock_guard<std::mutex> lock(fftw_mutex());
      fftw_destroy_plan(plan);
      fftw_free(buf);
      continue;
    }
    if (min_l < -1e-8 * max_l) {
      spdlog::warn("circulant embedding has negative eigenvalues down to {:.3g}; clipped to zero", min_l / max_l);
    }
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal;
    for (std::size_t k = 0; k < total; ++k) {
      const double s = std::sqrt(std::max(lambda[k], 0.0) / static_cast<double>(total));
      buf[k][0] = s * normal(rng);
      buf[k][1] = s * normal(rng);
    }
    fftw_execute(plan);
    Eigen::VectorXd out(static_cast<Eigen::Index>(nx) * ny);
    for (int j = 0; j < ny; ++j) {
      for (int i = 0; i < nx; ++i) out[static_cast<Eigen::Index>(j) * nx + i] = buf[static_cast<std::size_t>(j) * mx + i][0];
    }
    {
      std::lock_guard<std::mutex> lock(fftw_mutex());
      fftw_destroy_plan(plan);
    }
    fftw_free(buf);
    return out;
  }
  throw NumericalError("circulant embedding failed");
}

SimOutput simulate_survey(const SimConfig& config, const Polygon& boundary, const std::vector<Polygon>& areas,
                          const std::vector<Point2>* cluster_locations) {
  config.validate();
  if (areas.empty()) throw DataError("simulate_survey needs at least one area");
  SimOutput out;
  out.config = config;
  for (const auto& a : areas) out.area_ids.push_back(a.id);

  // Truth lattice over the boundary's bounding box.
  TruthLattice& lat = out.lattice;
  lat.box = boundary.bounds();
  lat.nx = lat.ny = config.truth_lattice;
  const MaternParams matern = config.matern();
  lat.field = lattice_field(lat.box, lat.nx, lat.ny, matern, derive_seed(config.seed, 1));
  lat.area.assign(static_cast<std::size_t>(lat.nx) * lat.ny, -1);
  std::vector<BoundingBox> area_boxes;
  for (const auto& a : areas) area_boxes.push_back(a.bounds());
  for (int j = 0; j < lat.ny; ++j) {
    for (int i = 0; i < lat.nx; ++i) {
      const Point2 p = lat.node(i, j);
      for (std::size_t k = 0; k < areas.size(); ++k) {
        if (area_boxes[k].contains(p) && point_in_area(p, areas[k])) {
          lat.area[static_cast<std::size_t>(j) * lat.nx + i] = static_cast<int>(k);
          break;
        }
      }
    }
  }
  out.area_truth.assign(areas.size(), 0.0);
  std::vector<int> counts(areas.size(), 0);
  for (std::size_t n = 0; n < lat.area.size(); ++n) {
    if (lat.area[n] < 0) continue;
    out.area_truth[static_cast<std::size_t>(lat.area[n])] += expit(config.beta0 + lat.field[static_cast<Eigen::Index>(n)]);
    ++counts[static_cast<std::size_t>(lat.area[n])];
  }
  for (std::size_t k = 0; k < areas.size(); ++k) {
    if (counts[k] > 0) {
      out.area_truth[k] /= counts[k];
    } else {
      out.area_truth[k] = expit(config.beta0 + lat.field[lat.nearest(areas[k].centroid())]);
    }
  }

  // Cluster locations and their areas.
  std::vector<Point2> locs;
  if (cluster_locations) {
    locs = *cluster_locations;
  } else {
    std::mt19937_64 rng(derive_seed(config.seed, 0));
    locs = sample_in_polygon(boundary, static_cast<std::size_t>(config.n_clusters), rng);
  }
  const DesignParams design{static_cast<int>(locs.size()), std::max(config.total_psu, static_cast<int>(locs.size())),
                            config.households_per_ea};
  out.cluster_field.resize(static_cast<Eigen::Index>(locs.size()));

  std::mt19937_64 rng(derive_seed(config.seed, 2));
  std::uniform_int_distribution<int> m_dist(config.m_min, config.m_max);
  std::discrete_distribution<int> size_dist(config.household_size_probs.begin(), config.household_size_probs.end());
  std::normal_distribution<double> eps(0.0, std::sqrt(config.nugget_variance));
  const int digits = static_cast<int>(std::to_string(locs.size()).size());
  for (std::size_t c = 0; c < locs.size(); ++c) {
    Cluster cl;
    std::ostringstream id;
    id << 'C' << std::setw(digits) << std::setfill('0') << c + 1;
    cl.id = id.str();
    cl.location = locs[c];
    int area = -1;
    for (std::size_t k = 0; k < areas.size() && area < 0; ++k) {
      if (area_boxes[k].contains(locs[c]) && point_in_area(locs[c], areas[k])) area = static_cast<int>(k);
    }
    if (area < 0) {
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < areas.size(); ++k) {
        const double d = distance_to_boundary(locs[c], areas[k]);
        if (d < best) {
          best = d;
          area = static_cast<int>(k);
        }
      }
    }
    cl.area_id = areas[static_cast<std::size_t>(area)].id;
    const double s = lat.field[lat.nearest(locs[c])];
    out.cluster_field[static_cast<Eigen::Index>(c)] = s;
    const int m = m_dist(rng);
    const double w = design_weight(design, m);
    for (int h = 0; h < m; ++h) {
      Household hh;
      hh.id = std::to_string(h + 1);
      hh.trials = size_dist(rng) + 1;
      const double e = config.nugget_variance > 0.0 ? eps(rng) : 0.0;
      std::binomial_distribution<int> y(static_cast<int>(hh.trials), expit(config.beta0 + s + e));
      hh.positives = y(rng);
      hh.weight = w;
      cl.households.push_back(hh);
    }
    out.frame.clusters.push_back(std::move(cl));
  }
  return out;
}

void write_truth_lattice_csv(std::ostream& out, const SimOutput& sim) {
  const TruthLattice& lat = sim.lattice;
  out << "x,y,field,prevalence,area_id\n" << std::setprecision(17);
  for (int j = 0; j < lat.ny; ++j) {
    for (int i = 0; i < lat.nx; ++i) {
      const std::size_t n = static_cast<std::size_t>(j) * lat.nx + i;
      if (lat.area[n] < 0) continue;
      const Point2 p = lat.node(i, j);
      const double s = lat.field[static_cast<Eigen::Index>(n)];
      out << p.x << ',' << p.y << ',' << s << ',' << expit(sim.config.beta0 + s) << ','
          << sim.area_ids[static_cast<std::size_t>(lat.area[n])] << '\n';
    }
  }
}

void write_area_truth_csv(std::ostream& out, const SimOutput& sim) {
  std::vector<int> counts(sim.area_ids.size(), 0);
  for (int a : sim.lattice.area) {
    if (a >= 0) ++counts[static_cast<std::size_t>(a)];
  }
  out << "area_id,truth,num_nodes\n" << std::setprecision(17);
  for (std::size_t k = 0; k < sim.area_ids.size(); ++k) {
    out << sim.area_ids[k] << ',' << sim.area_truth[k] << ',' << counts[k] << '\n';
  }
}

void write_cluster_truth_csv(std::ostream& out, const SimOutput& sim) {
  out << "cluster_id,x,y,field\n" << std::setprecision(17);
  for (std::size_t c = 0; c < sim.frame.clusters.size(); ++c) {
    const auto& cl = sim.frame.clusters[c];
    out << cl.id << ',' << cl.location.x << ',' << cl.location.y << ',' << sim.cluster_field[static_cast<Eigen::Index>(c)]
        << '\n';
  }
}

std::vector<Point2> read_locations_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open location file " + path.string());
  std::string line;
  std::getline(in, line);
  std::vector<Point2> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto f = split_csv_line(line);
    try {
      if (f.size() < 2) throw std::invalid_argument("short");
      out.push_back({std::stod(f[0]), std::stod(f[1])});
    } catch (const std::exception&) {
      throw DataError(path.string() + " line " + std::to_string(lineno) + ": expected x,y");
    }
    if (!is_finite(out.back())) throw DataError(path.string() + " line " + std::to_string(lineno) + ": non-finite");
  }
  return out;
}

std::vector<double> read_household_size_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open household-size file " + path.string());
  std::string line;
  std::getline(in, line);
  std::vector<double> probs;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto f = split_csv_line(line);
    int size = 0;
    double p = 0.0;
    try {
      if (f.size() < 2) throw std::invalid_argument("short");
      size = std::stoi(f[0]);
      p = std::stod(f[1]);
    } catch (const std::exception&) {
      throw DataError(path.string() + " line " + std::to_string(lineno) + ": expected size,probability");
    }
    if (size < 1 || !(p >= 0.0)) throw DataError(path.string() + " line " + std::to_string(lineno) + ": invalid entry");
    if (probs.size() < static_cast<std::size_t>(size)) probs.resize(static_cast<std::size_t>(size), 0.0);
    probs[static_cast<std::size_t>(size - 1)] += p;
  }
  if (probs.empty()) throw DataError(path.string() + " has no household sizes");
  return probs;
}

}  // namespace geoprev
