#pragma once

#include "geoprev/geometry.hpp"
#include "geoprev/spde.hpp"
#include "geoprev/survey.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace geoprev {

struct SimConfig {
  double beta0 = -2.5866893440979424;  // log(0.07 / 0.93)
  double tau = 0.60653065971263342;    // exp(-1/2)
  double kappa = 1.6487212707001282;   // exp(1/2)
  double nugget_variance = 0.01;
  int n_clusters = 400;
  int total_psu = 46034;
  int households_per_ea = 100;
  int m_min = 4;
  int m_max = 11;
  /// Probability of 1, 2, ... members tested per household.
  std::vector<double> household_size_probs = std::vector<double>(12, 1.0 / 12.0);
  int truth_lattice = 200;  // nodes per side
  std::uint64_t seed = 1;

  /// Throws ConfigError naming the offending field.
  void validate() const;
  MaternParams matern() const;
  DesignParams design() const { return {n_clusters, total_psu, households_per_ea}; }
};

/// Exact draw of a zero-mean Matérn field at the locations via dense
/// Cholesky of the covariance. Falls back to an SPDE mesh draw above 5,000
/// locations. Duplicate locations get 1e-8 diagonal jitter (with a warning).
Eigen::VectorXd simulate_field(std::span<const Point2> locations, const MaternParams& params, std::uint64_t seed);

/// `replicates` independent draws (replicates x locations) sharing one factorization.
Eigen::MatrixXd simulate_field_replicates(std::span<const Point2> locations, const MaternParams& params,
                                          int replicates, std::uint64_t seed);

/// Regular nx x ny lattice of cell centres over `box`.
struct TruthLattice {
  BoundingBox box;
  int nx = 0;
  int ny = 0;
  Eigen::VectorXd field;  // S at node (i, j) stored at j * nx + i
  std::vector<int> area;  // containing area index per node, -1 outside all areas

  double dx() const { return box.width() / nx; }
  double dy() const { return box.height() / ny; }
  Point2 node(int i, int j) const { return {box.lo.x + (i + 0.5) * dx(), box.lo.y + (j + 0.5) * dy()}; }
  /// Index of the node nearest to p (clamped to the lattice).
  int nearest(Point2 p) const;
};

/// Exact stationary Matérn draw on a regular lattice by circulant embedding.
Eigen::VectorXd lattice_field(const BoundingBox& box, int nx, int ny, const MaternParams& params,
                              std::uint64_t seed);

struct SimOutput {
  SurveyFrame frame;
  Eigen::VectorXd cluster_field;   // true S_i per cluster
  std::vector<std::string> area_ids;
  std::vector<double> area_truth;  // T_k, mean of expit(beta0 + S) over lattice nodes in area k
  TruthLattice lattice;
  SimConfig config;
};

/// Two-stage survey on the boundary: cluster locations (uniform in the
/// boundary unless given), m_i households per cluster, N_ij members tested,
/// Y_ij ~ Binomial(N_ij, expit(beta0 + S_i + eps_ij)). The true field is
/// drawn on the truth lattice and S_i read at the node nearest each cluster.
SimOutput simulate_survey(const SimConfig& config, const Polygon& boundary, const std::vector<Polygon>& areas,
                          const std::vector<Point2>* cluster_locations = nullptr);

/// Lattice CSV: x,y,field,prevalence,area_id (nodes inside some area only).
void write_truth_lattice_csv(std::ostream& out, const SimOutput& sim);
/// Area truth CSV: area_id,truth,num_nodes.
void write_area_truth_csv(std::ostream& out, const SimOutput& sim);
/// Cluster truth CSV: cluster_id,x,y,field.
void write_cluster_truth_csv(std::ostream& out, const SimOutput& sim);

/// Locations CSV with header x,y.
std::vector<Point2> read_locations_csv(const std::filesystem::path& path);
/// Household-size distribution CSV with header size,probability.
std::vector<double> read_household_size_csv(const std::filesystem::path& path);

}  // namespace geoprev
