#pragma once

#include "geoprev/geometry.hpp"
#include "geoprev/inference.hpp"
#include "geoprev/survey.hpp"

#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

namespace geoprev {

/// Undirected neighbourhood graph over K areas.
struct AdjacencyGraph {
  std::vector<std::vector<int>> neighbors;  // sorted, no self-loops
  std::vector<int> component;               // connected-component label per area
  int num_components = 0;

  std::size_t size() const { return neighbors.size(); }
  bool is_singleton(int area) const { return neighbors[static_cast<std::size_t>(area)].empty(); }
};

/// Builds a symmetric graph from an edge list; duplicate edges collapse and
/// self-loops are rejected with DataError.
AdjacencyGraph adjacency_from_edges(std::size_t num_areas, const std::vector<std::pair<int, int>>& edges);

/// Two polygons are neighbours when they share at least two boundary
/// vertices within `tolerance`.
AdjacencyGraph adjacency_from_polygons(const std::vector<Polygon>& areas, double tolerance = 1e-9);

/// Edge-list CSV with header area_i,area_j naming ids from `area_ids`.
AdjacencyGraph read_adjacency_csv(std::istream& in, const std::vector<std::string>& area_ids);
AdjacencyGraph read_adjacency_csv(const std::filesystem::path& path, const std::vector<std::string>& area_ids);
void write_adjacency_csv(std::ostream& out, const AdjacencyGraph& graph, const std::vector<std::string>& area_ids);

/// ICAR structure matrix D - W.
SparseMatrix icar_precision(const AdjacencyGraph& graph);

/// Direct estimates on the logit scale attached to a graph. Areas without an
/// estimate enter the latent model but contribute no observation.
struct BymModel {
  std::vector<std::string> area_ids;
  AdjacencyGraph graph;
  std::vector<int> observed_area;  // index into area_ids per observation
  Eigen::VectorXd y;               // empirical logits
  Eigen::VectorXd variance;        // fixed sampling variances of y
  double initial_log_precision_icar = 2.0;
  double initial_log_precision_iid = 2.0;
};

BymModel make_bym_model(const std::vector<std::string>& area_ids, const AdjacencyGraph& graph,
                        const std::vector<DirectEstimate>& estimates);

/// eta_k = beta0 + S_k + eps_k with S ICAR (sum to zero per component, absent
/// for singleton areas) and eps iid. Latent order: intercept, S (non-singleton
/// areas), eps.
std::shared_ptr<const LatentModel> bym_latent_model(const BymModel& model);

struct PrevalenceSummary {
  double mean = 0.0;
  double sd = 0.0;
  double q025 = 0.0;
  double q50 = 0.0;
  double q975 = 0.0;
};

struct BymResult {
  FitResult fit;
  std::vector<MarginalSummary> eta;              // per area, logit scale
  std::vector<PrevalenceSummary> prevalence;     // per area, expit(eta)
  std::vector<bool> icar_dropped;                // singleton areas
};

/// Rows mapping the latent vector to eta_k for every area.
SparseMatrix bym_eta_rows(const BymModel& model, const LatentModel& latent);

BymResult fit_bym(const BymModel& model, const FitOptions& options = {});

/// Mixture summary of expit(eta) for eta ~ sum_i w_i N(mu_i, sd_i^2): mean and
/// sd by quadrature, quantiles as expit of eta quantiles.
PrevalenceSummary prevalence_summary(std::span<const double> weights, std::span<const double> means,
                                     std::span<const double> sds);

}  // namespace geoprev
