#pragma once

#include "geoprev/geometry.hpp"
#include "geoprev/inference.hpp"

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace geoprev {

/// Where the prevalence surface expit(beta0 + S(x)) lives in the latent vector.
struct FieldLayout {
  int intercept = -1;     // latent index of beta0
  int field_offset = -1;  // first mesh-vertex weight
  int field_size = 0;

  /// Looks up a fixed block with one coordinate and an SPDE block by name.
  static FieldLayout from_model(const LatentModel& model, const std::string& intercept = "intercept",
                                const std::string& field = "field");
};

/// Linear predictor beta0 + A w at the projector's points, one row per
/// sample. Household/observation nuggets are not part of the surface.
Eigen::MatrixXd surface_samples(const JointSamples& samples, const FieldLayout& layout, const Projector& projector);

/// Uniform points in a polygon by bounding-box rejection, switching to
/// triangulation-based sampling for polygons that fill less than 1e-6 of
/// their bounding box (or when rejection stalls).
std::vector<Point2> sample_in_polygon(const Polygon& polygon, std::size_t n, std::mt19937_64& rng);

/// Ear-clipping triangulation of the polygon's outer rings. Holes are not
/// cut out; callers reject points that land in them.
std::vector<std::array<Point2, 3>> triangulate_polygon(const Polygon& polygon);

struct AreaSummary {
  std::string id;
  double mean = 0.0;
  double sd = 0.0;
  double q025 = 0.0;
  double q50 = 0.0;
  double q975 = 0.0;
  int num_points = 0;
  bool covered = true;  // false: no integration point fell inside the mesh
};

struct AreaAverageResult {
  std::vector<AreaSummary> areas;
  Eigen::MatrixXd draws;  // samples x areas; NaN columns for uncovered areas
};

/// T_k = mean over J uniform points of expit(beta0 + S(x_kj)), per joint sample.
/// Integration points come from derive_seed(seed, k) so the result does not
/// depend on thread count.
AreaAverageResult area_averages(const JointSamples& samples, const FieldLayout& layout, const TriMesh& mesh,
                                const std::vector<Polygon>& areas, std::size_t points_per_area, std::uint64_t seed,
                                int threads = 0);

/// Empirical quantile (type 7, linear interpolation) of a sample.
double sample_quantile(std::vector<double> values, double p);

/// Fraction of rows (samples) with expit(value) > u per column. `eta` holds
/// linear-predictor draws (samples x points).
Eigen::VectorXd pointwise_exceedance(const Eigen::MatrixXd& eta, double u);

enum class ExcursionLabel : int { kBelow = -1, kIndeterminate = 0, kAbove = 1 };

struct ExcursionResult {
  double u = 0.0;
  double alpha_level = 0.0;
  Eigen::VectorXd exceed_prob;          // Pr(p(x) > u)
  std::vector<ExcursionLabel> labels;   // per point
  double joint_above = 1.0;             // empirical Pr(all above-set points exceed u)
  double joint_below = 1.0;             // empirical Pr(all below-set points fall below u)

  std::size_t count(ExcursionLabel label) const;
};

/// Greedy simultaneous excursion sets on linear-predictor draws (samples x
/// points). Points are added in order of pointwise probability (ties by
/// index) while the joint empirical probability stays >= 1 - alpha_level.
ExcursionResult simultaneous_excursions(const Eigen::MatrixXd& eta, double u, double alpha_level);

/// Regular lattice clipped to the polygon, centred in its bounding box.
std::vector<Point2> lattice_in_polygon(const Polygon& polygon, double spacing);

}  // namespace geoprev
