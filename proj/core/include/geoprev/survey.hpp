#pragma once

#include "geoprev/geometry.hpp"

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace geoprev {

struct Household {
  std::string id;
  double trials = 0.0;     // N_ij, members tested
  double positives = 0.0;  // Y_ij
  double weight = 1.0;     // design weight; every tested member carries it
};

struct Cluster {
  std::string id;
  std::string area_id;
  Point2 location;
  std::vector<Household> households;

  int sampled_households() const { return static_cast<int>(households.size()); }
};

/// Two-stage cluster sample.
struct SurveyFrame {
  std::vector<Cluster> clusters;

  /// Throws DataError unless 0 <= Y <= N and weights are positive and finite.
  void validate() const;
  /// Distinct area ids in order of first appearance.
  std::vector<std::string> area_ids() const;
};

struct DesignParams {
  int num_psu_sampled = 400;
  int total_psu = 46034;
  int households_per_ea = 100;
};

/// 1 / pi_ij with pi_ij = (num_psu_sampled / total_psu) * (m_i / households_per_ea).
double design_weight(int num_psu_sampled, int total_psu, int m_i, int households_per_ea);
double design_weight(const DesignParams& design, int m_i);

/// Weighted prevalence sum(w Y) / sum(w N) over the area's households.
/// Throws DataError when the area has no tested members.
double hajek(const SurveyFrame& frame, const std::string& area_id);

/// With-replacement linearization variance of the Hajek estimator. Returns
/// nullopt for areas with fewer than two sampled clusters.
std::optional<double> design_variance(const SurveyFrame& frame, const std::string& area_id, double p_hat);

/// Kish effective number of persons: (sum w N)^2 / sum(w^2 N).
double effective_sample_size(const SurveyFrame& frame, const std::string& area_id);

enum class FixPolicy {
  kShrink,   // one pseudo-person at the national weighted prevalence
  kAddHalf,  // one pseudo-person split half positive, half negative
  kNone,     // boundary estimates are a DataError
};

FixPolicy parse_fix_policy(const std::string& name);
std::string to_string(FixPolicy policy);

/// Context for boundary fixes.
struct BoundaryContext {
  double national_prevalence = 0.5;
  double effective_size = 1.0;
};

struct LogitEstimate {
  double p_used = 0.0;  // p_hat after any boundary fix
  double y_logit = 0.0;
  double v_logit = 0.0;
  bool fixed = false;
};

/// logit(p_hat) with delta-method variance v_star / (p(1 - p))^2. A boundary
/// p_hat (0 or 1) is moved inside (0, 1) according to `policy` and its
/// variance replaced by p(1 - p) / (n_eff + 1).
LogitEstimate empirical_logit(double p_hat, double v_star, FixPolicy policy = FixPolicy::kShrink,
                              const BoundaryContext& context = {});

struct DirectEstimate {
  std::string area_id;
  double p_hat = 0.0;
  double v_star = 0.0;
  double y_logit = 0.0;
  double v_logit = 0.0;
  int n_clusters = 0;
  double n_eff = 0.0;
  bool boundary_fixed = false;
  bool variance_pooled = false;  // single-cluster area; v_logit is the median of the others
};

/// Direct estimates for every area with data, in `areas` order (areas
/// without tested members are skipped). Single-cluster areas inherit the
/// median v_logit of multi-cluster areas.
std::vector<DirectEstimate> direct_estimates(const SurveyFrame& frame, const std::vector<std::string>& areas,
                                             FixPolicy policy = FixPolicy::kShrink);
std::vector<DirectEstimate> direct_estimates(const SurveyFrame& frame, FixPolicy policy = FixPolicy::kShrink);

/// Frame CSV: cluster_id,area_id,x,y,household_id,N,Y[,weight]. Without a
/// weight column, `design` must be given and weights are computed from the
/// number of households listed per cluster (a non-positive num_psu_sampled
/// means the number of clusters in the file).
SurveyFrame read_survey_csv(std::istream& in, const std::optional<DesignParams>& design = std::nullopt);
SurveyFrame read_survey_csv(const std::filesystem::path& path,
                            const std::optional<DesignParams>& design = std::nullopt);
void write_survey_csv(std::ostream& out, const SurveyFrame& frame);
void write_direct_estimates_csv(std::ostream& out, const std::vector<DirectEstimate>& estimates);

}  // namespace geoprev
