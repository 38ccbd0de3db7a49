#pragma once

#include "geoprev/simulate.hpp"
#include "geoprev/survey.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace geoprev::pipeline {

struct Paths {
  std::string boundary;         // empty: built-in synthetic outline
  std::string areas;            // empty: Voronoi areas over the boundary
  std::string data;             // empty: <output_dir>/survey.csv
  std::string adjacency;        // empty: derived from shared area vertices
  std::string locations;        // optional cluster locations for simulate
  std::string household_sizes;  // optional household-size distribution
  std::string output_dir = "output";
};

struct ModelConfig {
  bool spde = true;
  bool bym = true;
  double interior_max_edge = 0.3;
  double extension_factor = 1.5;
  double exterior_max_edge = 2.0;
  double initial_range = 2.5;
  double initial_sigma2 = 0.25;
  bool nugget = true;
  double nugget_initial_precision = 25.0;
  double bym_initial_log_precision_icar = 2.0;
  double bym_initial_log_precision_iid = 2.0;
  double prior_sd = 1.5;
  double fixed_precision = 0.001;
  std::string grid_offsets = "-1.5,-0.75,0,0.75,1.5";
  int num_samples = 1000;
};

struct SurveyConfig {
  int total_psu = 46034;
  int households_per_ea = 100;
  FixPolicy fix_policy = FixPolicy::kShrink;
};

struct FunctionalConfig {
  double u = 0.07;
  double alpha_level = 0.05;
  int points_per_area = 100;
  double grid_spacing = 0.0;  // 0: half the interior mesh edge
};

struct PipelineConfig {
  Paths paths;
  ModelConfig model;
  SurveyConfig survey;
  FunctionalConfig functional;
  SimConfig sim;
  int num_areas = 47;
  std::uint64_t area_seed = 2003;
  std::uint64_t seed = 1;
  int threads = 0;  // 0: GEOPREV_THREADS or hardware concurrency

  std::filesystem::path output_dir() const { return paths.output_dir; }
  std::vector<double> offsets() const;
  /// Throws ConfigError naming the offending key.
  void validate() const;
};

/// Parses INI text. Unknown sections or keys, unparsable values and
/// out-of-range numbers are ConfigErrors naming the key and its line.
PipelineConfig parse_config(std::istream& in, const std::string& source = "<config>");
PipelineConfig load_config(const std::filesystem::path& path);

/// Writes every setting, resolved to its effective value, as INI text that
/// parse_config reads back to an equivalent configuration.
void write_config(std::ostream& out, const PipelineConfig& config);

}  // namespace geoprev::pipeline
