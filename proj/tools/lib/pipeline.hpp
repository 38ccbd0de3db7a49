#pragma once

#include "config.hpp"

#include "geoprev/areal.hpp"
#include "geoprev/functionals.hpp"
#include "geoprev/inference.hpp"
#include "geoprev/survey.hpp"

#include <filesystem>
#include <memory>
#include <vector>

namespace geoprev::pipeline {

struct Geography {
  Polygon boundary;
  std::vector<Polygon> areas;
};

/// Boundary and areas from paths.boundary / paths.areas, or the built-in
/// outline with Voronoi areas when those paths are empty.
Geography load_geography(const PipelineConfig& config);

struct SpdeSetup {
  TriMesh mesh;
  std::shared_ptr<const FemMatrices> fem;
  std::shared_ptr<const LatentModel> model;
};

/// Household-level binomial model: intercept, SPDE field on a mesh over the
/// boundary, and (optionally) one nugget effect per household.
SpdeSetup build_spde_model(const SurveyFrame& frame, const Polygon& boundary, const ModelConfig& model);

FitOptions fit_options(const PipelineConfig& config);

/// BYM model on the direct estimates of every area in `geo`.
BymModel build_bym_model(const SurveyFrame& frame, const Geography& geo, const PipelineConfig& config,
                         std::vector<DirectEstimate>* estimates = nullptr);

/// Evaluation lattice for surfaces and excursions.
std::vector<Point2> evaluation_grid(const Polygon& boundary, const PipelineConfig& config);
double grid_spacing(const PipelineConfig& config);

/// Binary sample store: samples.bin (little-endian doubles, row-major) and
/// samples_layout.json describing shape, field layout and theta indices.
void write_samples(const std::filesystem::path& dir, const JointSamples& samples, const FieldLayout& layout);
JointSamples read_samples(const std::filesystem::path& dir, FieldLayout* layout);

SurveyFrame load_frame(const PipelineConfig& config);

void cmd_simulate(const PipelineConfig& config);
void cmd_fit(const PipelineConfig& config);
void cmd_areas(const PipelineConfig& config);
void cmd_excursions(const PipelineConfig& config);
void cmd_report(const PipelineConfig& config);

}  // namespace geoprev::pipeline
