#include "pipeline.hpp"

#include "render.hpp"

#include "geoprev/error.hpp"
#include "geoprev/geo_io.hpp"
#include "geoprev/parallel.hpp"
#include "geoprev/simulate.hpp"
#include "geoprev/synthetic.hpp"

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

namespace geoprev::pipeline {

namespace fs = std::filesystem;

namespace {

double expit(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

std::ofstream open_out(const fs::path& path, bool binary = false) {
  std::ofstream out(path, binary ? std::ios::binary : std::ios::out);
  if (!out) throw DataError("cannot write " + path.string());
  out << std::setprecision(17);
  return out;
}

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name, const fs::path& path) const {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw DataError(path.string() + " has no column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  }
};

Table read_table(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("missing input: " + path.string());
  Table t;
  std::string line;
  if (std::getline(in, line)) t.header = split_csv_line(line);
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    t.rows.push_back(split_csv_line(line));
    if (t.rows.back().size() < t.header.size()) throw DataError(path.string() + " has a short row");
  }
  return t;
}

double number(const std::string& s, const fs::path& path) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  throw DataError(path.string() + ": '" + s + "' is not a number");
}

void write_summary_row(std::ostream& out, const std::string& name, const MarginalSummary& s) {
  out << name << ',' << s.mean << ',' << s.sd << ',' << s.q025 << ',' << s.q50 << ',' << s.q975 << '\n';
}

std::vector<std::string> latent_names(const LatentModel& model) {
  std::vector<std::string> names(static_cast<std::size_t>(model.latent_dim));
  for (const auto& b : model.blocks) {
    for (int i = 0; i < b.size; ++i) {
      names[static_cast<std::size_t>(b.offset + i)] = b.size == 1 ? b.name : b.name + "[" + std::to_string(i) + "]";
    }
  }
  return names;
}

void write_theta_grid(const fs::path& path, const FitResult& fit) {
  auto out = open_out(path);
  out << "index";
  for (const auto& n : fit.model->theta_names) out << ',' << n;
  out << ",log_posterior,weight\n";
  for (std::size_t i = 0; i < fit.points.size(); ++i) {
    out << i;
    for (Eigen::Index j = 0; j < fit.points[i].theta.size(); ++j) out << ',' << fit.points[i].theta[j];
    out << ',' << fit.points[i].log_posterior << ',' << fit.points[i].weight << '\n';
  }
}

std::vector<double> prevalence_column(const Eigen::MatrixXd& eta, Eigen::Index j) {
  std::vector<double> v(static_cast<std::size_t>(eta.rows()));
  for (Eigen::Index s = 0; s < eta.rows(); ++s) v[static_cast<std::size_t>(s)] = expit(eta(s, j));
  return v;
}

TriMesh load_mesh(const fs::path& dir) {
  std::ifstream v(dir / "mesh_vertices.csv"), t(dir / "mesh_triangles.csv");
  if (!v) throw DataError("missing input: " + (dir / "mesh_vertices.csv").string());
  if (!t) throw DataError("missing input: " + (dir / "mesh_triangles.csv").string());
  return read_mesh_csv(v, t);
}

}  // namespace

Geography load_geography(const PipelineConfig& config) {
  Geography g;
  if (config.paths.boundary.empty()) {
    g.boundary = synthetic_country_boundary();
  } else {
    auto polys = read_polygons(config.paths.boundary);
    if (polys.empty()) throw DataError(config.paths.boundary + " contains no polygon");
    g.boundary = polys.front();
    for (std::size_t i = 1; i < polys.size(); ++i) {
      g.boundary.rings.insert(g.boundary.rings.end(), polys[i].rings.begin(), polys[i].rings.end());
    }
    g.boundary.normalize();
  }
  if (config.paths.areas.empty()) {
    g.areas = voronoi_areas(g.boundary, config.num_areas, config.area_seed);
  } else {
    g.areas = read_polygons(config.paths.areas);
    if (g.areas.empty()) throw DataError(config.paths.areas + " contains no polygon");
  }
  return g;
}

SpdeSetup build_spde_model(const SurveyFrame& frame, const Polygon& boundary, const ModelConfig& model) {
  SpdeSetup s;
  MeshOptions mo;
  mo.interior_max_edge = model.interior_max_edge;
  mo.extension_factor = model.extension_factor;
  mo.exterior_max_edge = model.exterior_max_edge;
  s.mesh = build_mesh(boundary, mo);
  s.fem = std::make_shared<const FemMatrices>(fem_matrices(s.mesh));

  std::vector<Point2> locs;
  std::vector<double> y, n;
  for (const auto& c : frame.clusters) {
    for (const auto& h : c.households) {
      if (!(h.trials > 0.0)) continue;
      locs.push_back(c.location);
      y.push_back(h.positives);
      n.push_back(h.trials);
    }
  }
  if (locs.empty()) throw DataError("survey frame has no tested members");
  const Projector a = project(s.mesh, locs);
  LatentModelBuilder b(ObservationStage::binomial(Eigen::Map<Eigen::VectorXd>(y.data(), static_cast<Eigen::Index>(y.size())),
                                                  Eigen::Map<Eigen::VectorXd>(n.data(), static_cast<Eigen::Index>(n.size()))));
  const double kappa = practical_range(1.0, 1.0) / model.initial_range;
  b.add_intercept().add_spde("field", s.fem, a, to_theta({model.initial_sigma2, kappa, 1.0}));
  if (model.nugget) b.add_nugget("nugget", std::log(model.nugget_initial_precision));
  s.model = std::make_shared<const LatentModel>(b.build(model.prior_sd, model.fixed_precision));
  return s;
}

FitOptions fit_options(const PipelineConfig& config) {
  FitOptions o;
  o.grid.offsets = config.offsets();
  o.grid.quadrature.assign(o.grid.offsets.size(), 1.0);
  o.threads = config.threads;
  return o;
}

BymModel build_bym_model(const SurveyFrame& frame, const Geography& geo, const PipelineConfig& config,
                         std::vector<DirectEstimate>* estimates) {
  std::vector<std::string> ids;
  for (const auto& a : geo.areas) ids.push_back(a.id);
  const AdjacencyGraph graph = config.paths.adjacency.empty() ? adjacency_from_polygons(geo.areas)
                                                              : read_adjacency_csv(config.paths.adjacency, ids);
  const auto est = direct_estimates(frame, ids, config.survey.fix_policy);
  BymModel m = make_bym_model(ids, graph, est);
  m.initial_log_precision_icar = config.model.bym_initial_log_precision_icar;
  m.initial_log_precision_iid = config.model.bym_initial_log_precision_iid;
  if (estimates) *estimates = est;
  return m;
}

double grid_spacing(const PipelineConfig& config) {
  return config.functional.grid_spacing > 0.0 ? config.functional.grid_spacing : config.model.interior_max_edge / 2.0;
}

std::vector<Point2> evaluation_grid(const Polygon& boundary, const PipelineConfig& config) {
  return lattice_in_polygon(boundary, grid_spacing(config));
}

void write_samples(const fs::path& dir, const JointSamples& samples, const FieldLayout& layout) {
  {
    auto out = open_out(dir / "samples.bin", true);
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = samples.values;
    out.write(reinterpret_cast<const char*>(rm.data()), static_cast<std::streamsize>(sizeof(double) * rm.size()));
  }
  nlohmann::json j;
  j["num_samples"] = samples.values.rows();
  j["latent_dim"] = samples.values.cols();
  j["dtype"] = "float64-le";
  j["order"] = "row-major";
  j["intercept"] = layout.intercept;
  j["field_offset"] = layout.field_offset;
  j["field_size"] = layout.field_size;
  j["theta_index"] = samples.theta_index;
  auto out = open_out(dir / "samples_layout.json");
  out << j.dump(2) << '\n';
}

JointSamples read_samples(const fs::path& dir, FieldLayout* layout) {
  std::ifstream lj(dir / "samples_layout.json");
  if (!lj) throw DataError("missing input: " + (dir / "samples_layout.json").string());
  nlohmann::json j;
  try {
    lj >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("samples_layout.json: " + std::string(e.what()));
  }
  const auto rows = j.at("num_samples").get<Eigen::Index>();
  const auto cols = j.at("latent_dim").get<Eigen::Index>();
  layout->intercept = j.at("intercept").get<int>();
  layout->field_offset = j.at("field_offset").get<int>();
  layout->field_size = j.at("field_size").get<int>();
  JointSamples s;
  s.theta_index = j.at("theta_index").get<std::vector<int>>();
  std::ifstream bin(dir / "samples.bin", std::ios::binary);
  if (!bin) throw DataError("missing input: " + (dir / "samples.bin").string());
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm(rows, cols);
  bin.read(reinterpret_cast<char*>(rm.data()), static_cast<std::streamsize>(sizeof(double) * rm.size()));
  if (bin.gcount() != static_cast<std::streamsize>(sizeof(double) * rm.size())) {
    throw DataError("samples.bin is shorter than its layout declares");
  }
  s.values = rm;
  return s;
}

SurveyFrame load_frame(const PipelineConfig& config) {
  const fs::path path = config.paths.data.empty() ? config.output_dir() / "survey.csv" : fs::path(config.paths.data);
  if (!fs::exists(path)) throw DataError("missing input: " + path.string());
  return read_survey_csv(path, DesignParams{0, config.survey.total_psu, config.survey.households_per_ea});
}

void cmd_simulate(const PipelineConfig& config) {
  const fs::path dir = config.output_dir();
  fs::create_directories(dir);
  const Geography geo = load_geography(config);
  SimConfig sim = config.sim;
  if (!config.paths.household_sizes.empty()) sim.household_size_probs = read_household_size_csv(config.paths.household_sizes);
  std::vector<Point2> locs;
  if (!config.paths.locations.empty()) {
    locs = read_locations_csv(config.paths.locations);
    sim.n_clusters = static_cast<int>(locs.size());
  }
  const SimOutput out = simulate_survey(sim, geo.boundary, geo.areas, locs.empty() ? nullptr : &locs);
  {
    auto f = open_out(dir / "survey.csv");
    write_survey_csv(f, out.frame);
  }
  {
    auto f = open_out(dir / "truth_lattice.csv");
    write_truth_lattice_csv(f, out);
  }
  {
    auto f = open_out(dir / "area_truth.csv");
    write_area_truth_csv(f, out);
  }
  {
    auto f = open_out(dir / "cluster_truth.csv");
    write_cluster_truth_csv(f, out);
  }
  {
    auto f = open_out(dir / "boundary.geojson");
    write_geojson(f, {geo.boundary});
  }
  {
    auto f = open_out(dir / "areas.geojson");
    write_geojson(f, geo.areas);
  }
  auto f = open_out(dir / "resolved_config.ini");
  write_config(f, config);
  spdlog::info("simulated {} clusters into {}", out.frame.clusters.size(), dir.string());
}

void cmd_fit(const PipelineConfig& config) {
  const fs::path dir = config.output_dir();
  fs::create_directories(dir);
  const Geography geo = load_geography(config);
  const SurveyFrame frame = load_frame(config);
  const FitOptions options = fit_options(config);

  if (config.model.bym) {
    std::vector<DirectEstimate> est;
    const BymModel bm = build_bym_model(frame, geo, config, &est);
    {
      auto f = open_out(dir / "direct_estimates.csv");
      write_direct_estimates_csv(f, est);
    }
    {
      auto f = open_out(dir / "adjacency.csv");
      write_adjacency_csv(f, bm.graph, bm.area_ids);
    }
    const BymResult r = fit_bym(bm, options);
    write_theta_grid(dir / "bym_theta_grid.csv", r.fit);
    auto f = open_out(dir / "bym_areas.csv");
    f << "area_id,eta_mean,eta_sd,mean,sd,q025,q50,q975,icar_dropped\n";
    for (std::size_t k = 0; k < bm.area_ids.size(); ++k) {
      const auto& p = r.prevalence[k];
      f << bm.area_ids[k] << ',' << r.eta[k].mean << ',' << r.eta[k].sd << ',' << p.mean << ',' << p.sd << ','
        << p.q025 << ',' << p.q50 << ',' << p.q975 << ',' << (r.icar_dropped[k] ? 1 : 0) << '\n';
    }
    spdlog::info("BYM fit on {} areas written", bm.area_ids.size());
  }

  if (config.model.spde) {
    const SpdeSetup setup = build_spde_model(frame, geo.boundary, config.model);
    {
      auto v = open_out(dir / "mesh_vertices.csv");
      auto t = open_out(dir / "mesh_triangles.csv");
      write_mesh_csv(v, t, setup.mesh);
    }
    FitResult fit = hyper_grid(setup.model, setup.model->theta_prior_mean, options);
    fit.latent = marginals(fit);
    write_theta_grid(dir / "theta_grid.csv", fit);
    {
      auto f = open_out(dir / "latent_summary.csv");
      f << "coordinate,mean,sd,q025,q50,q975\n";
      const auto names = latent_names(*setup.model);
      for (std::size_t i = 0; i < fit.latent.size(); ++i) write_summary_row(f, names[i], fit.latent[i]);
    }
    {
      auto f = open_out(dir / "hyper_summary.csv");
      f << "name,mean,sd,center\n";
      for (int j = 0; j < setup.model->theta_dim(); ++j) {
        double m = 0.0, m2 = 0.0;
        for (const auto& p : fit.points) {
          m += p.weight * p.theta[j];
          m2 += p.weight * p.theta[j] * p.theta[j];
        }
        f << setup.model->theta_names[static_cast<std::size_t>(j)] << ',' << m << ','
          << std::sqrt(std::max(0.0, m2 - m * m)) << ',' << fit.center[j] << '\n';
      }
    }
    const FieldLayout layout = FieldLayout::from_model(*setup.model);
    const JointSamples samples =
        sample_joint(fit, static_cast<std::size_t>(config.model.num_samples), config.seed, config.threads);
    write_samples(dir, samples, layout);

    const std::vector<Point2> grid = evaluation_grid(geo.boundary, config);
    const Eigen::MatrixXd eta = surface_samples(samples, layout, project(setup.mesh, grid));
    auto f = open_out(dir / "field_median.csv");
    f << "x,y,median,mean,q025,q975\n";
    for (Eigen::Index j = 0; j < eta.cols(); ++j) {
      const std::vector<double> p = prevalence_column(eta, j);
      double mean = 0.0;
      for (double v : p) mean += v;
      mean /= static_cast<double>(p.size());
      f << grid[static_cast<std::size_t>(j)].x << ',' << grid[static_cast<std::size_t>(j)].y << ','
        << sample_quantile(p, 0.5) << ',' << mean << ',' << sample_quantile(p, 0.025) << ','
        << sample_quantile(p, 0.975) << '\n';
    }
    spdlog::info("SPDE fit ({} mesh vertices, {} grid points) written", setup.mesh.vertices.size(), fit.points.size());
  }
}

void cmd_areas(const PipelineConfig& config) {
  const fs::path dir = config.output_dir();
  const Geography geo = load_geography(config);
  const TriMesh mesh = load_mesh(dir);
  FieldLayout layout;
  const JointSamples samples = read_samples(dir, &layout);
  const AreaAverageResult r = area_averages(samples, layout, mesh, geo.areas,
                                            static_cast<std::size_t>(config.functional.points_per_area),
                                            derive_seed(config.seed, 101), config.threads);
  auto f = open_out(dir / "spde_areas.csv");
  f << "area_id,mean,sd,q025,q50,q975,num_points,covered\n";
  for (const auto& a : r.areas) {
    f << a.id << ',' << a.mean << ',' << a.sd << ',' << a.q025 << ',' << a.q50 << ',' << a.q975 << ','
      << a.num_points << ',' << (a.covered ? 1 : 0) << '\n';
  }
}

void cmd_excursions(const PipelineConfig& config) {
  const fs::path dir = config.output_dir();
  const Geography geo = load_geography(config);
  const TriMesh mesh = load_mesh(dir);
  FieldLayout layout;
  const JointSamples samples = read_samples(dir, &layout);
  const std::vector<Point2> grid = evaluation_grid(geo.boundary, config);
  const Eigen::MatrixXd eta = surface_samples(samples, layout, project(mesh, grid));
  const ExcursionResult ex = simultaneous_excursions(eta, config.functional.u, config.functional.alpha_level);
  auto f = open_out(dir / "excursions.csv");
  f << "x,y,mean,sd,exceed_prob,label\n";
  for (Eigen::Index j = 0; j < eta.cols(); ++j) {
    const std::vector<double> p = prevalence_column(eta, j);
    double m = 0.0, m2 = 0.0;
    for (double v : p) {
      m += v;
      m2 += v * v;
    }
    const double n = static_cast<double>(p.size());
    m /= n;
    const double sd = n > 1 ? std::sqrt(std::max(0.0, (m2 - n * m * m) / (n - 1.0))) : 0.0;
    const auto l = ex.labels[static_cast<std::size_t>(j)];
    f << grid[static_cast<std::size_t>(j)].x << ',' << grid[static_cast<std::size_t>(j)].y << ',' << m << ',' << sd << ','
      << ex.exceed_prob[j] << ','
      << (l == ExcursionLabel::kAbove ? "above" : l == ExcursionLabel::kBelow ? "below" : "indeterminate") << '\n';
  }
  spdlog::info("excursions: {} above, {} below, {} indeterminate (joint probabilities {:.3f}, {:.3f})",
               ex.count(ExcursionLabel::kAbove), ex.count(ExcursionLabel::kBelow),
               ex.count(ExcursionLabel::kIndeterminate), ex.joint_above, ex.joint_below);
}

void cmd_report(const PipelineConfig& config) {
  const fs::path dir = config.output_dir();
  std::vector<std::string> missing;
  for (const char* name : {"field_median.csv", "excursions.csv"}) {
    if (!fs::exists(dir / name)) missing.push_back((dir / name).string());
  }
  const bool have_spde = fs::exists(dir / "spde_areas.csv");
  const bool have_bym = fs::exists(dir / "bym_areas.csv");
  if (!have_spde && !have_bym) missing.push_back((dir / "spde_areas.csv").string() + " or " + (dir / "bym_areas.csv").string());
  if (!missing.empty()) {
    std::string msg = "report is missing inputs:";
    for (const auto& m : missing) msg += " " + m;
    throw DataError(msg);
  }
  const Geography geo = load_geography(config);
  const double spacing = grid_spacing(config);
  constexpr int kPixels = 400;
  const render::Frame frame = render::Frame::fit(geo.boundary.bounds(), kPixels);

  auto lattice = [&](const fs::path& path, const std::string& value_col, std::vector<Point2>& pts,
                     std::vector<double>& vals) {
    const Table t = read_table(path);
    const auto cx = t.column("x", path), cy = t.column("y", path), cv = t.column(value_col, path);
    for (const auto& r : t.rows) {
      pts.push_back({number(r[cx], path), number(r[cy], path)});
      vals.push_back(number(r[cv], path));
    }
  };
  {
    std::vector<Point2> pts;
    std::vector<double> vals;
    lattice(dir / "field_median.csv", "median", pts, vals);
    auto svg = open_out(dir / "field_median.svg");
    render::write_lattice_svg(svg, pts, vals, spacing, &geo.boundary, "Posterior median prevalence");
    const auto [lo, hi] = std::minmax_element(vals.begin(), vals.end());
    auto pgm = open_out(dir / "field_median.pgm", true);
    render::write_pgm(pgm, render::rasterize_points(frame, pts, vals, spacing), *lo, *hi);
  }
  {
    const fs::path path = dir / "excursions.csv";
    const Table t = read_table(path);
    const auto cx = t.column("x", path), cy = t.column("y", path), cl = t.column("label", path);
    std::vector<Point2> pts;
    std::vector<int> labels;
    std::vector<double> as_double;
    for (const auto& r : t.rows) {
      pts.push_back({number(r[cx], path), number(r[cy], path)});
      labels.push_back(r[cl] == "above" ? 1 : r[cl] == "below" ? -1 : 0);
      as_double.push_back(labels.back());
    }
    auto svg = open_out(dir / "excursions.svg");
    render::write_excursion_svg(svg, pts, labels, spacing, &geo.boundary, "Excursion regions");
    auto pgm = open_out(dir / "excursions.pgm", true);
    render::write_label_pgm(pgm, render::rasterize_points(frame, pts, as_double, spacing));
  }
  auto choropleth = [&](const fs::path& path, const std::string& col, const std::string& stem, const std::string& title) {
    const Table t = read_table(path);
    const auto ci = t.column("area_id", path), cv = t.column(col, path);
    std::map<std::string, double> by_id;
    for (const auto& r : t.rows) by_id[r[ci]] = number(r[cv], path);
    std::vector<double> vals;
    for (const auto& a : geo.areas) {
      const auto it = by_id.find(a.id);
      vals.push_back(it == by_id.end() ? std::numeric_limits<double>::quiet_NaN() : it->second);
    }
    auto svg = open_out(dir / (stem + ".svg"));
    render::write_choropleth_svg(svg, geo.areas, vals, title);
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (double v : vals) {
      if (std::isfinite(v)) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
    }
    auto pgm = open_out(dir / (stem + ".pgm"), true);
    render::write_pgm(pgm, render::rasterize_areas(frame, geo.areas, vals), lo, hi);
  };
  if (fs::exists(dir / "area_truth.csv")) choropleth(dir / "area_truth.csv", "truth", "areas_truth", "True area prevalence");
  if (have_spde) choropleth(dir / "spde_areas.csv", "mean", "areas_spde", "SPDE area prevalence");
  if (have_bym) choropleth(dir / "bym_areas.csv", "mean", "areas_bym", "Smoothed direct (BYM) area prevalence");
}

}  // namespace geoprev::pipeline
