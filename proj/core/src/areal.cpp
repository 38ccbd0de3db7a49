#include "geoprev/areal.hpp"

#include "geoprev/error.hpp"
#include "geoprev/geo_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <ostream>
#include <unordered_map>

namespace geoprev {

namespace {

constexpr double kZ975 = 1.959963984540054;

double expit(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void label_components(AdjacencyGraph& g) {
  g.component.assign(g.size(), -1);
  g.num_components = 0;
  std::vector<int> stack;
  for (std::size_t s = 0; s < g.size(); ++s) {
    if (g.component[s] >= 0) continue;
    const int label = g.num_components++;
    g.component[s] = label;
    stack.push_back(static_cast<int>(s));
    while (!stack.empty()) {
      const int v = stack.back();
      stack.pop_back();
      for (int u : g.neighbors[static_cast<std::size_t>(v)]) {
        if (g.component[static_cast<std::size_t>(u)] < 0) {
          g.component[static_cast<std::size_t>(u)] = label;
          stack.push_back(u);
        }
      }
    }
  }
}

}  // namespace

AdjacencyGraph adjacency_from_edges(std::size_t num_areas, const std::vector<std::pair<int, int>>& edges) {
  AdjacencyGraph g;
  g.neighbors.resize(num_areas);
  for (auto [a, b] : edges) {
    if (a < 0 || b < 0 || static_cast<std::size_t>(a) >= num_areas || static_cast<std::size_t>(b) >= num_areas) {
      throw DataError("adjacency edge (" + std::to_string(a) + ", " + std::to_string(b) + ") is out of range");
    }
    if (a == b) throw DataError("adjacency edge is a self-loop at area " + std::to_string(a));
    g.neighbors[static_cast<std::size_t>(a)].push_back(b);
    g.neighbors[static_cast<std::size_t>(b)].push_back(a);
  }
  for (auto& n : g.neighbors) {
    std::sort(n.begin(), n.end());
    n.erase(std::unique(n.begin(), n.end()), n.end());
  }
  label_components(g);
  return g;
}

AdjacencyGraph adjacency_from_polygons(const std::vector<Polygon>& areas, double tolerance) {
  struct Vertex {
    Point2 p;
    int area;
  };
  std::vector<Vertex> verts;
  for (std::size_t k = 0; k < areas.size(); ++k) {
    for (const auto& ring : areas[k].rings) {
      for (const auto& p : ring) verts.push_back({p, static_cast<int>(k)});
    }
  }
  std::sort(verts.begin(), verts.end(), [](const Vertex& a, const Vertex& b) { return a.p.x < b.p.x; });
  std::map<std::pair<int, int>, int> shared;
  for (std::size_t i = 0; i < verts.size(); ++i) {
    for (std::size_t j = i + 1; j < verts.size() && verts[j].p.x - verts[i].p.x <= tolerance; ++j) {
      if (verts[i].area == verts[j].area || std::abs(verts[j].p.y - verts[i].p.y) > tolerance) continue;
      ++shared[std::minmax(verts[i].area, verts[j].area)];
    }
  }
  std::vector<std::pair<int, int>> edges;
  for (const auto& [pair, count] : shared) {
    if (count >= 2) edges.push_back(pair);
  }
  return adjacency_from_edges(areas.size(), edges);
}

AdjacencyGraph read_adjacency_csv(std::istream& in, const std::vector<std::string>& area_ids) {
  std::unordered_map<std::string, int> index;
  for (std::size_t i = 0; i < area_ids.size(); ++i) index[area_ids[i]] = static_cast<int>(i);
  std::string line;
  if (!std::getline(in, line)) throw DataError("adjacency CSV is empty");
  std::vector<std::pair<int, int>> edges;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto f = split_csv_line(line);
    if (f.size() < 2) throw DataError("adjacency CSV line " + std::to_string(lineno) + " needs two fields");
    const auto a = index.find(f[0]);
    const auto b = index.find(f[1]);
    if (a == index.end() || b == index.end()) {
      throw DataError("adjacency CSV line " + std::to_string(lineno) + " names an unknown area");
    }
    edges.emplace_back(a->second, b->second);
  }
  return adjacency_from_edges(area_ids.size(), edges);
}

AdjacencyGraph read_adjacency_csv(const std::filesystem::path& path, const std::vector<std::string>& area_ids) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open adjacency file " + path.string());
  return read_adjacency_csv(in, area_ids);
}

void write_adjacency_csv(std::ostream& out, const AdjacencyGraph& graph, const std::vector<std::string>& area_ids) {
  out << "area_i,area_j\n";
  for (std::size_t i = 0; i < graph.size(); ++i) {
    for (int j : graph.neighbors[i]) {
      if (static_cast<std::size_t>(j) > i) out << area_ids[i] << ',' << area_ids[static_cast<std::size_t>(j)] << '\n';
    }
  }
}

SparseMatrix icar_precision(const AdjacencyGraph& graph) {
  const auto k = static_cast<Eigen::Index>(graph.size());
  std::vector<Eigen::Triplet<double>> t;
  for (std::size_t i = 0; i < graph.size(); ++i) {
    const int ii = static_cast<int>(i);
    t.emplace_back(ii, ii, static_cast<double>(graph.neighbors[i].size()));
    for (int j : graph.neighbors[i]) t.emplace_back(ii, j, -1.0);
  }
  SparseMatrix q(k, k);
  q.setFromTriplets(t.begin(), t.end());
  return q;
}

BymModel make_bym_model(const std::vector<std::string>& area_ids, const AdjacencyGraph& graph,
                        const std::vector<DirectEstimate>& estimates) {
  if (graph.size() != area_ids.size()) throw DataError("adjacency graph size does not match the area list");
  std::unordered_map<std::string, int> index;
  for (std::size_t i = 0; i < area_ids.size(); ++i) index[area_ids[i]] = static_cast<int>(i);
  BymModel m;
  m.area_ids = area_ids;
  m.graph = graph;
  m.y.resize(static_cast<Eigen::Index>(estimates.size()));
  m.variance.resize(static_cast<Eigen::Index>(estimates.size()));
  for (std::size_t i = 0; i < estimates.size(); ++i) {
    const auto it = index.find(estimates[i].area_id);
    if (it == index.end()) throw DataError("direct estimate for unknown area '" + estimates[i].area_id + "'");
    if (!(estimates[i].v_logit > 0.0)) throw DataError("area '" + estimates[i].area_id + "' has non-positive variance");
    m.observed_area.push_back(it->second);
    m.y[static_cast<Eigen::Index>(i)] = estimates[i].y_logit;
    m.variance[static_cast<Eigen::Index>(i)] = estimates[i].v_logit;
  }
  return m;
}

namespace {

// Area index -> position within the ICAR block (-1 for singletons).
std::vector<int> icar_positions(const AdjacencyGraph& g, int* count) {
  std::vector<int> pos(g.size(), -1);
  int n = 0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (!g.is_singleton(static_cast<int>(i))) pos[i] = n++;
  }
  *count = n;
  return pos;
}

}  // namespace

std::shared_ptr<const LatentModel> bym_latent_model(const BymModel& model) {
  const auto k = static_cast<int>(model.area_ids.size());
  const auto n = model.y.size();
  if (model.variance.size() != n || static_cast<Eigen::Index>(model.observed_area.size()) != n) {
    throw DataError("BYM observation vectors disagree in length");
  }
  LatentModelBuilder b(ObservationStage::gaussian(model.y, model.variance));
  b.add_intercept();

  int ns = 0;
  const std::vector<int> pos = icar_positions(model.graph, &ns);
  if (ns > 0) {
    std::vector<std::pair<int, int>> sub_edges;
    std::vector<int> sub_component;
    std::map<int, int> relabel;
    for (int i = 0; i < k; ++i) {
      if (pos[static_cast<std::size_t>(i)] < 0) continue;
      const int c = model.graph.component[static_cast<std::size_t>(i)];
      sub_component.push_back(relabel.try_emplace(c, static_cast<int>(relabel.size())).first->second);
      for (int j : model.graph.neighbors[static_cast<std::size_t>(i)]) {
        if (j > i) sub_edges.emplace_back(pos[static_cast<std::size_t>(i)], pos[static_cast<std::size_t>(j)]);
      }
    }
    const AdjacencyGraph sub = adjacency_from_edges(static_cast<std::size_t>(ns), sub_edges);
    std::vector<Eigen::Triplet<double>> t;
    for (Eigen::Index r = 0; r < n; ++r) {
      const int p = pos[static_cast<std::size_t>(model.observed_area[static_cast<std::size_t>(r)])];
      if (p >= 0) t.emplace_back(static_cast<int>(r), p, 1.0);
    }
    SparseMatrix map(n, ns);
    map.setFromTriplets(t.begin(), t.end());
    b.add_icar("icar", icar_precision(sub), sub_component, map, model.initial_log_precision_icar);
  }

  std::vector<Eigen::Triplet<double>> t;
  for (Eigen::Index r = 0; r < n; ++r) t.emplace_back(static_cast<int>(r), model.observed_area[static_cast<std::size_t>(r)], 1.0);
  SparseMatrix map(n, k);
  map.setFromTriplets(t.begin(), t.end());
  b.add_iid("iid", map, model.initial_log_precision_iid);
  return std::make_shared<const LatentModel>(b.build());
}

SparseMatrix bym_eta_rows(const BymModel& model, const LatentModel& latent) {
  const auto k = static_cast<int>(model.area_ids.size());
  int ns = 0;
  const std::vector<int> pos = icar_positions(model.graph, &ns);
  const int intercept = latent.block("intercept").offset;
  const int iid = latent.block("iid").offset;
  const int icar = ns > 0 ? latent.block("icar").offset : -1;
  std::vector<Eigen::Triplet<double>> t;
  for (int i = 0; i < k; ++i) {
    t.emplace_back(i, intercept, 1.0);
    t.emplace_back(i, iid + i, 1.0);
    if (pos[static_cast<std::size_t>(i)] >= 0) t.emplace_back(i, icar + pos[static_cast<std::size_t>(i)], 1.0);
  }
  SparseMatrix rows(k, latent.latent_dim);
  rows.setFromTriplets(t.begin(), t.end());
  return rows;
}

PrevalenceSummary prevalence_summary(std::span<const double> weights, std::span<const double> means,
                                     std::span<const double> sds) {
  // Trapezoid rule on a standard-normal grid; spectrally accurate for smooth integrands.
  constexpr int kNodes = 161;
  constexpr double kHalfWidth = 8.0;
  const double h = 2.0 * kHalfWidth / (kNodes - 1);
  double m1 = 0.0, m2 = 0.0, wsum = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (weights[i] <= 0.0) continue;
    double e1 = 0.0, e2 = 0.0, norm = 0.0;
    for (int q = 0; q < kNodes; ++q) {
      const double z = -kHalfWidth + q * h;
      const double phi = std::exp(-0.5 * z * z);
      const double p = expit(means[i] + sds[i] * z);
      norm += phi;
      e1 += phi * p;
      e2 += phi * p * p;
    }
    m1 += weights[i] * e1 / norm;
    m2 += weights[i] * e2 / norm;
    wsum += weights[i];
  }
  PrevalenceSummary s;
  s.mean = m1 / wsum;
  s.sd = std::sqrt(std::max(0.0, m2 / wsum - s.mean * s.mean));
  if (weights.size() == 1) {
    s.q025 = expit(means[0] - kZ975 * sds[0]);
    s.q50 = expit(means[0]);
    s.q975 = expit(means[0] + kZ975 * sds[0]);
  } else {
    s.q025 = expit(mixture_quantile(weights, means, sds, 0.025));
    s.q50 = expit(mixture_quantile(weights, means, sds, 0.5));
    s.q975 = expit(mixture_quantile(weights, means, sds, 0.975));
  }
  return s;
}

BymResult fit_bym(const BymModel& model, const FitOptions& options) {
  BymResult out;
  auto latent = bym_latent_model(model);
  out.fit = fit(latent, latent->theta_prior_mean, options);
  const SparseMatrix rows = bym_eta_rows(model, *latent);
  const CombinationMoments moments = linear_combination_moments(out.fit, rows);

  std::vector<double> w;
  std::vector<Eigen::Index> active;
  for (std::size_t i = 0; i < out.fit.points.size(); ++i) {
    if (out.fit.points[i].weight > 0.0) {
      w.push_back(out.fit.points[i].weight);
      active.push_back(static_cast<Eigen::Index>(i));
    }
  }
  std::vector<double> mu(active.size()), sd(active.size());
  for (Eigen::Index k = 0; k < rows.rows(); ++k) {
    for (std::size_t a = 0; a < active.size(); ++a) {
      mu[a] = moments.mean(active[a], k);
      sd[a] = moments.sd(active[a], k);
    }
    out.eta.push_back(mixture_summary(w, mu, sd));
    out.prevalence.push_back(prevalence_summary(w, mu, sd));
    out.icar_dropped.push_back(model.graph.is_singleton(static_cast<int>(k)));
  }
  return out;
}

}  // namespace geoprev
