#include "geoprev/functionals.hpp"

#include "geoprev/error.hpp"
#include "geoprev/parallel.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace geoprev {

namespace {

double expit(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double logit(double p) { return std::log(p) - std::log1p(-p); }

// Ear clipping of a simple counter-clockwise ring.
void clip_ears(Ring ring, std::vector<std::array<Point2, 3>>& out) {
  std::vector<int> idx(ring.size());
  std::iota(idx.begin(), idx.end(), 0);
  auto inside_triangle = [](Point2 p, Point2 a, Point2 b, Point2 c) {
    return orient2d(a, b, p) >= 0.0 && orient2d(b, c, p) >= 0.0 && orient2d(c, a, p) >= 0.0;
  };
  std::size_t guard = 0;
  while (idx.size() > 3 && guard < 4 * ring.size() * ring.size()) {
    bool clipped = false;
    const std::size_t n = idx.size();
    for (std::size_t i = 0; i < n; ++i) {
      const int ia = idx[(i + n - 1) % n], ib = idx[i], ic = idx[(i + 1) % n];
      const Point2 a = ring[ia], b = ring[ib], c = ring[ic];
      if (orient2d(a, b, c) <= 0.0) continue;
      bool ear = true;
      for (int j : idx) {
        if (j == ia || j == ib || j == ic) continue;
        if (inside_triangle(ring[j], a, b, c) && !(ring[j] == a || ring[j] == b || ring[j] == c)) {
          ear = false;
          break;
        }
      }
      if (!ear) continue;
      out.push_back({a, b, c});
      idx.erase(idx.begin() + static_cast<std::ptrdiff_t>(i));
      clipped = true;
      break;
    }
    ++guard;
    if (!clipped) break;  // degenerate remainder; drop it
  }
  if (idx.size() == 3) {
    const Point2 a = ring[idx[0]], b = ring[idx[1]], c = ring[idx[2]];
    if (orient2d(a, b, c) > 0.0) out.push_back({a, b, c});
  }
}

std::vector<Point2> sample_by_triangles(const Polygon& polygon, std::size_t n, std::mt19937_64& rng) {
  const auto tris = triangulate_polygon(polygon);
  if (tris.empty()) throw GeometryError("polygon '" + polygon.id + "' could not be triangulated for sampling");
  std::vector<double> areas;
  for (const auto& t : tris) areas.push_back(0.5 * orient2d(t[0], t[1], t[2]));
  std::discrete_distribution<std::size_t> pick(areas.begin(), areas.end());
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<Point2> out;
  out.reserve(n);
  std::size_t attempts = 0;
  while (out.size() < n) {
    const auto& t = tris[pick(rng)];
    double r1 = unif(rng), r2 = unif(rng);
    if (r1 + r2 > 1.0) {
      r1 = 1.0 - r1;
      r2 = 1.0 - r2;
    }
    const Point2 p = t[0] + r1 * (t[1] - t[0]) + r2 * (t[2] - t[0]);
    // Holes are not cut out of the triangulation; reject points inside them.
    if (point_in_area(p, polygon)) out.push_back(p);
    if (++attempts > 1000 * n + 1000) throw GeometryError("sampling in polygon '" + polygon.id + "' stalled");
  }
  return out;
}

}  // namespace

FieldLayout FieldLayout::from_model(const LatentModel& model, const std::string& intercept, const std::string& field) {
  FieldLayout l;
  const LatentBlock& b0 = model.block(intercept);
  const LatentBlock& f = model.block(field);
  if (b0.kind != BlockKind::kFixed || b0.size != 1) throw DataError("block '" + intercept + "' is not a scalar fixed effect");
  if (f.kind != BlockKind::kSpde) throw DataError("block '" + field + "' is not an SPDE field");
  l.intercept = b0.offset;
  l.field_offset = f.offset;
  l.field_size = f.size;
  return l;
}

Eigen::MatrixXd surface_samples(const JointSamples& samples, const FieldLayout& layout, const Projector& projector) {
  if (projector.weights.cols() != layout.field_size) throw DataError("projector does not match the field size");
  const Eigen::MatrixXd field_t = samples.values.middleCols(layout.field_offset, layout.field_size).transpose();
  Eigen::MatrixXd eta = (projector.weights * field_t).transpose();
  eta.colwise() += samples.values.col(layout.intercept);
  return eta;
}

std::vector<std::array<Point2, 3>> triangulate_polygon(const Polygon& polygon) {
  std::vector<std::array<Point2, 3>> out;
  for (const auto& ring : polygon.rings) {
    if (ring.size() < 3) continue;
    Ring r = ring;
    if (ring_signed_area(r) < 0.0) continue;  // holes
    clip_ears(std::move(r), out);
  }
  return out;
}

std::vector<Point2> sample_in_polygon(const Polygon& polygon, std::size_t n, std::mt19937_64& rng) {
  const BoundingBox box = polygon.bounds();
  const double box_area = box.width() * box.height();
  const double area = polygon.area();
  if (!(area > 0.0)) throw GeometryError("polygon '" + polygon.id + "' has no area to sample");
  if (area < 1e-6 * box_area) return sample_by_triangles(polygon, n, rng);
  std::uniform_real_distribution<double> ux(box.lo.x, box.hi.x), uy(box.lo.y, box.hi.y);
  std::vector<Point2> out;
  out.reserve(n);
  const std::size_t max_attempts = 100000 + 1000 * n;
  for (std::size_t attempts = 0; out.size() < n; ++attempts) {
    if (attempts > max_attempts) return sample_by_triangles(polygon, n, rng);
    const double x = ux(rng);
    const double y = uy(rng);
    const Point2 p{x, y};
    if (point_in_area(p, polygon)) out.push_back(p);
  }
  return out;
}

double sample_quantile(std::vector<double> values, double p) {
  if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(values.begin(), values.end());
  const double h = (static_cast<double>(values.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

AreaAverageResult area_averages(const JointSamples& samples, const FieldLayout& layout, const TriMesh& mesh,
                                const std::vector<Polygon>& areas, std::size_t points_per_area, std::uint64_t seed,
                                int threads) {
  if (points_per_area == 0) throw DataError("points_per_area must be at least 1");
  const MeshLocator locator(mesh);
  const Eigen::Index ns = samples.values.rows();
  AreaAverageResult out;
  out.areas.resize(areas.size());
  out.draws = Eigen::MatrixXd::Constant(ns, static_cast<Eigen::Index>(areas.size()),
                                        std::numeric_limits<double>::quiet_NaN());
  parallel_for(areas.size(), threads > 0 ? threads : default_thread_count(), [&](std::size_t k) {
    std::mt19937_64 rng(derive_seed(seed, k));
    AreaSummary& s = out.areas[k];
    s.id = areas[k].id;
    std::vector<Point2> pts = sample_in_polygon(areas[k], points_per_area, rng);
    const Projector proj = project(locator, mesh.vertices.size(), pts);
    std::vector<Point2> kept;
    for (std::size_t j = 0; j < pts.size(); ++j) {
      if (!proj.outside[j]) kept.push_back(pts[j]);
    }
    s.num_points = static_cast<int>(kept.size());
    if (kept.empty()) {
      s.covered = false;
      return;
    }
    const Projector inside = kept.size() == pts.size() ? proj : project(locator, mesh.vertices.size(), kept);
    const Eigen::MatrixXd eta = surface_samples(samples, layout, inside);
    const Eigen::VectorXd t = eta.unaryExpr([](double v) { return expit(v); }).rowwise().mean();
    out.draws.col(static_cast<Eigen::Index>(k)) = t;
    const std::vector<double> v(t.data(), t.data() + t.size());
    s.mean = t.mean();
    s.sd = ns > 1 ? std::sqrt((t.array() - s.mean).square().sum() / static_cast<double>(ns - 1)) : 0.0;
    s.q025 = sample_quantile(v, 0.025);
    s.q50 = sample_quantile(v, 0.5);
    s.q975 = sample_quantile(v, 0.975);
  });
  for (const auto& s : out.areas) {
    if (!s.covered) spdlog::warn("area '{}' has no integration points inside the mesh; excluded", s.id);
  }
  return out;
}

Eigen::VectorXd pointwise_exceedance(const Eigen::MatrixXd& eta, double u) {
  if (!(u >= 0.0 && u <= 1.0)) throw DataError("exceedance threshold must lie in [0, 1]");
  const double cut = logit(u);
  Eigen::VectorXd p(eta.cols());
  const double ns = static_cast<double>(eta.rows());
  for (Eigen::Index j = 0; j < eta.cols(); ++j) p[j] = static_cast<double>((eta.col(j).array() > cut).count()) / ns;
  return p;
}

std::size_t ExcursionResult::count(ExcursionLabel label) const {
  return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), label));
}

ExcursionResult simultaneous_excursions(const Eigen::MatrixXd& eta, double u, double alpha_level) {
  if (!(alpha_level > 0.0 && alpha_level <= 0.5)) throw DataError("alpha_level must lie in (0, 0.5]");
  if (!(u > 0.0 && u < 1.0)) throw DataError("excursion threshold must lie in (0, 1)");
  const Eigen::Index ns = eta.rows();
  const Eigen::Index np = eta.cols();
  const double cut = logit(u);
  const double level = 1.0 - alpha_level;
  const auto need = static_cast<Eigen::Index>(std::ceil(level * static_cast<double>(ns) - 1e-9));

  ExcursionResult r;
  r.u = u;
  r.alpha_level = alpha_level;
  r.exceed_prob = pointwise_exceedance(eta, u);
  r.labels.assign(static_cast<std::size_t>(np), ExcursionLabel::kIndeterminate);
  Eigen::VectorXd below_prob(np);
  for (Eigen::Index j = 0; j < np; ++j) below_prob[j] = static_cast<double>((eta.col(j).array() < cut).count()) / ns;

  auto grow = [&](const Eigen::VectorXd& prob, bool above, double* joint) {
    std::vector<Eigen::Index> order(static_cast<std::size_t>(np));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return prob[a] > prob[b]; });
    std::vector<char> alive(static_cast<std::size_t>(ns), 1);
    Eigen::Index alive_count = ns;
    for (Eigen::Index j : order) {
      if (r.labels[static_cast<std::size_t>(j)] != ExcursionLabel::kIndeterminate) continue;
      Eigen::Index next = 0;
      for (Eigen::Index s = 0; s < ns; ++s) {
        if (alive[static_cast<std::size_t>(s)] && (above ? eta(s, j) > cut : eta(s, j) < cut)) ++next;
      }
      if (next < need) break;
      for (Eigen::Index s = 0; s < ns; ++s) {
        if (alive[static_cast<std::size_t>(s)] && !(above ? eta(s, j) > cut : eta(s, j) < cut)) {
          alive[static_cast<std::size_t>(s)] = 0;
        }
      }
      alive_count = next;
      r.labels[static_cast<std::size_t>(j)] = above ? ExcursionLabel::kAbove : ExcursionLabel::kBelow;
    }
    *joint = static_cast<double>(alive_count) / static_cast<double>(ns);
  };
  grow(r.exceed_prob, true, &r.joint_above);
  grow(below_prob, false, &r.joint_below);
  return r;
}

std::vector<Point2> lattice_in_polygon(const Polygon& polygon, double spacing) {
  if (!(spacing > 0.0)) throw DataError("lattice spacing must be positive");
  const BoundingBox box = polygon.bounds();
  const auto nx = static_cast<long>(std::floor(box.width() / spacing)) + 1;
  const auto ny = static_cast<long>(std::floor(box.height() / spacing)) + 1;
  const double x0 = box.lo.x + 0.5 * (box.width() - static_cast<double>(nx - 1) * spacing);
  const double y0 = box.lo.y + 0.5 * (box.height() - static_cast<double>(ny - 1) * spacing);
  std::vector<Point2> out;
  for (long j = 0; j < ny; ++j) {
    for (long i = 0; i < nx; ++i) {
      const Point2 p{x0 + static_cast<double>(i) * spacing, y0 + static_cast<double>(j) * spacing};
      if (point_in_area(p, polygon)) out.push_back(p);
    }
  }
  return out;
}

}  // namespace geoprev
