#include "geoprev/geometry.hpp"

#include "geoprev/error.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <set>
#include <unordered_map>

namespace geoprev {

namespace {

bool on_segment(Point2 p, Point2 a, Point2 b, double tol) {
  const Point2 ab = b - a;
  const double len = norm(ab);
  if (len == 0.0) return distance(p, a) <= tol;
  if (std::abs(cross(ab, p - a)) > tol * len) return false;
  const double t = dot(p - a, ab);
  return t >= -tol * len && t <= len * len + tol * len;
}

double segment_distance(Point2 p, Point2 a, Point2 b) {
  const Point2 ab = b - a;
  const double l2 = dot(ab, ab);
  if (l2 == 0.0) return distance(p, a);
  const double t = std::clamp(dot(p - a, ab) / l2, 0.0, 1.0);
  return distance(p, a + t * ab);
}

// Crossing parity of a horizontal ray from p against one ring.
bool ring_crossing_parity(Point2 p, const Ring& ring) {
  bool inside = false;
  const std::size_t n = ring.size();
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const Point2 a = ring[i];
    const Point2 b = ring[j];
    if ((a.y > p.y) != (b.y > p.y)) {
      const double x = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
      if (p.x < x) inside = !inside;
    }
  }
  return inside;
}

double polygon_tolerance(const Polygon& polygon) {
  const BoundingBox b = polygon.bounds();
  return 1e-12 * std::max(1.0, b.diagonal());
}

}  // namespace

double ring_signed_area(const Ring& ring) {
  double s = 0.0;
  const std::size_t n = ring.size();
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) s += cross(ring[j], ring[i]);
  return 0.5 * s;
}

double Polygon::area() const {
  double s = 0.0;
  for (const auto& r : rings) s += ring_signed_area(r);
  return s;
}

BoundingBox Polygon::bounds() const {
  constexpr double inf = std::numeric_limits<double>::infinity();
  BoundingBox b{{inf, inf}, {-inf, -inf}};
  for (const auto& r : rings) {
    for (Point2 p : r) {
      b.lo.x = std::min(b.lo.x, p.x);
      b.lo.y = std::min(b.lo.y, p.y);
      b.hi.x = std::max(b.hi.x, p.x);
      b.hi.y = std::max(b.hi.y, p.y);
    }
  }
  return b;
}

Point2 Polygon::centroid() const {
  double a = 0.0, cx = 0.0, cy = 0.0;
  for (const auto& r : rings) {
    const std::size_t n = r.size();
    for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
      const double c = cross(r[j], r[i]);
      a += c;
      cx += (r[j].x + r[i].x) * c;
      cy += (r[j].y + r[i].y) * c;
    }
  }
  if (a == 0.0) return bounds().lo;
  return {cx / (3.0 * a), cy / (3.0 * a)};
}

void Polygon::normalize() {
  for (auto& r : rings) {
    for (Point2 p : r) {
      if (!is_finite(p)) throw GeometryError("polygon '" + id + "' has non-finite coordinates");
    }
    Ring cleaned;
    cleaned.reserve(r.size());
    for (Point2 p : r) {
      if (cleaned.empty() || !(cleaned.back() == p)) cleaned.push_back(p);
    }
    while (cleaned.size() > 1 && cleaned.front() == cleaned.back()) cleaned.pop_back();
    r = std::move(cleaned);
  }
  std::erase_if(rings, [](const Ring& r) { return r.size() < 3 || ring_signed_area(r) == 0.0; });
  if (rings.empty()) throw GeometryError("polygon '" + id + "' has no ring with positive area");

  for (std::size_t i = 0; i < rings.size(); ++i) {
    int depth = 0;
    for (std::size_t j = 0; j < rings.size(); ++j) {
      if (i != j && ring_crossing_parity(rings[i].front(), rings[j])) ++depth;
    }
    const bool want_ccw = depth % 2 == 0;
    if ((ring_signed_area(rings[i]) > 0.0) != want_ccw) std::reverse(rings[i].begin(), rings[i].end());
  }
  if (!(area() > 0.0)) throw GeometryError("polygon '" + id + "' has zero area");
}

bool point_in_area(Point2 p, const Polygon& polygon) {
  const double tol = polygon_tolerance(polygon);
  bool inside = false;
  for (const auto& r : polygon.rings) {
    const std::size_t n = r.size();
    for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
      if (on_segment(p, r[j], r[i], tol)) return true;
    }
    if (ring_crossing_parity(p, r)) inside = !inside;
  }
  return inside;
}

double distance_to_boundary(Point2 p, const Polygon& polygon) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& r : polygon.rings) {
    const std::size_t n = r.size();
    for (std::size_t i = 0, j = n - 1; i < n; j = i++) best = std::min(best, segment_distance(p, r[j], r[i]));
  }
  return best;
}

Polygon clip_to_convex(const Polygon& subject, const Ring& convex_ccw) {
  Polygon out{subject.id, {}};
  const std::size_t m = convex_ccw.size();
  for (const auto& ring : subject.rings) {
    Ring current = ring;
    for (std::size_t e = 0; e < m && !current.empty(); ++e) {
      const Point2 a = convex_ccw[e];
      const Point2 b = convex_ccw[(e + 1) % m];
      auto side = [&](Point2 p) { return orient2d(a, b, p); };
      Ring next;
      const std::size_t n = current.size();
      for (std::size_t i = 0; i < n; ++i) {
        const Point2 cur = current[i];
        const Point2 prev = current[(i + n - 1) % n];
        const double sc = side(cur);
        const double sp = side(prev);
        if (sc >= 0.0) {
          if (sp < 0.0) next.push_back(prev + (sp / (sp - sc)) * (cur - prev));
          next.push_back(cur);
        } else if (sp >= 0.0) {
          next.push_back(prev + (sp / (sp - sc)) * (cur - prev));
        }
      }
      current = std::move(next);
    }
    Ring cleaned;
    for (Point2 p : current) {
      if (cleaned.empty() || distance(cleaned.back(), p) > 1e-13) cleaned.push_back(p);
    }
    while (cleaned.size() > 1 && distance(cleaned.front(), cleaned.back()) <= 1e-13) cleaned.pop_back();
    if (cleaned.size() >= 3 && std::abs(ring_signed_area(cleaned)) > 0.0) out.rings.push_back(std::move(cleaned));
  }
  return out;
}

double TriMesh::triangle_area(std::size_t t) const {
  const auto& tri = triangles[t];
  return 0.5 * orient2d(vertices[tri[0]], vertices[tri[1]], vertices[tri[2]]);
}

double TriMesh::total_area() const {
  double s = 0.0;
  for (std::size_t t = 0; t < triangles.size(); ++t) s += triangle_area(t);
  return s;
}

double min_angle_deg(const TriMesh& mesh, std::size_t t) {
  const auto& tri = mesh.triangles[t];
  double best = 180.0;
  for (int i = 0; i < 3; ++i) {
    const Point2 p = mesh.vertices[tri[i]];
    const Point2 u = mesh.vertices[tri[(i + 1) % 3]] - p;
    const Point2 v = mesh.vertices[tri[(i + 2) % 3]] - p;
    const double ang = std::atan2(std::abs(cross(u, v)), dot(u, v)) * 180.0 / M_PI;
    best = std::min(best, ang);
  }
  return best;
}

void validate_mesh(const TriMesh& mesh) {
  const std::size_t nv = mesh.num_vertices();
  if (mesh.interior.size() != nv) throw GeometryError("mesh interior flags do not match vertex count");
  std::vector<int> used(nv, 0);
  std::unordered_map<std::uint64_t, int> edge_count;
  for (std::size_t t = 0; t < mesh.num_triangles(); ++t) {
    const auto& tri = mesh.triangles[t];
    for (int v : tri) {
      if (v < 0 || static_cast<std::size_t>(v) >= nv) throw GeometryError("triangle references missing vertex");
      used[v] = 1;
    }
    if (!(mesh.triangle_area(t) > 0.0)) {
      throw GeometryError("triangle " + std::to_string(t) + " has non-positive signed area");
    }
    for (int i = 0; i < 3; ++i) {
      const auto a = static_cast<std::uint64_t>(std::min(tri[i], tri[(i + 1) % 3]));
      const auto b = static_cast<std::uint64_t>(std::max(tri[i], tri[(i + 1) % 3]));
      if (++edge_count[(a << 32) | b] > 2) throw GeometryError("edge shared by more than two triangles");
    }
  }
  if (std::find(used.begin(), used.end(), 0) != used.end()) throw GeometryError("mesh has isolated vertices");

  // Duplicate vertices: sort lexicographically and compare neighbours within a sweep window.
  std::vector<std::size_t> order(nv);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return mesh.vertices[a].x < mesh.vertices[b].x;
  });
  for (std::size_t i = 0; i < nv; ++i) {
    for (std::size_t j = i + 1; j < nv; ++j) {
      const Point2 a = mesh.vertices[order[i]];
      const Point2 b = mesh.vertices[order[j]];
      if (b.x - a.x > 1e-9) break;
      if (distance(a, b) <= 1e-9) throw GeometryError("mesh has duplicate vertices");
    }
  }

  // Connectivity through shared vertices.
  std::vector<int> parent(nv);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](int x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  for (const auto& tri : mesh.triangles) {
    parent[find(tri[1])] = find(tri[0]);
    parent[find(tri[2])] = find(tri[0]);
  }
  const int root = nv ? find(0) : 0;
  for (std::size_t v = 0; v < nv; ++v) {
    if (find(static_cast<int>(v)) != root) throw GeometryError("mesh is not a single connected component");
  }
}

FemMatrices fem_matrices(const TriMesh& mesh) {
  const auto n = static_cast<Eigen::Index>(mesh.num_vertices());
  std::vector<double> mass(n, 0.0);
  std::vector<Eigen::Triplet<double>> g;
  g.reserve(mesh.num_triangles() * 9);
  for (std::size_t t = 0; t < mesh.num_triangles(); ++t) {
    const auto& tri = mesh.triangles[t];
    const double area = mesh.triangle_area(t);
    std::array<Point2, 3> edge;  // edge[i] is opposite vertex i
    for (int i = 0; i < 3; ++i) {
      edge[i] = mesh.vertices[tri[(i + 2) % 3]] - mesh.vertices[tri[(i + 1) % 3]];
      mass[tri[i]] += area / 3.0;
    }
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) g.emplace_back(tri[i], tri[j], dot(edge[i], edge[j]) / (4.0 * area));
    }
  }
  FemMatrices out;
  out.c.resize(n, n);
  out.c.reserve(Eigen::VectorXi::Constant(n, 1));
  for (Eigen::Index i = 0; i < n; ++i) out.c.insert(i, i) = mass[i];
  out.c.makeCompressed();
  out.g.resize(n, n);
  out.g.setFromTriplets(g.begin(), g.end());
  return out;
}

bool is_symmetric(const SparseMatrix& m, double rel_tol) {
  if (m.rows() != m.cols()) return false;
  const SparseMatrix diff = m - SparseMatrix(m.transpose());
  const double scale = std::max(m.norm(), std::numeric_limits<double>::min());
  return diff.norm() <= rel_tol * scale;
}

MeshLocator::MeshLocator(const TriMesh& mesh) : mesh_(&mesh) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  box_ = {{inf, inf}, {-inf, -inf}};
  for (Point2 p : mesh.vertices) {
    box_.lo.x = std::min(box_.lo.x, p.x);
    box_.lo.y = std::min(box_.lo.y, p.y);
    box_.hi.x = std::max(box_.hi.x, p.x);
    box_.hi.y = std::max(box_.hi.y, p.y);
  }
  const double cells = std::max<double>(1.0, static_cast<double>(mesh.num_triangles()) / 2.0);
  const double aspect = box_.width() > 0.0 && box_.height() > 0.0 ? box_.width() / box_.height() : 1.0;
  nx_ = std::max(1, static_cast<int>(std::sqrt(cells * aspect)));
  ny_ = std::max(1, static_cast<int>(cells / nx_));
  cells_.assign(static_cast<std::size_t>(nx_) * ny_, {});
  const double sx = nx_ / std::max(box_.width(), 1e-300);
  const double sy = ny_ / std::max(box_.height(), 1e-300);
  for (std::size_t t = 0; t < mesh.num_triangles(); ++t) {
    double x0 = inf, y0 = inf, x1 = -inf, y1 = -inf;
    for (int v : mesh.triangles[t]) {
      const Point2 p = mesh.vertices[v];
      x0 = std::min(x0, p.x);
      y0 = std::min(y0, p.y);
      x1 = std::max(x1, p.x);
      y1 = std::max(y1, p.y);
    }
    const int i0 = std::clamp(static_cast<int>((x0 - box_.lo.x) * sx), 0, nx_ - 1);
    const int i1 = std::clamp(static_cast<int>((x1 - box_.lo.x) * sx), 0, nx_ - 1);
    const int j0 = std::clamp(static_cast<int>((y0 - box_.lo.y) * sy), 0, ny_ - 1);
    const int j1 = std::clamp(static_cast<int>((y1 - box_.lo.y) * sy), 0, ny_ - 1);
    for (int j = j0; j <= j1; ++j) {
      for (int i = i0; i <= i1; ++i) cells_[static_cast<std::size_t>(j) * nx_ + i].push_back(static_cast<int>(t));
    }
  }
}

std::array<double, 3> MeshLocator::barycentric(int t, Point2 p) const {
  const auto& tri = mesh_->triangles[t];
  const Point2 a = mesh_->vertices[tri[0]];
  const Point2 b = mesh_->vertices[tri[1]];
  const Point2 c = mesh_->vertices[tri[2]];
  const double area2 = orient2d(a, b, c);
  return {orient2d(p, b, c) / area2, orient2d(a, p, c) / area2, orient2d(a, b, p) / area2};
}

int MeshLocator::locate(Point2 p) const {
  if (!is_finite(p) || !box_.contains(p)) return -1;
  const double sx = nx_ / std::max(box_.width(), 1e-300);
  const double sy = ny_ / std::max(box_.height(), 1e-300);
  const int i = std::clamp(static_cast<int>((p.x - box_.lo.x) * sx), 0, nx_ - 1);
  const int j = std::clamp(static_cast<int>((p.y - box_.lo.y) * sy), 0, ny_ - 1);
  constexpr double tol = -1e-12;
  int best = -1;
  double best_min = -std::numeric_limits<double>::infinity();
  for (int t : cells_[static_cast<std::size_t>(j) * nx_ + i]) {
    const auto lam = barycentric(t, p);
    const double lo = std::min({lam[0], lam[1], lam[2]});
    if (lo >= 0.0) return t;
    if (lo >= tol && lo > best_min) {
      best = t;
      best_min = lo;
    }
  }
  return best;
}

std::size_t Projector::num_outside() const {
  return static_cast<std::size_t>(std::count(outside.begin(), outside.end(), true));
}

Projector project(const MeshLocator& locator, std::size_t num_vertices, std::span<const Point2> points) {
  Projector out;
  out.outside.assign(points.size(), false);
  std::vector<Eigen::Triplet<double>> entries;
  entries.reserve(points.size() * 3);
  for (std::size_t k = 0; k < points.size(); ++k) {
    const int t = locator.locate(points[k]);
    if (t < 0) {
      out.outside[k] = true;
      continue;
    }
    auto lam = locator.barycentric(t, points[k]);
    double s = 0.0;
    for (double& l : lam) {
      l = std::max(l, 0.0);
      s += l;
    }
    const auto& tri = locator.triangle(t);
    for (int i = 0; i < 3; ++i) {
      if (lam[i] > 0.0) entries.emplace_back(static_cast<int>(k), tri[i], lam[i] / s);
    }
  }
  out.weights.resize(static_cast<Eigen::Index>(points.size()), static_cast<Eigen::Index>(num_vertices));
  out.weights.setFromTriplets(entries.begin(), entries.end());
  return out;
}

Projector project(const TriMesh& mesh, std::span<const Point2> points) {
  const MeshLocator locator(mesh);
  return project(locator, mesh.num_vertices(), points);
}

}  // namespace geoprev
