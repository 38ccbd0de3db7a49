// Delaunay refinement over a rectangular domain.
//
// The domain is the boundary polygon's bounding box grown by the extension
// width. Its four sides are the only segments, so every hull edge is a
// segment and encroachment reduces to the diametral-circle test against the
// apex of the single adjacent triangle. Boundary rings are resampled at the
// interior edge length and inserted as vertices so the study region is
// resolved by the fine zone.

#include "geoprev/error.hpp"
#include "geoprev/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <sstream>

namespace geoprev {

namespace {

struct Tri {
  std::array<int, 3> v{};
  std::array<int, 3> nbr{-1, -1, -1};  // nbr[i] is across the edge opposite v[i]
  bool alive = true;
};

// > 0 when d is strictly inside the circumcircle of counter-clockwise (a, b, c).
double incircle(Point2 a, Point2 b, Point2 c, Point2 d) {
  const long double adx = a.x - d.x, ady = a.y - d.y;
  const long double bdx = b.x - d.x, bdy = b.y - d.y;
  const long double cdx = c.x - d.x, cdy = c.y - d.y;
  const long double ad = adx * adx + ady * ady;
  const long double bd = bdx * bdx + bdy * bdy;
  const long double cd = cdx * cdx + cdy * cdy;
  return static_cast<double>(adx * (bdy * cd - bd * cdy) - ady * (bdx * cd - bd * cdx) +
                             ad * (bdx * cdy - bdy * cdx));
}

Point2 circumcenter(Point2 a, Point2 b, Point2 c) {
  const Point2 ab = b - a;
  const Point2 ac = c - a;
  const double d = 2.0 * cross(ab, ac);
  const double ab2 = dot(ab, ab);
  const double ac2 = dot(ac, ac);
  return {a.x + (ac.y * ab2 - ab.y * ac2) / d, a.y + (ab.x * ac2 - ac.x * ab2) / d};
}

struct Location {
  int tri = -1;
  int exit_edge = -1;  // >= 0 when the walk left the hull through this edge of `tri`
};

class Refiner {
 public:
  Refiner(const Polygon& boundary, const MeshOptions& opt, BoundingBox domain)
      : boundary_(boundary), opt_(opt), domain_(domain) {
    add_vertex(domain.lo);
    add_vertex({domain.hi.x, domain.lo.y});
    add_vertex(domain.hi);
    add_vertex({domain.lo.x, domain.hi.y});
    tris_.push_back({{0, 1, 2}, {-1, 1, -1}, true});
    tris_.push_back({{0, 2, 3}, {-1, -1, 0}, true});
    cos_bound_ = std::cos(opt.min_angle_deg * M_PI / 180.0);
  }

  void insert_boundary_samples() {
    for (const auto& ring : boundary_.rings) {
      const std::size_t n = ring.size();
      Point2 last = ring.back();
      bool have_last = false;
      for (std::size_t i = 0; i < n; ++i) {
        const Point2 a = ring[i];
        const Point2 b = ring[(i + 1) % n];
        if (!have_last || distance(a, last) >= 0.3 * opt_.interior_max_edge) {
          insert_point(a);
          last = a;
          have_last = true;
        }
        const double len = distance(a, b);
        const double wanted = std::ceil(len / opt_.interior_max_edge);
        if (static_cast<double>(pts_.size()) + wanted > static_cast<double>(opt_.max_vertices)) {
          fail("vertex budget exhausted");
        }
        const int pieces = static_cast<int>(wanted);
        for (int k = 1; k < pieces; ++k) {
          const Point2 p = a + (static_cast<double>(k) / pieces) * (b - a);
          insert_point(p);
          last = p;
        }
      }
    }
  }

  void refine() {
    for (int t = 0; t < static_cast<int>(tris_.size()); ++t) enqueue_checks(t);
    while (!segments_.empty() || !bad_.empty()) {
      if (pts_.size() > opt_.max_vertices) fail("vertex budget exhausted");
      if (!segments_.empty()) {
        const auto [t, a, b, forced] = segments_.front();
        segments_.pop_front();
        const int e = hull_edge(t, a, b);
        if (e >= 0 && (forced || encroached(t, e))) split_hull_edge(t, e);
        continue;
      }
      const auto [t, key] = bad_.front();
      bad_.pop_front();
      if (!tris_[t].alive || tri_key(t) != key || !is_bad(t)) continue;
      const auto& v = tris_[t].v;
      const Point2 c = circumcenter(pts_[v[0]], pts_[v[1]], pts_[v[2]]);
      const Location loc = locate(c, t);
      if (loc.exit_edge >= 0) {
        split_hull_edge(loc.tri, loc.exit_edge);
        bad_.push_back({t, key});
        continue;
      }
      if (queue_encroached_by(c, loc.tri)) {
        bad_.push_back({t, key});
        continue;
      }
      if (insert_at(c, loc.tri) < 0) {
        // Circumcenter coincides with an existing vertex: only possible for
        // degenerate slivers, which the next pass sees again.
        ++stalled_;
        if (stalled_ > 1000) fail("refinement stalled on coincident circumcenters");
      }
    }
  }

  TriMesh finish() {
    TriMesh mesh;
    mesh.vertices = pts_;
    for (const auto& t : tris_) {
      if (t.alive) mesh.triangles.push_back(t.v);
    }
    mesh.interior.resize(pts_.size());
    for (std::size_t i = 0; i < pts_.size(); ++i) mesh.interior[i] = point_in_area(pts_[i], boundary_);
    return mesh;
  }

 private:
  struct SegmentCheck {
    int tri;
    int a;
    int b;
    bool forced;  // split even if the current apex does not encroach
  };
  struct BadCheck {
    int tri;
    std::array<int, 3> key;
  };

  const Polygon& boundary_;
  MeshOptions opt_;
  BoundingBox domain_;
  double dup_tol_ = 1e-9;
  double cos_bound_ = 0.0;
  std::vector<Point2> pts_;
  std::vector<double> size_;
  std::vector<Tri> tris_;
  std::vector<int> free_;
  mutable std::vector<std::uint32_t> stamp_;
  mutable std::uint32_t epoch_ = 0;
  std::deque<SegmentCheck> segments_;
  std::deque<BadCheck> bad_;
  int last_ = 0;
  int stalled_ = 0;
  std::uint64_t walk_state_ = 0x9E3779B97F4A7C15ull;

  [[noreturn]] void fail(const std::string& why) const {
    double worst = 180.0;
    std::size_t alive = 0;
    for (std::size_t t = 0; t < tris_.size(); ++t) {
      if (!tris_[t].alive) continue;
      ++alive;
      TriMesh probe;
      probe.vertices = {pts_[tris_[t].v[0]], pts_[tris_[t].v[1]], pts_[tris_[t].v[2]]};
      probe.triangles = {{0, 1, 2}};
      worst = std::min(worst, min_angle_deg(probe, 0));
    }
    std::ostringstream msg;
    msg << "mesh refinement failed: " << why << " (vertices=" << pts_.size() << ", triangles=" << alive
        << ", pending bad=" << bad_.size() << ", smallest angle=" << worst
        << " deg, min_angle=" << opt_.min_angle_deg << ", interior_max_edge=" << opt_.interior_max_edge << ")";
    throw RefinementError(msg.str());
  }

  double target_size(Point2 p) const {
    if (point_in_area(p, boundary_)) return opt_.interior_max_edge;
    const double d = distance_to_boundary(p, boundary_);
    return std::min(opt_.exterior_max_edge, opt_.interior_max_edge + opt_.grading * d);
  }

  int add_vertex(Point2 p) {
    pts_.push_back(p);
    size_.push_back(target_size(p));
    return static_cast<int>(pts_.size()) - 1;
  }

  std::array<int, 3> tri_key(int t) const { return tris_[t].v; }

  int new_tri() {
    if (!free_.empty()) {
      const int t = free_.back();
      free_.pop_back();
      return t;
    }
    tris_.emplace_back();
    return static_cast<int>(tris_.size()) - 1;
  }

  int any_alive() const {
    for (int t = static_cast<int>(tris_.size()) - 1; t >= 0; --t) {
      if (tris_[t].alive) return t;
    }
    return -1;
  }

  Location locate(Point2 p, int start) {
    int t = (start >= 0 && start < static_cast<int>(tris_.size()) && tris_[start].alive) ? start : any_alive();
    const std::size_t limit = 64 + 8 * static_cast<std::size_t>(std::sqrt(static_cast<double>(tris_.size()))) * 4;
    for (std::size_t step = 0; step < limit; ++step) {
      walk_state_ ^= walk_state_ << 13;
      walk_state_ ^= walk_state_ >> 7;
      walk_state_ ^= walk_state_ << 17;
      const int r = static_cast<int>(walk_state_ % 3);
      bool moved = false;
      for (int k = 0; k < 3; ++k) {
        const int i = (r + k) % 3;
        const auto& tri = tris_[t];
        const Point2 a = pts_[tri.v[(i + 1) % 3]];
        const Point2 b = pts_[tri.v[(i + 2) % 3]];
        if (orient2d(a, b, p) < 0.0) {
          if (tri.nbr[i] < 0) return {t, i};
          t = tri.nbr[i];
          moved = true;
          break;
        }
      }
      if (!moved) return {t, -1};
    }
    // Walk failed to converge; scan.
    for (int s = 0; s < static_cast<int>(tris_.size()); ++s) {
      if (!tris_[s].alive) continue;
      const auto& v = tris_[s].v;
      if (orient2d(pts_[v[0]], pts_[v[1]], p) >= 0.0 && orient2d(pts_[v[1]], pts_[v[2]], p) >= 0.0 &&
          orient2d(pts_[v[2]], pts_[v[0]], p) >= 0.0) {
        return {s, -1};
      }
    }
    for (int s = 0; s < static_cast<int>(tris_.size()); ++s) {
      if (!tris_[s].alive) continue;
      for (int i = 0; i < 3; ++i) {
        if (tris_[s].nbr[i] < 0 &&
            orient2d(pts_[tris_[s].v[(i + 1) % 3]], pts_[tris_[s].v[(i + 2) % 3]], p) < 0.0) {
          return {s, i};
        }
      }
    }
    fail("point location failed");
  }

  bool in_circle(int t, Point2 p) const {
    const auto& v = tris_[t].v;
    return incircle(pts_[v[0]], pts_[v[1]], pts_[v[2]], p) > 0.0;
  }

  // Triangles whose circumcircle contains p, grown until p sees every
  // cavity boundary edge from the inside.
  std::vector<int> cavity(Point2 p, int start) const {
    std::vector<int> cav{start};
    stamp_.resize(tris_.size(), 0);
    const std::uint32_t id = ++epoch_;
    auto marked = [&](int t) { return stamp_[t] == id; };
    stamp_[start] = id;
    for (std::size_t k = 0; k < cav.size(); ++k) {
      for (int nb : tris_[cav[k]].nbr) {
        if (nb >= 0 && !marked(nb) && in_circle(nb, p)) {
          stamp_[nb] = id;
          cav.push_back(nb);
        }
      }
    }
    bool changed = true;
    while (changed) {
      changed = false;
      for (std::size_t k = 0; k < cav.size(); ++k) {
        const auto& tri = tris_[cav[k]];
        for (int i = 0; i < 3; ++i) {
          const int nb = tri.nbr[i];
          if (nb >= 0 && marked(nb)) continue;
          const Point2 a = pts_[tri.v[(i + 1) % 3]];
          const Point2 b = pts_[tri.v[(i + 2) % 3]];
          if (nb >= 0 && orient2d(a, b, p) <= 0.0) {
            stamp_[nb] = id;
            cav.push_back(nb);
            changed = true;
          }
        }
      }
    }
    return cav;
  }

  // Inserts p located in triangle `start`; returns the new vertex id, or -1 for a duplicate.
  int insert_at(Point2 p, int start) {
    const auto& sv = tris_[start].v;
    for (int v : sv) {
      if (distance(pts_[v], p) <= dup_tol_) return -1;
    }
    const std::vector<int> cav = cavity(p, start);
    for (int t : cav) {
      for (int v : tris_[t].v) {
        if (distance(pts_[v], p) <= dup_tol_) return -1;
      }
    }
    // cavity() leaves its members stamped with the current epoch.
    const std::uint32_t id = epoch_;
    auto in_cav = [&](int t) { return stamp_[t] == id; };

    struct Edge {
      int a, b, outer;
    };
    std::vector<Edge> rim;
    for (int t : cav) {
      const auto& tri = tris_[t];
      for (int i = 0; i < 3; ++i) {
        const int nb = tri.nbr[i];
        if (nb >= 0 && in_cav(nb)) continue;
        const int a = tri.v[(i + 1) % 3];
        const int b = tri.v[(i + 2) % 3];
        const double o = orient2d(pts_[a], pts_[b], p);
        if (nb < 0 && o <= 0.0) {
          if (o < 0.0) fail("inserted point lies outside the domain");
          continue;  // p lies on this hull edge, which is split by the fan
        }
        rim.push_back({a, b, nb});
      }
    }
    const int pv = add_vertex(p);
    for (int t : cav) {
      tris_[t].alive = false;
      free_.push_back(t);
    }
    std::vector<int> made(rim.size());
    for (std::size_t k = 0; k < rim.size(); ++k) {
      const int t = new_tri();
      tris_[t] = Tri{{pv, rim[k].a, rim[k].b}, {rim[k].outer, -1, -1}, true};
      made[k] = t;
      if (rim[k].outer >= 0) {
        auto& o = tris_[rim[k].outer];
        for (int i = 0; i < 3; ++i) {
          const int oa = o.v[(i + 1) % 3];
          const int ob = o.v[(i + 2) % 3];
          if (oa == rim[k].b && ob == rim[k].a) o.nbr[i] = t;
        }
      }
    }
    // Fan adjacency: (p, a, b) meets (p, b, c) across p-b and (p, z, a) across p-a.
    for (std::size_t k = 0; k < rim.size(); ++k) {
      for (std::size_t j = 0; j < rim.size(); ++j) {
        if (rim[j].a == rim[k].b) tris_[made[k]].nbr[1] = made[j];
        if (rim[j].b == rim[k].a) tris_[made[k]].nbr[2] = made[j];
      }
    }
    last_ = made.empty() ? last_ : made.front();
    for (int t : made) enqueue_checks(t);
    return pv;
  }

  int insert_point(Point2 p) {
    const Location loc = locate(p, last_);
    if (loc.exit_edge >= 0) fail("boundary sample outside the domain");
    return insert_at(p, loc.tri);
  }

  int hull_edge(int t, int a, int b) const {
    if (!tris_[t].alive) return -1;
    const auto& tri = tris_[t];
    for (int i = 0; i < 3; ++i) {
      if (tri.nbr[i] < 0 && tri.v[(i + 1) % 3] == a && tri.v[(i + 2) % 3] == b) return i;
    }
    return -1;
  }

  bool encroached(int t, int e) const {
    const auto& tri = tris_[t];
    const Point2 a = pts_[tri.v[(e + 1) % 3]];
    const Point2 b = pts_[tri.v[(e + 2) % 3]];
    const Point2 apex = pts_[tri.v[e]];
    return dot(apex - a, apex - b) < 0.0;
  }

  void split_hull_edge(int t, int e) {
    const auto& tri = tris_[t];
    const Point2 a = pts_[tri.v[(e + 1) % 3]];
    const Point2 b = pts_[tri.v[(e + 2) % 3]];
    Point2 mid = 0.5 * (a + b);
    // Keep split points exactly on the axis-aligned domain sides.
    if (a.x == b.x) mid.x = a.x;
    if (a.y == b.y) mid.y = a.y;
    if (insert_at(mid, t) < 0) fail("hull edge split produced a duplicate vertex");
  }

  // Queues hull edges whose diametral circle would contain p. Returns true if any.
  bool queue_encroached_by(Point2 p, int start) {
    bool any = false;
    for (int t : cavity(p, start)) {
      const auto& tri = tris_[t];
      for (int i = 0; i < 3; ++i) {
        if (tri.nbr[i] >= 0) continue;
        const int a = tri.v[(i + 1) % 3];
        const int b = tri.v[(i + 2) % 3];
        if (dot(p - pts_[a], p - pts_[b]) < 0.0) {
          segments_.push_back({t, a, b, true});
          any = true;
        }
      }
    }
    return any;
  }

  bool is_bad(int t) const {
    const auto& v = tris_[t].v;
    const Point2 p0 = pts_[v[0]], p1 = pts_[v[1]], p2 = pts_[v[2]];
    std::array<double, 3> len{distance(p1, p2), distance(p2, p0), distance(p0, p1)};
    std::sort(len.begin(), len.end());
    const double h = std::min({size_[v[0]], size_[v[1]], size_[v[2]]});
    if (len[2] > h) return true;
    if (len[2] > opt_.interior_max_edge && len[2] > target_size((1.0 / 3.0) * (p0 + p1 + p2))) return true;
    // Smallest angle is opposite the shortest edge.
    const double cos_min = (len[1] * len[1] + len[2] * len[2] - len[0] * len[0]) / (2.0 * len[1] * len[2]);
    return cos_min > cos_bound_;
  }

  void enqueue_checks(int t) {
    if (!tris_[t].alive) return;
    const auto& tri = tris_[t];
    for (int i = 0; i < 3; ++i) {
      if (tri.nbr[i] < 0 && encroached(t, i)) {
        segments_.push_back({t, tri.v[(i + 1) % 3], tri.v[(i + 2) % 3], false});
      }
    }
    if (is_bad(t)) bad_.push_back({t, tri.v});
  }
};

}  // namespace

TriMesh build_mesh(const Polygon& boundary, const MeshOptions& options) {
  if (!(options.interior_max_edge > 0.0)) throw GeometryError("interior_max_edge must be positive");
  if (!(options.extension_factor >= 1.0)) throw GeometryError("extension_factor must be at least 1");
  if (!(options.exterior_max_edge >= options.interior_max_edge)) {
    throw GeometryError("exterior_max_edge must be at least interior_max_edge");
  }
  if (!(options.min_angle_deg > 0.0 && options.min_angle_deg < 60.0)) {
    throw GeometryError("min_angle_deg must lie in (0, 60)");
  }
  Polygon region = boundary;
  region.normalize();

  const BoundingBox box = region.bounds();
  const double width = (options.extension_factor - 1.0) * box.diagonal();
  const BoundingBox domain{{box.lo.x - width, box.lo.y - width}, {box.hi.x + width, box.hi.y + width}};

  Refiner refiner(region, options, domain);
  refiner.insert_boundary_samples();
  refiner.refine();
  return refiner.finish();
}

}  // namespace geoprev
