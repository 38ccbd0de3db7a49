#include "geoprev/synthetic.hpp"

#include "geoprev/error.hpp"
#include "geoprev/functionals.hpp"

#include <cstdio>
#include <random>

namespace geoprev {

namespace {

// Part of a convex ring on the side of the bisector nearer to `site`.
Ring clip_halfplane(const Ring& ring, Point2 site, Point2 other) {
  const Point2 mid = 0.5 * (site + other);
  const Point2 d = other - site;
  auto side = [&](Point2 p) { return dot(p - mid, d); };
  Ring out;
  for (std::size_t i = 0; i < ring.size(); ++i) {
    const Point2 a = ring[i];
    const Point2 b = ring[(i + 1) % ring.size()];
    const double sa = side(a), sb = side(b);
    if (sa <= 0.0) out.push_back(a);
    if ((sa < 0.0 && sb > 0.0) || (sa > 0.0 && sb < 0.0)) out.push_back(a + (sa / (sa - sb)) * (b - a));
  }
  return out;
}

std::vector<Polygon> clip_cells(const Polygon& boundary, const std::vector<Point2>& sites) {
  const BoundingBox box = boundary.bounds();
  const double pad = box.diagonal();
  const Ring frame{{box.lo.x - pad, box.lo.y - pad},
                   {box.hi.x + pad, box.lo.y - pad},
                   {box.hi.x + pad, box.hi.y + pad},
                   {box.lo.x - pad, box.hi.y + pad}};
  std::vector<Polygon> out;
  for (std::size_t i = 0; i < sites.size(); ++i) {
    Ring cell = frame;
    for (std::size_t j = 0; j < sites.size() && cell.size() >= 3; ++j) {
      if (j != i) cell = clip_halfplane(cell, sites[i], sites[j]);
    }
    char id[16];
    std::snprintf(id, sizeof id, "A%02zu", i + 1);
    Polygon area = cell.size() >= 3 ? clip_to_convex(boundary, cell) : Polygon{};
    area.id = id;
    out.push_back(std::move(area));
  }
  return out;
}

}  // namespace

Polygon synthetic_country_boundary() {
  Polygon p{"boundary",
            {{{33.95, -1.00}, {37.60, -3.00}, {39.20, -4.68}, {39.60, -4.30}, {39.85, -3.80}, {40.15, -3.25},
              {40.25, -2.75}, {40.90, -2.40}, {41.55, -1.65}, {41.00, -0.85}, {41.00, 2.80}, {41.90, 3.98},
              {40.80, 4.25}, {39.80, 3.50}, {39.00, 3.45}, {38.10, 3.60}, {36.90, 4.40}, {35.90, 4.60},
              {35.30, 5.00}, {34.40, 4.60}, {34.00, 4.20}, {34.40, 3.70}, {34.90, 2.50}, {35.00, 1.90},
              {34.80, 1.20}, {34.50, 0.90}, {34.10, 0.50}, {33.95, 0.10}, {34.10, -0.40}}}};
  p.normalize();
  return p;
}

std::vector<Polygon> voronoi_areas(const Polygon& boundary, int count, std::uint64_t seed, int lloyd_iterations) {
  if (count < 1) throw GeometryError("voronoi_areas needs at least one area");
  std::mt19937_64 rng(seed);
  std::vector<Point2> sites = sample_in_polygon(boundary, static_cast<std::size_t>(count), rng);
  std::vector<Polygon> cells = clip_cells(boundary, sites);
  for (int it = 0; it < lloyd_iterations; ++it) {
    for (std::size_t i = 0; i < sites.size(); ++i) {
      if (!cells[i].rings.empty() && cells[i].area() > 0.0) sites[i] = cells[i].centroid();
    }
    cells = clip_cells(boundary, sites);
  }
  for (const auto& c : cells) {
    if (c.rings.empty() || !(c.area() > 0.0)) throw GeometryError("Voronoi cell " + c.id + " is empty after clipping");
  }
  return cells;
}

}  // namespace geoprev
