#pragma once

#include "geoprev/geometry.hpp"

#include <cstdint>
#include <vector>

namespace geoprev {

/// A hand-drawn country outline in lon/lat-like planar units, about 8 x 10
/// units and 47 square units in area.
Polygon synthetic_country_boundary();

/// `count` areas tiling the boundary: Voronoi cells of sites drawn uniformly
/// in the boundary, relaxed by Lloyd iterations and clipped to the boundary.
/// Ids are "A01", "A02", ...
std::vector<Polygon> voronoi_areas(const Polygon& boundary, int count, std::uint64_t seed, int lloyd_iterations = 8);

}  // namespace geoprev
