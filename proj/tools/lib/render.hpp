#pragma once

#include "geoprev/geometry.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace geoprev::render {

/// Row-major grid of values; NaN marks "no data". Row 0 is the top.
struct Raster {
  int width = 0;
  int height = 0;
  std::vector<double> values;

  double& at(int x, int y) { return values[static_cast<std::size_t>(y) * width + x]; }
  double at(int x, int y) const { return values[static_cast<std::size_t>(y) * width + x]; }
};

/// Pixel grid covering `box` at `width` pixels across, preserving aspect.
struct Frame {
  BoundingBox box;
  int width = 0;
  int height = 0;

  static Frame fit(const BoundingBox& box, int width);
  Point2 pixel_center(int x, int y) const;
};

/// Each pixel takes the value of the lattice point (spacing apart) it falls into.
Raster rasterize_points(const Frame& frame, const std::vector<Point2>& points, const std::vector<double>& values,
                        double spacing);
/// Each pixel takes the value of the first area containing its centre.
Raster rasterize_areas(const Frame& frame, const std::vector<Polygon>& areas, const std::vector<double>& values);

/// Binary PGM: values linearly mapped from [lo, hi] to gray 0..254; NaN is 255.
void write_pgm(std::ostream& out, const Raster& raster, double lo, double hi);
/// Binary PGM of excursion labels: below 85, above 170, indeterminate 0, none 255.
void write_label_pgm(std::ostream& out, const Raster& labels);

/// "#rrggbb" on a perceptually ordered ramp for t in [0, 1].
std::string ramp_color(double t);

/// Choropleth with colour scale bounds at the data min/max.
void write_choropleth_svg(std::ostream& out, const std::vector<Polygon>& areas, const std::vector<double>& values,
                          const std::string& title);
/// Lattice heat map (one square per point) with min/max colour bounds.
void write_lattice_svg(std::ostream& out, const std::vector<Point2>& points, const std::vector<double>& values,
                       double spacing, const Polygon* outline, const std::string& title);
/// Three-class excursion map: below blue, above red, indeterminate black.
void write_excursion_svg(std::ostream& out, const std::vector<Point2>& points, const std::vector<int>& labels,
                         double spacing, const Polygon* outline, const std::string& title);

}  // namespace geoprev::render
