#include "render.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>
#include <unordered_map>

namespace geoprev::render {

namespace {

constexpr int kSvgWidth = 640;
constexpr int kMargin = 20;
constexpr int kLegendHeight = 60;

std::string fmt(double v, int digits = 2) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string label(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

std::pair<double, double> finite_range(const std::vector<double>& values) {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (double v : values) {
    if (!std::isfinite(v)) continue;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (!std::isfinite(lo)) return {0.0, 1.0};
  return {lo, hi};
}

struct SvgCanvas {
  BoundingBox box;
  double scale = 1.0;
  int width = kSvgWidth;
  int map_height = 0;

  explicit SvgCanvas(const BoundingBox& b) : box(b) {
    const double w = std::max(b.width(), 1e-12);
    scale = (kSvgWidth - 2.0 * kMargin) / w;
    map_height = static_cast<int>(std::ceil(b.height() * scale)) + 2 * kMargin + 20;
  }
  double sx(double x) const { return kMargin + (x - box.lo.x) * scale; }
  double sy(double y) const { return kMargin + 20 + (box.hi.y - y) * scale; }
  int height() const { return map_height + kLegendHeight; }
};

void svg_open(std::ostream& out, const SvgCanvas& c, const std::string& title) {
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << c.width << "\" height=\"" << c.height()
      << "\" viewBox=\"0 0 " << c.width << ' ' << c.height() << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>\n";
  out << "<text x=\"" << kMargin << "\" y=\"" << kMargin << "\" font-family=\"sans-serif\" font-size=\"14\">" << title
      << "</text>\n";
}

std::string path_data(const Polygon& p, const SvgCanvas& c) {
  std::string d;
  for (const auto& ring : p.rings) {
    for (std::size_t i = 0; i < ring.size(); ++i) {
      d += (i == 0 ? "M" : "L") + fmt(c.sx(ring[i].x)) + ',' + fmt(c.sy(ring[i].y));
    }
    d += "Z";
  }
  return d;
}

void gradient_legend(std::ostream& out, const SvgCanvas& c, double lo, double hi) {
  const int y = c.map_height + 10;
  const int steps = 50;
  const double w = (c.width - 2.0 * kMargin) / steps;
  out << "<g class=\"legend\">\n";
  for (int i = 0; i < steps; ++i) {
    out << "<rect x=\"" << fmt(kMargin + i * w) << "\" y=\"" << y << "\" width=\"" << fmt(w + 0.5)
        << "\" height=\"14\" fill=\"" << ramp_color((i + 0.5) / steps) << "\"/>\n";
  }
  out << "<text x=\"" << kMargin << "\" y=\"" << y + 30 << "\" font-family=\"sans-serif\" font-size=\"12\">"
      << label(lo) << "</text>\n";
  out << "<text x=\"" << c.width - kMargin << "\" y=\"" << y + 30
      << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"12\">" << label(hi) << "</text>\n";
  out << "</g>\n";
}

void outline_path(std::ostream& out, const Polygon* outline, const SvgCanvas& c) {
  if (!outline) return;
  out << "<path d=\"" << path_data(*outline, c) << "\" fill=\"none\" stroke=\"#333333\" stroke-width=\"1\"/>\n";
}

BoundingBox points_box(const std::vector<Point2>& points, double spacing, const Polygon* outline) {
  if (outline) return outline->bounds();
  BoundingBox b{{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity()},
                {-std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()}};
  for (const auto& p : points) {
    b.lo = {std::min(b.lo.x, p.x - spacing / 2), std::min(b.lo.y, p.y - spacing / 2)};
    b.hi = {std::max(b.hi.x, p.x + spacing / 2), std::max(b.hi.y, p.y + spacing / 2)};
  }
  if (points.empty()) b = {{0, 0}, {1, 1}};
  return b;
}

void write_pgm_bytes(std::ostream& out, int w, int h, const std::vector<unsigned char>& bytes) {
  out << "P5\n" << w << ' ' << h << "\n255\n";
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

Frame Frame::fit(const BoundingBox& box, int width) {
  Frame f;
  f.box = box;
  f.width = width;
  f.height = std::max(1, static_cast<int>(std::lround(width * box.height() / std::max(box.width(), 1e-12))));
  return f;
}

Point2 Frame::pixel_center(int x, int y) const {
  return {box.lo.x + (x + 0.5) * box.width() / width, box.hi.y - (y + 0.5) * box.height() / height};
}

Raster rasterize_points(const Frame& frame, const std::vector<Point2>& points, const std::vector<double>& values,
                        double spacing) {
  Raster r{frame.width, frame.height,
           std::vector<double>(static_cast<std::size_t>(frame.width) * frame.height,
                               std::numeric_limits<double>::quiet_NaN())};
  if (points.empty()) return r;
  const Point2 origin = points.front();
  auto key = [&](Point2 p) {
    const long long i = std::llround((p.x - origin.x) / spacing);
    const long long j = std::llround((p.y - origin.y) / spacing);
    return (i + (1LL << 30)) * (1LL << 31) + (j + (1LL << 30));
  };
  std::unordered_map<long long, double> cells;
  for (std::size_t k = 0; k < points.size(); ++k) cells[key(points[k])] = values[k];
  for (int y = 0; y < r.height; ++y) {
    for (int x = 0; x < r.width; ++x) {
      const auto it = cells.find(key(frame.pixel_center(x, y)));
      if (it != cells.end()) r.at(x, y) = it->second;
    }
  }
  return r;
}

Raster rasterize_areas(const Frame& frame, const std::vector<Polygon>& areas, const std::vector<double>& values) {
  Raster r{frame.width, frame.height,
           std::vector<double>(static_cast<std::size_t>(frame.width) * frame.height,
                               std::numeric_limits<double>::quiet_NaN())};
  std::vector<BoundingBox> boxes;
  for (const auto& a : areas) boxes.push_back(a.bounds());
  for (int y = 0; y < r.height; ++y) {
    for (int x = 0; x < r.width; ++x) {
      const Point2 p = frame.pixel_center(x, y);
      for (std::size_t k = 0; k < areas.size(); ++k) {
        if (boxes[k].contains(p) && point_in_area(p, areas[k])) {
          r.at(x, y) = values[k];
          break;
        }
      }
    }
  }
  return r;
}

void write_pgm(std::ostream& out, const Raster& raster, double lo, double hi) {
  std::vector<unsigned char> bytes(raster.values.size());
  const double span = hi > lo ? hi - lo : 1.0;
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    const double v = raster.values[i];
    if (!std::isfinite(v)) {
      bytes[i] = 255;
    } else {
      const double t = std::clamp((v - lo) / span, 0.0, 1.0);
      bytes[i] = static_cast<unsigned char>(std::lround(t * 254.0));
    }
  }
  write_pgm_bytes(out, raster.width, raster.height, bytes);
}

void write_label_pgm(std::ostream& out, const Raster& labels) {
  std::vector<unsigned char> bytes(labels.values.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    const double v = labels.values[i];
    bytes[i] = !std::isfinite(v) ? 255 : v < 0 ? 85 : v > 0 ? 170 : 0;
  }
  write_pgm_bytes(out, labels.width, labels.height, bytes);
}

std::string ramp_color(double t) {
  // Viridis-like stops.
  static constexpr std::array<std::array<double, 3>, 5> stops{{{68, 1, 84}, {59, 82, 139}, {33, 145, 140},
                                                                {94, 201, 98}, {253, 231, 37}}};
  t = std::clamp(std::isfinite(t) ? t : 0.0, 0.0, 1.0);
  const double s = t * (stops.size() - 1);
  const auto i = std::min(static_cast<std::size_t>(s), stops.size() - 2);
  const double f = s - static_cast<double>(i);
  char buf[8];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", static_cast<int>(std::lround(stops[i][0] + f * (stops[i + 1][0] - stops[i][0]))),
                static_cast<int>(std::lround(stops[i][1] + f * (stops[i + 1][1] - stops[i][1]))),
                static_cast<int>(std::lround(stops[i][2] + f * (stops[i + 1][2] - stops[i][2]))));
  return buf;
}

void write_choropleth_svg(std::ostream& out, const std::vector<Polygon>& areas, const std::vector<double>& values,
                          const std::string& title) {
  BoundingBox box = areas.empty() ? BoundingBox{{0, 0}, {1, 1}} : areas.front().bounds();
  for (const auto& a : areas) {
    const BoundingBox b = a.bounds();
    box.lo = {std::min(box.lo.x, b.lo.x), std::min(box.lo.y, b.lo.y)};
    box.hi = {std::max(box.hi.x, b.hi.x), std::max(box.hi.y, b.hi.y)};
  }
  const SvgCanvas c(box);
  const auto [lo, hi] = finite_range(values);
  svg_open(out, c, title);
  for (std::size_t k = 0; k < areas.size(); ++k) {
    const double t = hi > lo ? (values[k] - lo) / (hi - lo) : 0.5;
    const std::string fill = std::isfinite(values[k]) ? ramp_color(t) : "#dddddd";
    out << "<path id=\"" << areas[k].id << "\" d=\"" << path_data(areas[k], c) << "\" fill=\"" << fill
        << "\" fill-rule=\"evenodd\" stroke=\"#ffffff\" stroke-width=\"0.5\"/>\n";
  }
  gradient_legend(out, c, lo, hi);
  out << "</svg>\n";
}

void write_lattice_svg(std::ostream& out, const std::vector<Point2>& points, const std::vector<double>& values,
                       double spacing, const Polygon* outline, const std::string& title) {
  const SvgCanvas c(points_box(points, spacing, outline));
  const auto [lo, hi] = finite_range(values);
  svg_open(out, c, title);
  const std::string side = fmt(spacing * c.scale + 0.3);
  for (std::size_t k = 0; k < points.size(); ++k) {
    const double t = hi > lo ? (values[k] - lo) / (hi - lo) : 0.5;
    out << "<rect x=\"" << fmt(c.sx(points[k].x - spacing / 2)) << "\" y=\"" << fmt(c.sy(points[k].y + spacing / 2))
        << "\" width=\"" << side << "\" height=\"" << side << "\" fill=\"" << ramp_color(t) << "\"/>\n";
  }
  outline_path(out, outline, c);
  gradient_legend(out, c, lo, hi);
  out << "</svg>\n";
}

void write_excursion_svg(std::ostream& out, const std::vector<Point2>& points, const std::vector<int>& labels,
                         double spacing, const Polygon* outline, const std::string& title) {
  static const std::array<const char*, 3> colors{"#2166ac", "#000000", "#b2182b"};
  static const std::array<const char*, 3> names{"below", "indeterminate", "above"};
  const SvgCanvas c(points_box(points, spacing, outline));
  svg_open(out, c, title);
  const std::string side = fmt(spacing * c.scale + 0.3);
  for (std::size_t k = 0; k < points.size(); ++k) {
    out << "<rect x=\"" << fmt(c.sx(points[k].x - spacing / 2)) << "\" y=\"" << fmt(c.sy(points[k].y + spacing / 2))
        << "\" width=\"" << side << "\" height=\"" << side << "\" fill=\"" << colors[static_cast<std::size_t>(labels[k] + 1)]
        << "\"/>\n";
  }
  outline_path(out, outline, c);
  const int y = c.map_height + 10;
  out << "<g class=\"legend\">\n";
  for (std::size_t i = 0; i < 3; ++i) {
    const int x = kMargin + static_cast<int>(i) * 180;
    out << "<rect class=\"legend-class\" x=\"" << x << "\" y=\"" << y << "\" width=\"14\" height=\"14\" fill=\""
        << colors[i] << "\"/>\n";
    out << "<text x=\"" << x + 20 << "\" y=\"" << y + 12 << "\" font-family=\"sans-serif\" font-size=\"12\">"
        << names[i] << "</text>\n";
  }
  out << "</g>\n</svg>\n";
}

}  // namespace geoprev::render
