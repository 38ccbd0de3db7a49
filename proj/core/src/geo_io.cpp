#include "geoprev/geo_io.hpp"

#include "geoprev/error.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

namespace geoprev {

using nlohmann::json;

namespace {

Ring parse_ring(const json& coords) {
  Ring ring;
  for (const auto& c : coords) {
    if (!c.is_array() || c.size() < 2) throw DataError("GeoJSON position must have two coordinates");
    ring.push_back({c[0].get<double>(), c[1].get<double>()});
  }
  return ring;
}

void append_geometry(const json& geom, Polygon& into) {
  const std::string type = geom.at("type").get<std::string>();
  const json& coords = geom.at("coordinates");
  if (type == "Polygon") {
    for (const auto& r : coords) into.rings.push_back(parse_ring(r));
  } else if (type == "MultiPolygon") {
    for (const auto& part : coords) {
      for (const auto& r : part) into.rings.push_back(parse_ring(r));
    }
  } else {
    throw DataError("unsupported GeoJSON geometry type '" + type + "'");
  }
}

std::string id_of(const json& feature, const std::string& id_property, std::size_t index) {
  auto stringify = [](const json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); };
  if (feature.contains("properties") && feature["properties"].is_object() &&
      feature["properties"].contains(id_property)) {
    return stringify(feature["properties"][id_property]);
  }
  if (feature.contains("id")) return stringify(feature["id"]);
  return std::to_string(index);
}

std::string trim(std::string s) {
  const auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

double parse_double(const std::string& s, const std::string& what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw DataError("cannot parse " + what + " value '" + s + "'");
  }
}

}  // namespace

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(trim(field));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::vector<Polygon> read_geojson(std::istream& in, const std::string& id_property) {
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw DataError(std::string("invalid GeoJSON: ") + e.what());
  }
  std::vector<Polygon> out;
  try {
    const std::string type = doc.at("type").get<std::string>();
    if (type == "FeatureCollection") {
      std::size_t index = 0;
      for (const auto& f : doc.at("features")) {
        Polygon p{id_of(f, id_property, index++), {}};
        append_geometry(f.at("geometry"), p);
        out.push_back(std::move(p));
      }
    } else if (type == "Feature") {
      Polygon p{id_of(doc, id_property, 0), {}};
      append_geometry(doc.at("geometry"), p);
      out.push_back(std::move(p));
    } else {
      Polygon p{"0", {}};
      append_geometry(doc, p);
      out.push_back(std::move(p));
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed GeoJSON: ") + e.what());
  }
  for (auto& p : out) p.normalize();
  return out;
}

std::vector<Polygon> read_geojson(const std::filesystem::path& path, const std::string& id_property) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open polygon file " + path.string());
  return read_geojson(in, id_property);
}

void write_geojson(std::ostream& out, const std::vector<Polygon>& polygons) {
  json fc{{"type", "FeatureCollection"}, {"features", json::array()}};
  for (const auto& p : polygons) {
    json rings = json::array();
    for (const auto& r : p.rings) {
      json ring = json::array();
      for (Point2 v : r) ring.push_back({v.x, v.y});
      if (!r.empty()) ring.push_back({r.front().x, r.front().y});
      rings.push_back(std::move(ring));
    }
    // Each ring is written as its own polygon part; even-odd reading restores holes.
    json parts = json::array();
    for (auto& r : rings) parts.push_back(json::array({r}));
    fc["features"].push_back({{"type", "Feature"},
                              {"properties", {{"id", p.id}}},
                              {"geometry", {{"type", "MultiPolygon"}, {"coordinates", parts}}}});
  }
  out << fc.dump() << '\n';
}

std::vector<Polygon> read_polygon_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty polygon CSV");
  const auto header = split_csv_line(line);
  if (header.size() < 5 || header[0] != "id" || header[1] != "ring_index" || header[2] != "vertex_index" ||
      header[3] != "x" || header[4] != "y") {
    throw DataError("polygon CSV header must be id,ring_index,vertex_index,x,y");
  }
  std::map<std::string, std::map<long, std::map<long, Point2>>> rows;
  std::vector<std::string> order;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() < 5) throw DataError("polygon CSV line " + std::to_string(line_no) + " has fewer than 5 fields");
    if (!rows.contains(f[0])) order.push_back(f[0]);
    const long ring = static_cast<long>(parse_double(f[1], "ring_index"));
    const long vertex = static_cast<long>(parse_double(f[2], "vertex_index"));
    rows[f[0]][ring][vertex] = {parse_double(f[3], "x"), parse_double(f[4], "y")};
  }
  std::vector<Polygon> out;
  for (const auto& id : order) {
    Polygon p{id, {}};
    for (const auto& [ring_index, verts] : rows[id]) {
      Ring r;
      for (const auto& [vi, pt] : verts) r.push_back(pt);
      p.rings.push_back(std::move(r));
    }
    p.normalize();
    out.push_back(std::move(p));
  }
  return out;
}

void write_polygon_csv(std::ostream& out, const std::vector<Polygon>& polygons) {
  out << "id,ring_index,vertex_index,x,y\n" << std::setprecision(17);
  for (const auto& p : polygons) {
    for (std::size_t r = 0; r < p.rings.size(); ++r) {
      for (std::size_t v = 0; v < p.rings[r].size(); ++v) {
        out << p.id << ',' << r << ',' << v << ',' << p.rings[r][v].x << ',' << p.rings[r][v].y << '\n';
      }
    }
  }
}

std::vector<Polygon> read_polygons(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  if (ext == ".csv") {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open polygon file " + path.string());
    return read_polygon_csv(in);
  }
  return read_geojson(path);
}

void write_mesh_csv(std::ostream& vertices, std::ostream& triangles, const TriMesh& mesh) {
  vertices << "index,x,y,interior\n" << std::setprecision(17);
  for (std::size_t i = 0; i < mesh.num_vertices(); ++i) {
    vertices << i << ',' << mesh.vertices[i].x << ',' << mesh.vertices[i].y << ',' << (mesh.interior[i] ? 1 : 0)
             << '\n';
  }
  triangles << "index,v0,v1,v2\n";
  for (std::size_t t = 0; t < mesh.num_triangles(); ++t) {
    const auto& tri = mesh.triangles[t];
    triangles << t << ',' << tri[0] << ',' << tri[1] << ',' << tri[2] << '\n';
  }
}

TriMesh read_mesh_csv(std::istream& vertices, std::istream& triangles) {
  TriMesh mesh;
  std::string line;
  std::getline(vertices, line);
  while (std::getline(vertices, line)) {
    if (trim(line).empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() < 4) throw DataError("mesh vertex CSV row has fewer than 4 fields");
    mesh.vertices.push_back({parse_double(f[1], "x"), parse_double(f[2], "y")});
    mesh.interior.push_back(f[3] == "1");
  }
  std::getline(triangles, line);
  while (std::getline(triangles, line)) {
    if (trim(line).empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() < 4) throw DataError("mesh triangle CSV row has fewer than 4 fields");
    mesh.triangles.push_back({static_cast<int>(parse_double(f[1], "v0")), static_cast<int>(parse_double(f[2], "v1")),
                              static_cast<int>(parse_double(f[3], "v2"))});
  }
  validate_mesh(mesh);
  return mesh;
}

}  // namespace geoprev
