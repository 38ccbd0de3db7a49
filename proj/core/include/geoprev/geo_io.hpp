#pragma once

#include "geoprev/geometry.hpp"

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace geoprev {

/// Reads Polygon/MultiPolygon geometries from GeoJSON text (a bare geometry,
/// a Feature, or a FeatureCollection). Coordinates are taken as planar map
/// units. A feature's id comes from `id_property` in its properties, then
/// the feature "id", then its position in the collection.
std::vector<Polygon> read_geojson(std::istream& in, const std::string& id_property = "id");
std::vector<Polygon> read_geojson(const std::filesystem::path& path, const std::string& id_property = "id");
void write_geojson(std::ostream& out, const std::vector<Polygon>& polygons);

/// CSV ring format with header: id,ring_index,vertex_index,x,y
std::vector<Polygon> read_polygon_csv(std::istream& in);
void write_polygon_csv(std::ostream& out, const std::vector<Polygon>& polygons);

/// Dispatches on extension: .geojson/.json or .csv.
std::vector<Polygon> read_polygons(const std::filesystem::path& path);

/// Mesh export: vertices CSV (index,x,y,interior) and triangles CSV (index,v0,v1,v2).
void write_mesh_csv(std::ostream& vertices, std::ostream& triangles, const TriMesh& mesh);
TriMesh read_mesh_csv(std::istream& vertices, std::istream& triangles);

/// Splits one CSV line on commas (no quoting support beyond trimming whitespace).
std::vector<std::string> split_csv_line(const std::string& line);

}  // namespace geoprev
