#pragma once

#include <Eigen/Sparse>

#include <array>
#include <cmath>
#include <span>
#include <string>
#include <vector>

namespace geoprev {

struct Point2 {
  double x = 0.0;
  double y = 0.0;

  friend Point2 operator+(Point2 a, Point2 b) { return {a.x + b.x, a.y + b.y}; }
  friend Point2 operator-(Point2 a, Point2 b) { return {a.x - b.x, a.y - b.y}; }
  friend Point2 operator*(double s, Point2 a) { return {s * a.x, s * a.y}; }
  friend bool operator==(Point2 a, Point2 b) = default;
};

inline double dot(Point2 a, Point2 b) { return a.x * b.x + a.y * b.y; }
inline double cross(Point2 a, Point2 b) { return a.x * b.y - a.y * b.x; }
inline double norm(Point2 a) { return std::hypot(a.x, a.y); }
inline double distance(Point2 a, Point2 b) { return norm(a - b); }
inline bool is_finite(Point2 p) { return std::isfinite(p.x) && std::isfinite(p.y); }

/// Twice the signed area of triangle (a, b, c); positive when counter-clockwise.
inline double orient2d(Point2 a, Point2 b, Point2 c) { return cross(b - a, c - a); }

using Ring = std::vector<Point2>;

struct BoundingBox {
  Point2 lo;
  Point2 hi;

  double width() const { return hi.x - lo.x; }
  double height() const { return hi.y - lo.y; }
  double diagonal() const { return std::hypot(width(), height()); }
  bool contains(Point2 p) const {
    return p.x >= lo.x && p.x <= hi.x && p.y >= lo.y && p.y <= hi.y;
  }
};

/// A planar area made of rings under the even-odd rule.
///
/// Rings are stored open (the closing vertex is implicit). After
/// normalize(), rings at even nesting depth (outer boundaries) are
/// counter-clockwise and rings at odd depth (holes) are clockwise. Several
/// outer rings are allowed, which is how multi-part areas are represented.
struct Polygon {
  std::string id;
  std::vector<Ring> rings;

  /// Signed-area sum over rings; equals the enclosed area once normalized.
  double area() const;
  BoundingBox bounds() const;
  Point2 centroid() const;
  /// Drops duplicate closing vertices, fixes ring orientation by nesting
  /// depth, and throws GeometryError on non-finite input or zero area.
  void normalize();
};

double ring_signed_area(const Ring& ring);

/// Even-odd containment over all rings; points on an edge count as inside.
bool point_in_area(Point2 p, const Polygon& polygon);

/// Euclidean distance from p to the nearest polygon edge (0 on the boundary).
double distance_to_boundary(Point2 p, const Polygon& polygon);

/// Clips every ring of `subject` against a convex counter-clockwise region.
Polygon clip_to_convex(const Polygon& subject, const Ring& convex_ccw);

struct TriMesh {
  std::vector<Point2> vertices;
  std::vector<std::array<int, 3>> triangles;  // counter-clockwise
  std::vector<bool> interior;                 // vertex lies in the study region

  std::size_t num_vertices() const { return vertices.size(); }
  std::size_t num_triangles() const { return triangles.size(); }
  double triangle_area(std::size_t t) const;
  double total_area() const;
};

struct MeshOptions {
  double interior_max_edge = 0.25;
  /// Extension ring width is (extension_factor - 1) times the boundary's
  /// bounding-box diagonal.
  double extension_factor = 1.5;
  double exterior_max_edge = 2.0;
  double min_angle_deg = 20.0;
  /// Rate at which the target edge length grows with distance outside the boundary.
  double grading = 0.5;
  std::size_t max_vertices = 2'000'000;
};

/// Delaunay refinement mesh over the boundary plus a rectangular extension
/// zone. Fine triangles inside, graded up to exterior_max_edge outside.
TriMesh build_mesh(const Polygon& boundary, const MeshOptions& options);

/// Throws GeometryError describing the first violated mesh invariant.
void validate_mesh(const TriMesh& mesh);

double min_angle_deg(const TriMesh& mesh, std::size_t t);

using SparseMatrix = Eigen::SparseMatrix<double>;

struct FemMatrices {
  SparseMatrix c;  // lumped mass, diagonal
  SparseMatrix g;  // stiffness
};

FemMatrices fem_matrices(const TriMesh& mesh);

bool is_symmetric(const SparseMatrix& m, double rel_tol = 1e-12);

/// Point-location index over a fixed mesh.
class MeshLocator {
 public:
  explicit MeshLocator(const TriMesh& mesh);

  /// Triangle containing p (boundary inclusive), or -1 when outside the hull.
  int locate(Point2 p) const;
  /// Barycentric coordinates of p in triangle t.
  std::array<double, 3> barycentric(int t, Point2 p) const;
  const std::array<int, 3>& triangle(int t) const { return mesh_->triangles[t]; }

 private:
  const TriMesh* mesh_;
  BoundingBox box_;
  int nx_ = 1;
  int ny_ = 1;
  std::vector<std::vector<int>> cells_;
};

/// Row-per-point barycentric interpolation weights onto mesh vertices.
struct Projector {
  Eigen::SparseMatrix<double, Eigen::RowMajor> weights;  // points x vertices
  std::vector<bool> outside;                            // row is all-zero

  std::size_t num_points() const { return outside.size(); }
  std::size_t num_outside() const;
};

Projector project(const TriMesh& mesh, std::span<const Point2> points);
Projector project(const MeshLocator& locator, std::size_t num_vertices,
                  std::span<const Point2> points);

}  // namespace geoprev
