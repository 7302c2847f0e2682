#pragma once

#include <array>
#include <string>
#include <string_view>
#include <vector>

namespace vtla {

enum class ShapeKind { kSquare, kTriangle, kHexagon, kPentagon, kRound };

inline constexpr std::array<ShapeKind, 5> kAllShapes = {
    ShapeKind::kSquare, ShapeKind::kTriangle, ShapeKind::kHexagon,
    ShapeKind::kPentagon, ShapeKind::kRound};

inline constexpr int kRoundSegments = 64;

std::string_view shape_name(ShapeKind kind);
/// Throws std::invalid_argument for unknown names.
ShapeKind parse_shape(std::string_view name);
int shape_index(ShapeKind kind);
/// Square, triangle and hexagon are the in-distribution shapes.
bool is_in_distribution(ShapeKind kind);
/// Nominal peg size used by the benchmark (side length, or diameter for round).
double default_peg_size(ShapeKind kind);

/// Peg or hole cross-section. `size_mm` is the side length for polygons and
/// the diameter for round.
struct Shape {
  ShapeKind kind = ShapeKind::kSquare;
  double size_mm = 10.0;
};

/// Hole for `peg` with the given clearance (hole size = peg size + clearance).
Shape hole_for(const Shape& peg, double clearance_mm);

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

/// Planar misalignment: translation in mm, rotation about z in degrees.
struct Pose {
  double x = 0.0;
  double y = 0.0;
  double rz = 0.0;
};

/// Convex polygon with counter-clockwise vertices.
class Polygon {
 public:
  /// Validates convexity, orientation and non-zero area.
  explicit Polygon(std::vector<Vec2> vertices);

  const std::vector<Vec2>& vertices() const { return vertices_; }
  std::size_t size() const { return vertices_.size(); }
  double area() const;

 private:
  std::vector<Vec2> vertices_;
};

/// Regular polygon centred at the origin. The square is axis-aligned; all
/// other shapes put a vertex on +y. Round becomes a regular 64-gon.
Polygon make_polygon(const Shape& shape);

/// Rotate by pose.rz about the origin, then translate by (x, y).
Polygon transform(const Polygon& poly, const Pose& pose);

/// Smallest signed distance from a vertex of the posed peg to the hole
/// boundary; positive when strictly inside.
double containment_margin(const Polygon& hole, const Polygon& peg, const Pose& pose);

/// Boundary tolerance for containment, in mm.
inline constexpr double kContainmentTolerance = 1e-9;

/// True iff every vertex of the posed peg lies inside or on the hole.
bool fits_inside(const Polygon& hole, const Polygon& peg, const Pose& pose);

/// Largest t with fits_inside at (t, 0, rz), bisected to 1e-6 mm.
/// Throws std::domain_error when the peg does not fit even centred.
double max_admissible_offset(const Shape& peg, double clearance_mm, double rz_deg);

}  // namespace vtla
