#include "vtla/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace vtla {
namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;

double cross(const Vec2& o, const Vec2& a, const Vec2& b) {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

}  // namespace

std::string_view shape_name(ShapeKind kind) {
  switch (kind) {
    case ShapeKind::kSquare: return "square";
    case ShapeKind::kTriangle: return "triangle";
    case ShapeKind::kHexagon: return "hexagon";
    case ShapeKind::kPentagon: return "pentagon";
    case ShapeKind::kRound: return "round";
  }
  return "unknown";
}

ShapeKind parse_shape(std::string_view name) {
  for (ShapeKind k : kAllShapes) {
    if (shape_name(k) == name) return k;
  }
  throw std::invalid_argument("unknown shape: " + std::string(name));
}

int shape_index(ShapeKind kind) { return static_cast<int>(kind); }

bool is_in_distribution(ShapeKind kind) {
  return kind == ShapeKind::kSquare || kind == ShapeKind::kTriangle ||
         kind == ShapeKind::kHexagon;
}

double default_peg_size(ShapeKind kind) {
  // Sizes keep the circumradius of every peg between 6 and 7.1 mm.
  switch (kind) {
    case ShapeKind::kSquare: return 10.0;
    case ShapeKind::kTriangle: return 12.0;
    case ShapeKind::kHexagon: return 6.0;
    case ShapeKind::kPentagon: return 8.0;
    case ShapeKind::kRound: return 12.0;
  }
  return 10.0;
}

Shape hole_for(const Shape& peg, double clearance_mm) {
  if (!(clearance_mm > 0.0)) throw std::invalid_argument("clearance must be positive");
  return Shape{peg.kind, peg.size_mm + clearance_mm};
}

Polygon::Polygon(std::vector<Vec2> vertices) : vertices_(std::move(vertices)) {
  const std::size_t n = vertices_.size();
  if (n < 3) throw std::invalid_argument("polygon needs at least 3 vertices");
  for (std::size_t i = 0; i < n; ++i) {
    const double c = cross(vertices_[i], vertices_[(i + 1) % n], vertices_[(i + 2) % n]);
    if (!(c > 0.0)) throw std::invalid_argument("polygon must be convex and counter-clockwise");
  }
  if (!(area() > 0.0)) throw std::invalid_argument("degenerate polygon");
}

double Polygon::area() const {
  double twice = 0.0;
  const std::size_t n = vertices_.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2& a = vertices_[i];
    const Vec2& b = vertices_[(i + 1) % n];
    twice += a.x * b.y - b.x * a.y;
  }
  return 0.5 * twice;
}

Polygon make_polygon(const Shape& shape) {
  if (!(shape.size_mm > 0.0) || !std::isfinite(shape.size_mm)) {
    throw std::invalid_argument("shape size must be positive");
  }
  int n = 0;
  double start = std::numbers::pi / 2.0;
  switch (shape.kind) {
    case ShapeKind::kSquare: n = 4; start = std::numbers::pi / 4.0; break;
    case ShapeKind::kTriangle: n = 3; break;
    case ShapeKind::kHexagon: n = 6; break;
    case ShapeKind::kPentagon: n = 5; break;
    case ShapeKind::kRound: n = kRoundSegments; break;
  }
  const double radius = shape.kind == ShapeKind::kRound
                            ? shape.size_mm / 2.0
                            : shape.size_mm / (2.0 * std::sin(std::numbers::pi / n));
  std::vector<Vec2> v;
  v.reserve(n);
  for (int k = 0; k < n; ++k) {
    const double a = start + 2.0 * std::numbers::pi * k / n;
    v.push_back({radius * std::cos(a), radius * std::sin(a)});
  }
  if (shape.kind == ShapeKind::kSquare) {
    // Exact corners; the trig route leaves 1e-16 residue.
    const double h = shape.size_mm / 2.0;
    v = {{h, h}, {-h, h}, {-h, -h}, {h, -h}};
  }
  return Polygon(std::move(v));
}

Polygon transform(const Polygon& poly, const Pose& pose) {
  const double c = std::cos(pose.rz * kDegToRad);
  const double s = std::sin(pose.rz * kDegToRad);
  std::vector<Vec2> out;
  out.reserve(poly.size());
  for (const Vec2& p : poly.vertices()) {
    out.push_back({c * p.x - s * p.y + pose.x, s * p.x + c * p.y + pose.y});
  }
  return Polygon(std::move(out));
}

double containment_margin(const Polygon& hole, const Polygon& peg, const Pose& pose) {
  const Polygon placed = transform(peg, pose);
  const auto& hv = hole.vertices();
  const std::size_t n = hv.size();
  double margin = std::numeric_limits<double>::infinity();
  for (const Vec2& p : placed.vertices()) {
    for (std::size_t i = 0; i < n; ++i) {
      const Vec2& a = hv[i];
      const Vec2& b = hv[(i + 1) % n];
      const double len = std::hypot(b.x - a.x, b.y - a.y);
      margin = std::min(margin, cross(a, b, p) / len);
    }
  }
  return margin;
}

bool fits_inside(const Polygon& hole, const Polygon& peg, const Pose& pose) {
  return containment_margin(hole, peg, pose) >= -kContainmentTolerance;
}

double max_admissible_offset(const Shape& peg, double clearance_mm, double rz_deg) {
  const Polygon peg_poly = make_polygon(peg);
  const Polygon hole_poly = make_polygon(hole_for(peg, clearance_mm));
  if (!fits_inside(hole_poly, peg_poly, {0.0, 0.0, rz_deg})) {
    throw std::domain_error("peg does not fit centred at this rotation");
  }
  double lo = 0.0;
  double hi = peg.size_mm + clearance_mm;
  while (hi - lo > 1e-7) {
    const double mid = 0.5 * (lo + hi);
    if (fits_inside(hole_poly, peg_poly, {mid, 0.0, rz_deg})) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return lo;
}

}  // namespace vtla
