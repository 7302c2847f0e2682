#include "vtla/sensors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

#include "vtla/rng.hpp"

namespace vtla {
namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;

// Imprint layout in the tactile frame.
constexpr double kImprintRadiusMm = 1.4;    // at the deepest press
constexpr double kShiftPxPerMm = 10.0;      // misalignment x / y
constexpr double kShiftPxPerDeg = 4.0;      // misalignment rz
constexpr double kOffsetPxPerMm = 4.0;      // in-gripper peg offsets
constexpr double kShiftLimitPx = 50.0;      // soft limit keeps the imprint in view

// Vision scene.
constexpr double kChamferMm = 0.5;
constexpr double kAmbient = 0.05;
constexpr float kPlateAlbedo[3] = {0.62f, 0.64f, 0.68f};
constexpr float kHoleAlbedo[3] = {0.06f, 0.06f, 0.07f};
constexpr float kPegAlbedo[3] = {0.90f, 0.82f, 0.62f};

/// Edge half-planes n.p <= c of a convex polygon.
struct HalfPlanes {
  std::vector<double> nx, ny, c;
  double min_x, max_x, min_y, max_y;

  explicit HalfPlanes(const Polygon& poly) {
    const auto& v = poly.vertices();
    const std::size_t n = v.size();
    min_x = min_y = std::numeric_limits<double>::infinity();
    max_x = max_y = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
      const Vec2& a = v[i];
      const Vec2& b = v[(i + 1) % n];
      const double ex = b.x - a.x, ey = b.y - a.y;
      const double len = std::hypot(ex, ey);
      nx.push_back(ey / len);
      ny.push_back(-ex / len);
      c.push_back(nx.back() * a.x + ny.back() * a.y);
      min_x = std::min(min_x, a.x);
      max_x = std::max(max_x, a.x);
      min_y = std::min(min_y, a.y);
      max_y = std::max(max_y, a.y);
    }
  }

  /// Signed distance (exact inside, lower bound outside); index of the active edge.
  double sdf(double x, double y, std::size_t* edge = nullptr) const {
    double best = -std::numeric_limits<double>::infinity();
    std::size_t arg = 0;
    for (std::size_t i = 0; i < c.size(); ++i) {
      const double d = nx[i] * x + ny[i] * y - c[i];
      if (d > best) {
        best = d;
        arg = i;
      }
    }
    if (edge) *edge = arg;
    return best;
  }
};

double coverage(double sd_px) { return std::clamp(0.5 - sd_px, 0.0, 1.0); }

double soft_limit(double px) { return kShiftLimitPx * std::tanh(px / kShiftLimitPx); }

double circumradius(const Polygon& p) {
  double r = 0.0;
  for (const Vec2& v : p.vertices()) r = std::max(r, std::hypot(v.x, v.y));
  return r;
}

double lambert(const std::array<LightSource, 3>& lights, double nx, double ny, double nz) {
  double s = kAmbient;
  for (const auto& l : lights) {
    const double d = nx * l.direction[0] + ny * l.direction[1] + nz * l.direction[2];
    if (d > 0.0) s += l.intensity * d;
  }
  return s;
}

}  // namespace

Vec2 imprint_center_px(const Pose& m, const PhysicalParams& phys, Side side) {
  const double sign = side == Side::kLeft ? 1.0 : -1.0;
  const double c = kTactileFrameSize / 2.0;
  const double dx = soft_limit(kShiftPxPerMm * sign * m.x + kOffsetPxPerMm * phys.peg_offset_x);
  const double dy = soft_limit(kShiftPxPerMm * m.y + kShiftPxPerDeg * sign * m.rz +
                               kOffsetPxPerMm * phys.peg_offset_z);
  return {c + dx, c - dy};
}

TactileSequence render_tactile_raw(const Pose& m, const Shape& peg, double clearance_mm,
                                   const PhysicalParams& phys, Side side) {
  const Polygon peg_poly = make_polygon(peg);
  const Polygon hole_poly = make_polygon(hole_for(peg, clearance_mm));
  if (fits_inside(hole_poly, peg_poly, m)) {
    throw std::logic_error("tactile imprint requested without contact");
  }
  const double sign = side == Side::kLeft ? 1.0 : -1.0;
  const Vec2 centre = imprint_center_px(m, phys, side);
  const double unit = 1.0 / circumradius(peg_poly);
  const double stiffness = phys.youngs_modulus / 5.0e5;
  const double amplitude = (0.15 + 0.55 * stiffness) * (0.6 + phys.friction);
  const double softness = 1.0 + 4.0 * (phys.poisson_ratio - 0.3);
  const double cr = std::cos(sign * m.rz * kDegToRad);
  const double sr = std::sin(sign * m.rz * kDegToRad);

  TactileSequence frames;
  for (int k = 0; k < kTactileFrames; ++k) {
    const double depth = phys.contact_depth * (k + 1) / kTactileFrames;
    const double radius_px =
        kImprintRadiusMm * std::sqrt(depth / randomization_bounds::kDepthMax) * kTactilePxPerMm;
    std::vector<Vec2> verts;
    verts.reserve(peg_poly.size());
    for (const Vec2& v : peg_poly.vertices()) {
      const double x = v.x * unit * radius_px;
      const double y = v.y * unit * radius_px;
      // Image rows grow downward, so the y axis flips.
      verts.push_back({centre.x + cr * x - sr * y, centre.y - (sr * x + cr * y)});
    }
    std::reverse(verts.begin(), verts.end());  // restore CCW after the flip
    const HalfPlanes imprint{Polygon(std::move(verts))};
    const double press = amplitude * (0.6 + 0.4 * (k + 1) / kTactileFrames);

    GrayImage frame(kTactileFrameSize, kTactileFrameSize, kGelBackground);
    const int x0 = std::max(0, static_cast<int>(std::floor(imprint.min_x - softness - 1)));
    const int x1 = std::min(kTactileFrameSize - 1, static_cast<int>(std::ceil(imprint.max_x + softness + 1)));
    const int y0 = std::max(0, static_cast<int>(std::floor(imprint.min_y - softness - 1)));
    const int y1 = std::min(kTactileFrameSize - 1, static_cast<int>(std::ceil(imprint.max_y + softness + 1)));
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        const double cov = coverage(imprint.sdf(x + 0.5, y + 0.5) / softness);
        if (cov > 0.0) {
          frame.at(x, y) = std::min(1.0f, static_cast<float>(kGelBackground + press * cov));
        }
      }
    }
    frames[k] = std::move(frame);
  }
  return frames;
}

TactileSequence render_tactile_sequence(const Pose& m, const Shape& peg, double clearance_mm,
                                        const PhysicalParams& phys, Side side,
                                        const TactileRandom& tr) {
  TactileSequence frames = render_tactile_raw(m, peg, clearance_mm, phys, side);
  for (auto& f : frames) apply_color_jitter(f, tr.jitter);
  return frames;
}

TactileSequence render_tactile_sequence(const Pose& m, const Shape& peg, double clearance_mm,
                                        const PhysicalParams& phys, Side side,
                                        std::uint64_t seed) {
  return render_tactile_sequence(m, peg, clearance_mm, phys, side, sample_all(seed).tactile);
}

TactileSequence render_idle_tactile(const TactileRandom& tr) {
  TactileSequence frames;
  for (auto& f : frames) {
    f = GrayImage(kTactileFrameSize, kTactileFrameSize, kGelBackground);
    apply_color_jitter(f, tr.jitter);
  }
  return frames;
}

TactileMontage montage_2x2(std::span<const GrayImage> frames) {
  if (frames.size() != 4) throw std::invalid_argument("montage needs exactly 4 frames");
  const int w = frames[0].width;
  const int h = frames[0].height;
  for (const auto& f : frames) {
    if (f.width != w || f.height != h) throw std::invalid_argument("montage frame size mismatch");
  }
  TactileMontage m{RgbImage(2 * w, 2 * h)};
  for (int t = 0; t < 4; ++t) {
    const int ox = (t % 2) * w;
    const int oy = (t / 2) * h;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const float v = frames[t].at(x, y);
        for (int c = 0; c < 3; ++c) m.image.at(ox + x, oy + y, c) = v;
      }
    }
  }
  return m;
}

RgbImage render_vision_scene(const Pose& m, const Shape& peg, double clearance_mm,
                             const std::array<LightSource, 3>& lights) {
  const HalfPlanes peg_hp{transform(make_polygon(peg), m)};
  const HalfPlanes hole_hp{make_polygon(hole_for(peg, clearance_mm))};
  const double s45 = std::numbers::sqrt2 / 2.0;

  const double up = lambert(lights, 0.0, 0.0, 1.0);
  float plate[3], hole[3], pegc[3];
  for (int c = 0; c < 3; ++c) {
    plate[c] = static_cast<float>(kPlateAlbedo[c] * up);
    hole[c] = static_cast<float>(kHoleAlbedo[c] * up);
    pegc[c] = static_cast<float>(kPegAlbedo[c] * up);
  }
  // Chamfer facets slope down towards the hole; one shade per hole edge.
  std::vector<std::array<float, 3>> chamfer(hole_hp.c.size());
  for (std::size_t e = 0; e < chamfer.size(); ++e) {
    const double s = lambert(lights, -hole_hp.nx[e] * s45, -hole_hp.ny[e] * s45, s45);
    for (int c = 0; c < 3; ++c) chamfer[e][c] = static_cast<float>(kPlateAlbedo[c] * s);
  }

  RgbImage img(kVisionSize, kVisionSize);
  const double half = kVisionSize / 2.0;
  for (int y = 0; y < kVisionSize; ++y) {
    const double wy = (half - (y + 0.5)) / kVisionPxPerMm;
    for (int x = 0; x < kVisionSize; ++x) {
      const double wx = (x + 0.5 - half) / kVisionPxPerMm;
      std::size_t edge = 0;
      const double sd_hole = hole_hp.sdf(wx, wy, &edge) * kVisionPxPerMm;
      const double w_chamfer = coverage(sd_hole - kChamferMm * kVisionPxPerMm);
      const double w_hole = coverage(sd_hole);
      double w_peg = 0.0;
      if (wx >= peg_hp.min_x - 1.0 && wx <= peg_hp.max_x + 1.0 && wy >= peg_hp.min_y - 1.0 &&
          wy <= peg_hp.max_y + 1.0) {
        w_peg = coverage(peg_hp.sdf(wx, wy) * kVisionPxPerMm);
      }
      for (int c = 0; c < 3; ++c) {
        double v = plate[c];
        v += (chamfer[edge][c] - v) * w_chamfer;
        v += (hole[c] - v) * w_hole;
        v += (pegc[c] - v) * w_peg;
        img.at(x, y, c) = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
  return img;
}

RgbImage render_vision(const Pose& m, const Shape& peg, double clearance_mm,
                       const VisionRandom& vr) {
  return apply_vision_augment(render_vision_scene(m, peg, clearance_mm, vr.lights), vr);
}

Observation render_observation(const Pose& m, const Shape& peg, double clearance_mm,
                               const Randomization& r, std::uint64_t capture_index) {
  VisionRandom vr = r.vision;
  vr.noise_seed = hash_combine(r.vision.noise_seed, capture_index);
  Observation obs;
  obs.vision = render_vision(m, peg, clearance_mm, vr);
  const Polygon peg_poly = make_polygon(peg);
  const Polygon hole_poly = make_polygon(hole_for(peg, clearance_mm));
  obs.contact = !fits_inside(hole_poly, peg_poly, m);
  if (obs.contact) {
    const auto left = render_tactile_sequence(m, peg, clearance_mm, r.physical, Side::kLeft, r.tactile);
    const auto right = render_tactile_sequence(m, peg, clearance_mm, r.physical, Side::kRight, r.tactile);
    obs.tactile_left = montage_2x2(left);
    obs.tactile_right = montage_2x2(right);
  } else {
    const auto idle = render_idle_tactile(r.tactile);
    obs.tactile_left = montage_2x2(idle);
    obs.tactile_right = montage_2x2(idle);
  }
  return obs;
}

}  // namespace vtla
