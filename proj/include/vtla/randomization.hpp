#pragma once

#include <array>
#include <cstdint>

#include "json.hpp"
#include "vtla/image.hpp"

namespace vtla {

/// Physical and task-related parameters, fixed for one episode.
struct PhysicalParams {
  double youngs_modulus = 3.0e5;  // Pa
  double poisson_ratio = 0.39;
  double friction = 0.45;
  double peg_offset_x = 0.0;  // mm, in gripper
  double peg_offset_z = 0.0;  // mm, in gripper
  double contact_depth = 0.75;  // mm
};

/// Multiplicative brightness/contrast/saturation, additive hue (fraction of a turn).
struct ColorJitter {
  double brightness = 1.0;
  double contrast = 1.0;
  double saturation = 1.0;
  double hue = 0.0;
};

struct LightSource {
  std::array<double, 3> direction{0.0, 0.0, 1.0};  // unit, surface -> light
  double intensity = 0.4;
};

struct VisionRandom {
  std::array<LightSource, 3> lights{};
  double scale = 1.0;
  double translate_x = 0.0;  // px
  double translate_y = 0.0;  // px
  double rotate_deg = 0.0;
  double shear_deg = 0.0;
  ColorJitter jitter{};
  double noise_sigma = 0.0;  // fraction of full scale
  int blur_length = 0;       // px, one of {0, 3, 5}
  double blur_angle_deg = 0.0;
  std::uint64_t noise_seed = 0;

  /// No geometric change, no jitter, no noise, no blur; overhead lights.
  static VisionRandom identity();
};

struct TactileRandom {
  ColorJitter jitter{};
};

struct Randomization {
  PhysicalParams physical;
  VisionRandom vision;
  TactileRandom tactile;
};

namespace randomization_bounds {
inline constexpr double kYoungsMin = 1.0e5, kYoungsMax = 5.0e5;
inline constexpr double kPoissonMin = 0.3, kPoissonMax = 0.48;
inline constexpr double kFrictionMin = 0.2, kFrictionMax = 0.7;
inline constexpr double kOffsetMin = -1.0, kOffsetMax = 1.0;
inline constexpr double kDepthMin = 0.6, kDepthMax = 0.9;
inline constexpr double kLightMin = 0.2, kLightMax = 0.6;
inline constexpr double kScaleMin = 0.9, kScaleMax = 1.1;
inline constexpr double kTranslatePx = 10.0;
inline constexpr double kRotateDeg = 3.0;
inline constexpr double kShearDeg = 3.0;
inline constexpr double kJitterMin = 0.8, kJitterMax = 1.2;
inline constexpr double kHueShift = 0.05;
inline constexpr double kNoiseSigmaMax = 0.02;
}  // namespace randomization_bounds

/// Draws every randomized parameter from its own named stream
/// ("physics", "task", "vision", "tactile") derived from `seed`.
Randomization sample_all(std::uint64_t seed);

/// Throws std::logic_error naming the first field outside its interval.
void check_bounds(const Randomization& r);

/// Affine warp (scale, rotate, shear, translate about the centre; bilinear,
/// border replicated), then colour jitter, Gaussian noise, motion blur.
RgbImage apply_vision_augment(const RgbImage& img, const VisionRandom& vr);

void apply_color_jitter(RgbImage& img, const ColorJitter& j);
/// Brightness and contrast only; saturation and hue are identities on gray.
void apply_color_jitter(GrayImage& img, const ColorJitter& j);

nlohmann::json to_json(const Randomization& r);
Randomization randomization_from_json(const nlohmann::json& j);

}  // namespace vtla
