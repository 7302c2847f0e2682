#pragma once

#include <array>
#include <cstdint>
#include <span>

#include "vtla/geometry.hpp"
#include "vtla/image.hpp"
#include "vtla/randomization.hpp"

namespace vtla {

inline constexpr int kTactileFrameSize = 112;
inline constexpr int kTactileFrames = 4;
inline constexpr double kTactilePxPerMm = 20.0;
inline constexpr int kVisionSize = 224;
inline constexpr double kVisionPxPerMm = 8.0;
inline constexpr float kGelBackground = 0.25f;

enum class Side { kLeft, kRight };

/// 2x2 grid of tactile frames, t0 t1 / t2 t3, replicated to three channels.
struct TactileMontage {
  RgbImage image;
};

struct Observation {
  TactileMontage tactile_left;
  TactileMontage tactile_right;
  RgbImage vision;
  /// False for an approach view where the peg would enter without touching;
  /// the tactile montages then show the unloaded gel.
  bool contact = true;
};

using TactileSequence = std::array<GrayImage, kTactileFrames>;

/// Contact imprint frames before colour jitter. Frame k is pressed to depth
/// contact_depth * (k + 1) / 4. Throws std::logic_error when the posed peg
/// fits in the hole (no contact).
TactileSequence render_tactile_raw(const Pose& misalignment, const Shape& peg,
                                   double clearance_mm, const PhysicalParams& phys, Side side);

TactileSequence render_tactile_sequence(const Pose& misalignment, const Shape& peg,
                                        double clearance_mm, const PhysicalParams& phys,
                                        Side side, const TactileRandom& tr);

/// Same, with the tactile jitter drawn from `seed`.
TactileSequence render_tactile_sequence(const Pose& misalignment, const Shape& peg,
                                        double clearance_mm, const PhysicalParams& phys,
                                        Side side, std::uint64_t seed);

/// Frames of an unloaded gel (no imprint), jittered.
TactileSequence render_idle_tactile(const TactileRandom& tr);

/// Throws std::invalid_argument on a count other than 4 or mismatched sizes.
TactileMontage montage_2x2(std::span<const GrayImage> frames);

/// Pixel centre of the imprint in frame coordinates (before clipping).
Vec2 imprint_center_px(const Pose& misalignment, const PhysicalParams& phys, Side side);

/// Top-down orthographic plate, hole and peg with Lambertian shading; no augmentation.
RgbImage render_vision_scene(const Pose& misalignment, const Shape& peg, double clearance_mm,
                             const std::array<LightSource, 3>& lights);

/// Scene followed by apply_vision_augment.
RgbImage render_vision(const Pose& misalignment, const Shape& peg, double clearance_mm,
                       const VisionRandom& vr);

/// Everything a policy sees at one attempt. The vision noise realization is
/// keyed by `capture_index` so that successive captures differ.
Observation render_observation(const Pose& misalignment, const Shape& peg, double clearance_mm,
                               const Randomization& r, std::uint64_t capture_index);

}  // namespace vtla
