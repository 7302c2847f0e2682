#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "vtla/image.hpp"
#include "vtla/randomization.hpp"
#include "vtla/sensors.hpp"

using namespace vtla;

namespace {

const Shape kSquare{ShapeKind::kSquare, 10.0};

std::array<LightSource, 3> lights_at(double intensity) {
  std::array<LightSource, 3> l{};
  for (auto& s : l) s.intensity = intensity;
  return l;
}

// Intensity-weighted centroid of the imprint above the gel background.
Vec2 imprint_centroid(const GrayImage& f) {
  double sw = 0, sx = 0, sy = 0;
  for (int y = 0; y < f.height; ++y)
    for (int x = 0; x < f.width; ++x) {
      const double w = f.at(x, y) - kGelBackground;
      if (w <= 0) continue;
      sw += w;
      sx += w * (x + 0.5);
      sy += w * (y + 0.5);
    }
  REQUIRE(sw > 0);
  return {sx / sw, sy / sw};
}

double correlation(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

double max_abs_diff(const RgbImage& a, const RgbImage& b) {
  REQUIRE(a.pixels.size() == b.pixels.size());
  double d = 0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i)
    d = std::max(d, static_cast<double>(std::fabs(a.pixels[i] - b.pixels[i])));
  return d;
}

}  // namespace

TEST_SUITE("sensors") {
  TEST_CASE("tactile frames brighten as the press deepens") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const Randomization r = sample_all(seed);
      const auto frames = render_tactile_sequence({1.2, -0.4, 3.0}, kSquare, 2.0, r.physical,
                                                  Side::kLeft, r.tactile);
      CHECK(frames[3].mean() > frames[0].mean());
      for (const auto& f : frames) {
        CHECK(f.width == kTactileFrameSize);
        CHECK(f.height == kTactileFrameSize);
      }
    }
  }

  TEST_CASE("imprint is never empty at the shallowest depth") {
    PhysicalParams p;
    p.contact_depth = randomization_bounds::kDepthMin;
    const auto frames = render_tactile_raw({2.0, 0.0, 0.0}, kSquare, 2.0, p, Side::kLeft);
    int lit = 0;
    for (float v : frames[0].pixels) lit += v > kGelBackground;
    CHECK(lit > 0);
  }

  TEST_CASE("left and right fingers mirror each other") {
    const Randomization r = sample_all(42);
    for (ShapeKind kind : kAllShapes) {
      const Shape peg{kind, default_peg_size(kind)};
      const Pose m{1.7, -0.6, 4.0};
      const Pose mirrored{-m.x, m.y, -m.rz};
      const auto left = render_tactile_raw(m, peg, 1.0, r.physical, Side::kLeft);
      const auto right = render_tactile_raw(mirrored, peg, 1.0, r.physical, Side::kRight);
      for (int k = 0; k < kTactileFrames; ++k) {
        CHECK(left[k].pixels == right[k].pixels);
      }
    }
  }

  TEST_CASE("tactile rendering refuses non-contact poses") {
    CHECK_THROWS_AS(render_tactile_raw({0, 0, 0}, kSquare, 2.0, PhysicalParams{}, Side::kLeft),
                    std::logic_error);
  }

  TEST_CASE("montage dimensions and tile placement") {
    std::array<GrayImage, 4> frames;
    for (int t = 0; t < 4; ++t) {
      frames[t] = GrayImage(112, 112);
      for (int y = 0; y < 112; ++y)
        for (int x = 0; x < 112; ++x) frames[t].at(x, y) = static_cast<float>((x + y + 31 * t) % 200) / 199.0f;
    }
    const TactileMontage m = montage_2x2(frames);
    REQUIRE(m.image.width == 224);
    REQUIRE(m.image.height == 224);
    for (int t = 0; t < 4; ++t) {
      const int ox = (t % 2) * 112, oy = (t / 2) * 112;
      bool same = true;
      for (int y = 0; y < 112; ++y)
        for (int x = 0; x < 112; ++x)
          for (int c = 0; c < 3; ++c) same &= m.image.at(ox + x, oy + y, c) == frames[t].at(x, y);
      CHECK_MESSAGE(same, "tile " << t);
    }

    std::array<GrayImage, 4> black;
    black.fill(GrayImage(112, 112, 0.0f));
    const TactileMontage b = montage_2x2(black);
    CHECK(std::all_of(b.image.pixels.begin(), b.image.pixels.end(), [](float v) { return v == 0.0f; }));
  }

  TEST_CASE("montage rejects bad input") {
    std::vector<GrayImage> three(3, GrayImage(8, 8));
    CHECK_THROWS_AS(montage_2x2(three), std::invalid_argument);
    std::vector<GrayImage> mixed(4, GrayImage(8, 8));
    mixed[2] = GrayImage(8, 9);
    CHECK_THROWS_AS(montage_2x2(mixed), std::invalid_argument);
  }

  TEST_CASE("centred peg leaves a symmetric dark ring") {
    for (double clearance : {1.0, 2.0}) {
      const RgbImage img = render_vision_scene({0, 0, 0}, kSquare, clearance, lights_at(0.4));
      const int row = kVisionSize / 2;
      int left = 0, right = 0;
      for (int x = 0; x < kVisionSize; ++x) {
        if (img.at(x, row, 0) >= 0.3f) continue;
        (x < kVisionSize / 2 ? left : right) += 1;
      }
      const int expected = static_cast<int>(std::lround(clearance / 2.0 * kVisionPxPerMm));
      CHECK(left == expected);
      CHECK(right == expected);
    }
  }

  TEST_CASE("opposite x offsets render as mirror images") {
    for (ShapeKind kind : {ShapeKind::kSquare, ShapeKind::kTriangle, ShapeKind::kRound}) {
      const Shape peg{kind, default_peg_size(kind)};
      const RgbImage a = render_vision_scene({2.5, 0, 0}, peg, 2.0, lights_at(0.4));
      const RgbImage b = render_vision_scene({-2.5, 0, 0}, peg, 2.0, lights_at(0.4));
      double worst = 0;
      for (int y = 0; y < kVisionSize; ++y)
        for (int x = 0; x < kVisionSize; ++x)
          for (int c = 0; c < 3; ++c)
            worst = std::max(worst, static_cast<double>(std::fabs(
                                        a.at(x, y, c) - b.at(kVisionSize - 1 - x, y, c))));
      CHECK(worst < 1e-5);
    }
  }

  TEST_CASE("dim lighting halves luminance") {
    VisionRandom dim = VisionRandom::identity();
    VisionRandom bright = VisionRandom::identity();
    for (auto& l : dim.lights) l.intensity = 0.2;
    for (auto& l : bright.lights) l.intensity = 0.6;
    for (ShapeKind kind : kAllShapes) {
      const Shape peg{kind, default_peg_size(kind)};
      const double d = render_vision({1, -1, 2}, peg, 1.0, dim).mean_luminance();
      const double b = render_vision({1, -1, 2}, peg, 1.0, bright).mean_luminance();
      CHECK(d < 0.5 * b);
    }
  }

  TEST_CASE("imprint centroid tracks x misalignment") {
    PhysicalParams p;
    std::vector<double> xs, cx_left, cx_right, mag, disp;
    const double c = kTactileFrameSize / 2.0;
    for (double x = -3.0; x <= 3.0 + 1e-9; x += 0.25) {
      if (std::fabs(x) < 1.01) continue;  // centred poses fit at this clearance
      const Pose m{x, 0.3, 0.0};
      const Vec2 l = imprint_centroid(render_tactile_raw(m, kSquare, 2.0, p, Side::kLeft)[3]);
      const Vec2 r = imprint_centroid(render_tactile_raw(m, kSquare, 2.0, p, Side::kRight)[3]);
      xs.push_back(x);
      cx_left.push_back(l.x);
      cx_right.push_back(r.x);
      mag.push_back(std::fabs(x));
      disp.push_back(std::fabs(l.x - c));
    }
    REQUIRE(xs.size() >= 10);
    CHECK(correlation(xs, cx_left) > 0.99);
    CHECK(correlation(xs, cx_right) < -0.99);
    CHECK(correlation(mag, disp) > 0.99);
  }

  TEST_CASE("square rotation is visible except at quarter turns") {
    const auto lights = lights_at(0.4);
    const RgbImage base = render_vision_scene({1.5, 0.5, 0.0}, kSquare, 2.0, lights);
    for (double rz : {2.0, 5.0, 30.0, 45.0, -20.0}) {
      CHECK(max_abs_diff(base, render_vision_scene({1.5, 0.5, rz}, kSquare, 2.0, lights)) > 0.1);
    }
    for (double rz : {90.0, -90.0, 180.0}) {
      CHECK(max_abs_diff(base, render_vision_scene({1.5, 0.5, rz}, kSquare, 2.0, lights)) < 1e-4);
    }
  }

  TEST_CASE("observation carries idle gel when no contact") {
    const Randomization r = sample_all(5);
    const Observation obs = render_observation({0, 0, 0}, kSquare, 2.0, r, 0);
    CHECK_FALSE(obs.contact);
    CHECK(obs.tactile_left.image == obs.tactile_right.image);
    const Observation hit = render_observation({2.0, 0.0, 0.0}, kSquare, 2.0, r, 0);
    CHECK(hit.contact);
    CHECK(hit.tactile_left.image.width == 224);
    CHECK(hit.vision.width == kVisionSize);
  }

  TEST_CASE("renders are reproducible and keyed by capture index") {
    const Randomization r = sample_all(123);
    const Observation a = render_observation({1.2, -0.4, 3.0}, kSquare, 2.0, r, 1);
    const Observation b = render_observation({1.2, -0.4, 3.0}, kSquare, 2.0, r, 1);
    const Observation c = render_observation({1.2, -0.4, 3.0}, kSquare, 2.0, r, 2);
    CHECK(sha256_hex(a.vision) == sha256_hex(b.vision));
    CHECK(sha256_hex(a.tactile_left.image) == sha256_hex(b.tactile_left.image));
    CHECK(sha256_hex(a.vision) != sha256_hex(c.vision));
  }

  TEST_CASE("golden observation hashes") {
    const Randomization r = sample_all(2024);
    const Observation o = render_observation({1.2, -0.4, 3.0}, kSquare, 2.0, r, 1);
    CHECK(sha256_hex(o.vision) == "5ba1bfc00ca04d3c1bdda39e1f19caeab11a737641a8dac5b309085165715832");
    CHECK(sha256_hex(o.tactile_left.image) == "e1b3ad0e0b82edebd9badb99602ce1c0804bfce6738540182b41117f3625fd07");
    CHECK(sha256_hex(o.tactile_right.image) == "95d8fd347a8d05d277e251072a914d347218b2c32ccda8c05f11baa826f6d8a5");
  }
}
