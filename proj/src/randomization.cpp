#include "vtla/randomization.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include "vtla/rng.hpp"

namespace vtla {
namespace {

namespace rb = randomization_bounds;
constexpr double kDegToRad = std::numbers::pi / 180.0;

ColorJitter sample_jitter(RandomStream& s) {
  ColorJitter j;
  j.brightness = s.uniform(rb::kJitterMin, rb::kJitterMax);
  j.contrast = s.uniform(rb::kJitterMin, rb::kJitterMax);
  j.saturation = s.uniform(rb::kJitterMin, rb::kJitterMax);
  j.hue = s.uniform(-rb::kHueShift, rb::kHueShift);
  return j;
}

std::array<double, 3> sample_direction(RandomStream& s) {
  const double z = s.uniform(-1.0, 1.0);
  const double phi = s.uniform(0.0, 2.0 * std::numbers::pi);
  const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
  std::array<double, 3> d{r * std::cos(phi), r * std::sin(phi), z};
  const double n = std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
  for (double& c : d) c /= n;
  return d;
}

void require(bool ok, const char* field) {
  if (!ok) throw std::logic_error(std::string("randomization out of bounds: ") + field);
}

bool within(double v, double lo, double hi) { return v >= lo && v <= hi; }

void check_jitter(const ColorJitter& j) {
  require(within(j.brightness, rb::kJitterMin, rb::kJitterMax), "jitter.brightness");
  require(within(j.contrast, rb::kJitterMin, rb::kJitterMax), "jitter.contrast");
  require(within(j.saturation, rb::kJitterMin, rb::kJitterMax), "jitter.saturation");
  require(within(j.hue, -rb::kHueShift, rb::kHueShift), "jitter.hue");
}

float clamp01(float v) { return std::clamp(v, 0.0f, 1.0f); }

// All three channels at once; per channel the arithmetic is a plain bilinear blend.
std::array<float, 3> sample_bilinear(const RgbImage& img, double x, double y) {
  x = std::clamp(x, 0.0, static_cast<double>(img.width - 1));
  y = std::clamp(y, 0.0, static_cast<double>(img.height - 1));
  const int x0 = static_cast<int>(std::floor(x));
  const int y0 = static_cast<int>(std::floor(y));
  const int x1 = std::min(x0 + 1, img.width - 1);
  const int y1 = std::min(y0 + 1, img.height - 1);
  const float fx = static_cast<float>(x - x0);
  const float fy = static_cast<float>(y - y0);
  std::array<float, 3> out;
  for (int c = 0; c < 3; ++c) {
    const float top = img.at(x0, y0, c) * (1.0f - fx) + img.at(x1, y0, c) * fx;
    const float bot = img.at(x0, y1, c) * (1.0f - fx) + img.at(x1, y1, c) * fx;
    out[c] = top * (1.0f - fy) + bot * fy;
  }
  return out;
}

RgbImage affine_warp(const RgbImage& img, const VisionRandom& vr) {
  const double cr = std::cos(vr.rotate_deg * kDegToRad);
  const double sr = std::sin(vr.rotate_deg * kDegToRad);
  const double sh = std::tan(vr.shear_deg * kDegToRad);
  // M = Shear * Rotate * Scale.
  const double m00 = vr.scale * (cr + sh * sr);
  const double m01 = vr.scale * (-sr + sh * cr);
  const double m10 = vr.scale * sr;
  const double m11 = vr.scale * cr;
  if (m00 == 1.0 && m01 == 0.0 && m10 == 0.0 && m11 == 1.0 && vr.translate_x == 0.0 &&
      vr.translate_y == 0.0) {
    return img;
  }
  const double det = m00 * m11 - m01 * m10;
  const double i00 = m11 / det, i01 = -m01 / det, i10 = -m10 / det, i11 = m00 / det;
  const double cx = img.width / 2.0;
  const double cy = img.height / 2.0;
  RgbImage out(img.width, img.height);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      const double dx = x + 0.5 - cx - vr.translate_x;
      const double dy = y + 0.5 - cy - vr.translate_y;
      const double sx = cx + i00 * dx + i01 * dy - 0.5;
      const double sy = cy + i10 * dx + i11 * dy - 0.5;
      const auto rgb = sample_bilinear(img, sx, sy);
      for (int c = 0; c < 3; ++c) out.at(x, y, c) = rgb[c];
    }
  }
  return out;
}

void rgb_to_hsv(float r, float g, float b, float& h, float& s, float& v) {
  const float mx = std::max({r, g, b});
  const float mn = std::min({r, g, b});
  const float d = mx - mn;
  v = mx;
  s = mx > 0.0f ? d / mx : 0.0f;
  if (d <= 0.0f) {
    h = 0.0f;
  } else if (mx == r) {
    h = std::fmod((g - b) / d + 6.0f, 6.0f) / 6.0f;
  } else if (mx == g) {
    h = ((b - r) / d + 2.0f) / 6.0f;
  } else {
    h = ((r - g) / d + 4.0f) / 6.0f;
  }
}

void hsv_to_rgb(float h, float s, float v, float& r, float& g, float& b) {
  const float hh = (h - std::floor(h)) * 6.0f;
  const int sector = static_cast<int>(hh) % 6;
  const float f = hh - std::floor(hh);
  const float p = v * (1.0f - s);
  const float q = v * (1.0f - s * f);
  const float t = v * (1.0f - s * (1.0f - f));
  switch (sector) {
    case 0: r = v; g = t; b = p; break;
    case 1: r = q; g = v; b = p; break;
    case 2: r = p; g = v; b = t; break;
    case 3: r = p; g = q; b = v; break;
    case 4: r = t; g = p; b = v; break;
    default: r = v; g = p; b = q; break;
  }
}

float luminance(float r, float g, float b) { return 0.299f * r + 0.587f * g + 0.114f * b; }

}  // namespace

VisionRandom VisionRandom::identity() {
  VisionRandom vr;
  for (auto& l : vr.lights) l = LightSource{{0.0, 0.0, 1.0}, 0.4};
  return vr;
}

Randomization sample_all(std::uint64_t seed) {
  Randomization r;
  RandomStream physics(seed, "physics");
  r.physical.youngs_modulus = physics.uniform(rb::kYoungsMin, rb::kYoungsMax);
  r.physical.poisson_ratio = physics.uniform(rb::kPoissonMin, rb::kPoissonMax);
  r.physical.friction = physics.uniform(rb::kFrictionMin, rb::kFrictionMax);

  RandomStream task(seed, "task");
  r.physical.peg_offset_x = task.uniform(rb::kOffsetMin, rb::kOffsetMax);
  r.physical.peg_offset_z = task.uniform(rb::kOffsetMin, rb::kOffsetMax);
  r.physical.contact_depth = task.uniform(rb::kDepthMin, rb::kDepthMax);

  RandomStream vision(seed, "vision");
  for (auto& light : r.vision.lights) {
    light.direction = sample_direction(vision);
    light.intensity = vision.uniform(rb::kLightMin, rb::kLightMax);
  }
  r.vision.scale = vision.uniform(rb::kScaleMin, rb::kScaleMax);
  r.vision.translate_x = vision.uniform(-rb::kTranslatePx, rb::kTranslatePx);
  r.vision.translate_y = vision.uniform(-rb::kTranslatePx, rb::kTranslatePx);
  r.vision.rotate_deg = vision.uniform(-rb::kRotateDeg, rb::kRotateDeg);
  r.vision.shear_deg = vision.uniform(-rb::kShearDeg, rb::kShearDeg);
  r.vision.jitter = sample_jitter(vision);
  r.vision.noise_sigma = vision.uniform(0.0, rb::kNoiseSigmaMax);
  static constexpr int kBlurLengths[] = {0, 3, 5};
  r.vision.blur_length = kBlurLengths[vision.below(3)];
  r.vision.blur_angle_deg = vision.uniform(0.0, 180.0);
  r.vision.noise_seed = vision.next_u64();

  RandomStream tactile(seed, "tactile");
  r.tactile.jitter = sample_jitter(tactile);
  return r;
}

void check_bounds(const Randomization& r) {
  const auto& p = r.physical;
  require(within(p.youngs_modulus, rb::kYoungsMin, rb::kYoungsMax), "youngs_modulus");
  require(within(p.poisson_ratio, rb::kPoissonMin, rb::kPoissonMax), "poisson_ratio");
  require(within(p.friction, rb::kFrictionMin, rb::kFrictionMax), "friction");
  require(within(p.peg_offset_x, rb::kOffsetMin, rb::kOffsetMax), "peg_offset_x");
  require(within(p.peg_offset_z, rb::kOffsetMin, rb::kOffsetMax), "peg_offset_z");
  require(within(p.contact_depth, rb::kDepthMin, rb::kDepthMax), "contact_depth");
  const auto& v = r.vision;
  for (const auto& l : v.lights) {
    require(within(l.intensity, rb::kLightMin, rb::kLightMax), "light.intensity");
    const double n = std::sqrt(l.direction[0] * l.direction[0] + l.direction[1] * l.direction[1] +
                               l.direction[2] * l.direction[2]);
    require(std::abs(n - 1.0) < 1e-12, "light.direction");
  }
  require(within(v.scale, rb::kScaleMin, rb::kScaleMax), "scale");
  require(within(v.translate_x, -rb::kTranslatePx, rb::kTranslatePx), "translate_x");
  require(within(v.translate_y, -rb::kTranslatePx, rb::kTranslatePx), "translate_y");
  require(within(v.rotate_deg, -rb::kRotateDeg, rb::kRotateDeg), "rotate_deg");
  require(within(v.shear_deg, -rb::kShearDeg, rb::kShearDeg), "shear_deg");
  require(within(v.noise_sigma, 0.0, rb::kNoiseSigmaMax), "noise_sigma");
  require(v.blur_length == 0 || v.blur_length == 3 || v.blur_length == 5, "blur_length");
  check_jitter(v.jitter);
  check_jitter(r.tactile.jitter);
}

void apply_color_jitter(RgbImage& img, const ColorJitter& j) {
  auto& px = img.pixels;
  const std::size_t n = px.size() / 3;
  if (j.brightness != 1.0) {
    const float b = static_cast<float>(j.brightness);
    for (float& v : px) v = clamp01(v * b);
  }
  if (j.contrast != 1.0) {
    const float mean = static_cast<float>(img.mean_luminance());
    const float c = static_cast<float>(j.contrast);
    for (float& v : px) v = clamp01(mean + (v - mean) * c);
  }
  if (j.saturation != 1.0) {
    const float s = static_cast<float>(j.saturation);
    for (std::size_t i = 0; i < n; ++i) {
      const float g = luminance(px[3 * i], px[3 * i + 1], px[3 * i + 2]);
      for (int c = 0; c < 3; ++c) px[3 * i + c] = clamp01(g + (px[3 * i + c] - g) * s);
    }
  }
  if (j.hue != 0.0) {
    const float dh = static_cast<float>(j.hue);
    for (std::size_t i = 0; i < n; ++i) {
      float h, s, v;
      rgb_to_hsv(px[3 * i], px[3 * i + 1], px[3 * i + 2], h, s, v);
      hsv_to_rgb(h + dh, s, v, px[3 * i], px[3 * i + 1], px[3 * i + 2]);
    }
  }
}

void apply_color_jitter(GrayImage& img, const ColorJitter& j) {
  if (j.brightness != 1.0) {
    const float b = static_cast<float>(j.brightness);
    for (float& v : img.pixels) v = clamp01(v * b);
  }
  if (j.contrast != 1.0) {
    const float mean = static_cast<float>(img.mean());
    const float c = static_cast<float>(j.contrast);
    for (float& v : img.pixels) v = clamp01(mean + (v - mean) * c);
  }
}

RgbImage apply_vision_augment(const RgbImage& img, const VisionRandom& vr) {
  if (img.width < 32 || img.height < 32) {
    throw std::invalid_argument("vision augmentation needs at least 32x32 pixels");
  }
  RgbImage out = affine_warp(img, vr);
  apply_color_jitter(out, vr.jitter);

  if (vr.noise_sigma > 0.0) {
    RandomStream noise(vr.noise_seed, "pixel_noise");
    auto& px = out.pixels;
    for (std::size_t i = 0; i < px.size(); i += 2) {
      const auto [n0, n1] = noise.normal_pair();
      px[i] = clamp01(px[i] + static_cast<float>(vr.noise_sigma * n0));
      if (i + 1 < px.size()) px[i + 1] = clamp01(px[i + 1] + static_cast<float>(vr.noise_sigma * n1));
    }
  }

  if (vr.blur_length > 1) {
    const RgbImage src = out;
    const double ux = std::cos(vr.blur_angle_deg * kDegToRad);
    const double uy = std::sin(vr.blur_angle_deg * kDegToRad);
    const int len = vr.blur_length;
    const float inv = 1.0f / static_cast<float>(len);
    for (int y = 0; y < out.height; ++y) {
      for (int x = 0; x < out.width; ++x) {
        std::array<float, 3> acc{};
        for (int k = 0; k < len; ++k) {
          const double t = k - (len - 1) / 2.0;
          const auto rgb = sample_bilinear(src, x + t * ux, y + t * uy);
          for (int c = 0; c < 3; ++c) acc[c] += rgb[c];
        }
        for (int c = 0; c < 3; ++c) out.at(x, y, c) = clamp01(acc[c] * inv);
      }
    }
  }
  return out;
}

nlohmann::json to_json(const Randomization& r) {
  auto jitter = [](const ColorJitter& j) {
    return nlohmann::json{{"brightness", j.brightness},
                          {"contrast", j.contrast},
                          {"saturation", j.saturation},
                          {"hue", j.hue}};
  };
  nlohmann::json lights = nlohmann::json::array();
  for (const auto& l : r.vision.lights) {
    lights.push_back({{"direction", l.direction}, {"intensity", l.intensity}});
  }
  const auto& p = r.physical;
  const auto& v = r.vision;
  return {
      {"physical",
       {{"youngs_modulus", p.youngs_modulus},
        {"poisson_ratio", p.poisson_ratio},
        {"friction", p.friction},
        {"peg_offset_x", p.peg_offset_x},
        {"peg_offset_z", p.peg_offset_z},
        {"contact_depth", p.contact_depth}}},
      {"vision",
       {{"lights", lights},
        {"scale", v.scale},
        {"translate_px", {v.translate_x, v.translate_y}},
        {"rotate_deg", v.rotate_deg},
        {"shear_deg", v.shear_deg},
        {"jitter", jitter(v.jitter)},
        {"noise_sigma", v.noise_sigma},
        {"blur_length", v.blur_length},
        {"blur_angle_deg", v.blur_angle_deg},
        {"noise_seed", v.noise_seed}}},
      {"tactile", {{"jitter", jitter(r.tactile.jitter)}}},
  };
}

Randomization randomization_from_json(const nlohmann::json& j) {
  auto jitter = [](const nlohmann::json& o) {
    return ColorJitter{o.at("brightness").get<double>(), o.at("contrast").get<double>(),
                       o.at("saturation").get<double>(), o.at("hue").get<double>()};
  };
  Randomization r;
  const auto& p = j.at("physical");
  r.physical = {p.at("youngs_modulus").get<double>(), p.at("poisson_ratio").get<double>(),
                p.at("friction").get<double>(),       p.at("peg_offset_x").get<double>(),
                p.at("peg_offset_z").get<double>(),   p.at("contact_depth").get<double>()};
  const auto& v = j.at("vision");
  for (std::size_t i = 0; i < r.vision.lights.size(); ++i) {
    r.vision.lights[i].direction = v.at("lights").at(i).at("direction").get<std::array<double, 3>>();
    r.vision.lights[i].intensity = v.at("lights").at(i).at("intensity").get<double>();
  }
  r.vision.scale = v.at("scale").get<double>();
  r.vision.translate_x = v.at("translate_px").at(0).get<double>();
  r.vision.translate_y = v.at("translate_px").at(1).get<double>();
  r.vision.rotate_deg = v.at("rotate_deg").get<double>();
  r.vision.shear_deg = v.at("shear_deg").get<double>();
  r.vision.jitter = jitter(v.at("jitter"));
  r.vision.noise_sigma = v.at("noise_sigma").get<double>();
  r.vision.blur_length = v.at("blur_length").get<int>();
  r.vision.blur_angle_deg = v.at("blur_angle_deg").get<double>();
  r.vision.noise_seed = v.at("noise_seed").get<std::uint64_t>();
  r.tactile.jitter = jitter(j.at("tactile").at("jitter"));
  return r;
}

}  // namespace vtla
