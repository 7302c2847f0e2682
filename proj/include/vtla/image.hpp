#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace vtla {

/// Single-channel image, row-major, intensities in [0, 1].
struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<float> pixels;

  GrayImage() = default;
  GrayImage(int w, int h, float fill = 0.0f)
      : width(w), height(h), pixels(static_cast<std::size_t>(w) * h, fill) {}

  float& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }
  float at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
  double mean() const;
};

/// Interleaved RGB image, row-major, intensities in [0, 1].
struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<float> pixels;

  RgbImage() = default;
  RgbImage(int w, int h, float fill = 0.0f)
      : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * 3, fill) {}

  float& at(int x, int y, int c) {
    return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
  float at(int x, int y, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
  double mean_luminance() const;
  bool operator==(const RgbImage&) const = default;
};

/// 8-bit quantization, round-half-up with clamping to [0, 255].
inline std::uint8_t quantize(float v) {
  const float scaled = v * 255.0f + 0.5f;
  if (!(scaled >= 1.0f)) return 0;  // also NaN
  if (scaled >= 255.0f) return 255;
  return static_cast<std::uint8_t>(static_cast<int>(scaled));  // floor for positive values
}

/// Round-trip through 8 bits; what a consumer of the PNG would see.
RgbImage quantized(const RgbImage& img);

std::vector<std::uint8_t> encode_png(const RgbImage& img);
RgbImage decode_png(std::span<const std::uint8_t> bytes);

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> read_file(const std::filesystem::path& path);

std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string sha256_hex(const RgbImage& img);

std::string base64_encode(std::span<const std::uint8_t> bytes);
/// Throws std::invalid_argument on malformed input.
std::vector<std::uint8_t> base64_decode(std::string_view text);

}  // namespace vtla
