#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace apap {

/// Row-major H x W x C float image. Color images use C = 3, values in [0,1].
struct Image {
  int width = 0;
  int height = 0;
  int channels = 3;
  std::vector<float> data;

  Image() = default;
  Image(int w, int h, int c = 3, float fill = 0.0f)
      : width(w), height(h), channels(c),
        data(static_cast<std::size_t>(w) * h * c, fill) {}

  bool empty() const { return data.empty(); }
  std::size_t size() const { return data.size(); }

  float& at(int x, int y, int c) {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  float at(int x, int y, int c) const {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }

  bool same_shape(const Image& other) const {
    return width == other.width && height == other.height &&
           channels == other.channels;
  }
};

/// 8-bit PNG. Gray and gray+alpha inputs are expanded to RGB, alpha dropped.
Image read_png(const std::filesystem::path& path);
void write_png(const Image& image, const std::filesystem::path& path);

/// Little-endian float32 HWC bytes; the guidance wire format.
std::vector<std::uint8_t> encode_float32_le(std::span<const float> values);
std::vector<float> decode_float32_le(std::span<const std::uint8_t> bytes);

void write_raw_float32(const Image& image, const std::filesystem::path& path);

/// 0.5 * sum of squared differences.
double half_squared_distance(const Image& a, const Image& b);

}  // namespace apap
