#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ssdesc/error.hpp"

namespace ssdesc {

struct Point2 {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Point2&, const Point2&) = default;
};

/// Single-channel raster with row-major intensities in [0, 1].
class GrayImage {
 public:
  GrayImage() = default;

  GrayImage(int width, int height, float fill = 0.0f) : width_(width), height_(height) {
    if (width <= 0 || height <= 0) {
      throw ShapeError("image extents must be positive, got " + std::to_string(width) + "x" +
                       std::to_string(height));
    }
    data_.assign(static_cast<std::size_t>(width) * height, std::clamp(fill, 0.0f, 1.0f));
  }

  /// Takes ownership of `data`; values are clamped into [0, 1].
  GrayImage(int width, int height, std::vector<float> data) : GrayImage(width, height) {
    if (data.size() != data_.size()) {
      throw ShapeError("image data length " + std::to_string(data.size()) + " != " +
                       std::to_string(width) + "x" + std::to_string(height));
    }
    data_ = std::move(data);
    for (float& v : data_) v = std::clamp(v, 0.0f, 1.0f);
  }

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  float operator()(int x, int y) const { return data_[index(x, y)]; }

  /// Writes a pixel, clamping into [0, 1].
  void set(int x, int y, float v) { data_[index(x, y)] = std::clamp(v, 0.0f, 1.0f); }

  /// Pixel read with coordinates clamped to the border.
  float clamped(int x, int y) const {
    return data_[index(std::clamp(x, 0, width_ - 1), std::clamp(y, 0, height_ - 1))];
  }

  std::span<const float> pixels() const noexcept { return data_; }
  std::span<const float> row(int y) const {
    return std::span<const float>(data_).subspan(static_cast<std::size_t>(y) * width_, width_);
  }

  friend bool operator==(const GrayImage&, const GrayImage&) = default;

 private:
  std::size_t index(int x, int y) const noexcept {
    return static_cast<std::size_t>(y) * width_ + x;
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<float> data_;
};

/// Per-pixel validity flags produced by resampling (1 = sampled from the source).
struct ValidityMask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> valid;

  bool operator()(int x, int y) const {
    return valid[static_cast<std::size_t>(y) * width + x] != 0;
  }
  bool all_valid() const {
    return std::all_of(valid.begin(), valid.end(), [](std::uint8_t v) { return v != 0; });
  }
};

/// 8-bit quantization used by every on-disk format: round half up, clamp to [0, 255].
inline std::uint8_t quantize_u8(float v) {
  const float s = std::clamp(v, 0.0f, 1.0f) * 255.0f + 0.5f;
  return static_cast<std::uint8_t>(std::min(255.0f, s));
}

inline float dequantize_u8(std::uint8_t b) { return static_cast<float>(b) / 255.0f; }

}  // namespace ssdesc
