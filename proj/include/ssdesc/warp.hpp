#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include "ssdesc/homography.hpp"
#include "ssdesc/image.hpp"

namespace ssdesc {

/// Bilinear sample at sub-pixel (u, v), pixel centers on integers. Returns
/// nullopt outside [0, w-1] x [0, h-1]. Integer coordinates are exact.
inline std::optional<float> sample_bilinear(const GrayImage& img, double u, double v) {
  constexpr double kTol = 1e-9;
  const double wmax = img.width() - 1, hmax = img.height() - 1;
  if (!(u >= -kTol && v >= -kTol && u <= wmax + kTol && v <= hmax + kTol)) return std::nullopt;
  u = std::clamp(u, 0.0, wmax);
  v = std::clamp(v, 0.0, hmax);
  const int x0 = static_cast<int>(std::floor(u)), y0 = static_cast<int>(std::floor(v));
  const double fx = u - x0, fy = v - y0;
  const int x1 = std::min(x0 + 1, img.width() - 1), y1 = std::min(y0 + 1, img.height() - 1);
  const double top = (1.0 - fx) * img(x0, y0) + fx * img(x1, y0);
  const double bottom = (1.0 - fx) * img(x0, y1) + fx * img(x1, y1);
  return static_cast<float>((1.0 - fy) * top + fy * bottom);
}

struct WarpResult {
  GrayImage image;
  ValidityMask mask;
};

/// Inverse-mapping warp: output pixel p (offset by `origin` in the target frame)
/// samples `img` at H^-1(p). Samples outside the source get fill 0 and mask 0.
inline WarpResult warp(const GrayImage& img, const Homography& h, int out_width, int out_height,
                       Point2 origin = {}) {
  const Eigen::Matrix3d inv = h.inverse().matrix();
  std::vector<float> out(static_cast<std::size_t>(out_width) * out_height, 0.0f);
  ValidityMask mask{out_width, out_height, std::vector<std::uint8_t>(out.size(), 0)};
  for (int y = 0; y < out_height; ++y) {
    const double py = y + origin.y;
    for (int x = 0; x < out_width; ++x) {
      const double px = x + origin.x;
      const double wz = inv(2, 0) * px + inv(2, 1) * py + inv(2, 2);
      if (std::abs(wz) < 1e-15) continue;
      const double u = (inv(0, 0) * px + inv(0, 1) * py + inv(0, 2)) / wz;
      const double v = (inv(1, 0) * px + inv(1, 1) * py + inv(1, 2)) / wz;
      if (auto s = sample_bilinear(img, u, v)) {
        const std::size_t i = static_cast<std::size_t>(y) * out_width + x;
        out[i] = *s;
        mask.valid[i] = 1;
      }
    }
  }
  return {GrayImage(out_width, out_height, std::move(out)), std::move(mask)};
}

}  // namespace ssdesc
