#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "ssdesc/error.hpp"
#include "ssdesc/image.hpp"
#include "ssdesc/rng.hpp"

namespace ssdesc {

struct SynthParams {
  int width = 720;
  int height = 576;
  /// Lattice spacing of the coarsest octave, in pixels.
  double base_cell = 96.0;
  int octaves = 6;
  double persistence = 0.65;
  int blobs = 14;
  double blob_contrast = 0.12;
  /// Darkening at the corners relative to the center.
  double vignette = 0.35;
};

namespace detail {

// Random lattice sampled with smoothstep-weighted bilinear interpolation.
class ValueLattice {
 public:
  ValueLattice(int cols, int rows, Rng& rng) : cols_(cols), rows_(rows), v_(static_cast<std::size_t>(cols) * rows) {
    for (double& x : v_) x = uniform01(rng);
  }

  double sample(double gx, double gy) const {
    const int x0 = static_cast<int>(std::floor(gx)), y0 = static_cast<int>(std::floor(gy));
    const double fx = smooth(gx - x0), fy = smooth(gy - y0);
    const double a = at(x0, y0), b = at(x0 + 1, y0), c = at(x0, y0 + 1), d = at(x0 + 1, y0 + 1);
    return (1 - fy) * ((1 - fx) * a + fx * b) + fy * ((1 - fx) * c + fx * d);
  }

 private:
  static double smooth(double t) { return t * t * (3.0 - 2.0 * t); }
  double at(int x, int y) const {
    x = std::clamp(x, 0, cols_ - 1);
    y = std::clamp(y, 0, rows_ - 1);
    return v_[static_cast<std::size_t>(y) * cols_ + x];
  }

  int cols_, rows_;
  std::vector<double> v_;
};

inline GrayImage synth_frame(const SynthParams& p, Rng& rng) {
  const int w = p.width, h = p.height;
  std::vector<double> acc(static_cast<std::size_t>(w) * h, 0.0);
  double amp = 1.0, total_amp = 0.0, cell = p.base_cell;
  for (int o = 0; o < p.octaves; ++o) {
    const int cols = static_cast<int>(std::ceil(w / cell)) + 2, rows = static_cast<int>(std::ceil(h / cell)) + 2;
    ValueLattice lattice(cols, rows, rng);
    const double ox = uniform01(rng), oy = uniform01(rng);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        acc[static_cast<std::size_t>(y) * w + x] += amp * lattice.sample(x / cell + ox, y / cell + oy);
      }
    }
    total_amp += amp;
    amp *= p.persistence;
    cell = std::max(2.0, cell / 2.0);
  }
  for (double& v : acc) v /= total_amp;

  // Stretch to the observed range so every frame uses most of [0, 1].
  const auto [lo, hi] = std::minmax_element(acc.begin(), acc.end());
  const double lo_v = *lo, span = std::max(*hi - *lo, 1e-9);
  for (double& v : acc) v = 0.1 + 0.8 * (v - lo_v) / span;

  for (int b = 0; b < p.blobs; ++b) {
    const double cx = uniform(rng, 0, w), cy = uniform(rng, 0, h);
    const double r = uniform(rng, 12.0, 70.0);
    const double a = uniform(rng, -p.blob_contrast, p.blob_contrast);
    const int x0 = std::max(0, static_cast<int>(cx - 3 * r)), x1 = std::min(w - 1, static_cast<int>(cx + 3 * r));
    const int y0 = std::max(0, static_cast<int>(cy - 3 * r)), y1 = std::min(h - 1, static_cast<int>(cy + 3 * r));
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        const double d2 = ((x - cx) * (x - cx) + (y - cy) * (y - cy)) / (r * r);
        acc[static_cast<std::size_t>(y) * w + x] += a * std::exp(-0.5 * d2);
      }
    }
  }

  std::vector<float> out(acc.size());
  const double cx = 0.5 * (w - 1), cy = 0.5 * (h - 1), rmax2 = cx * cx + cy * cy;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double r2 = ((x - cx) * (x - cx) + (y - cy) * (y - cy)) / rmax2;
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      out[i] = static_cast<float>(std::clamp(acc[i] * (1.0 - p.vignette * r2), 0.0, 1.0));
    }
  }
  return GrayImage(w, h, std::move(out));
}

}  // namespace detail

/// Weakly textured grayscale frames: multi-octave value noise, soft blobs and a
/// vignette. Frame i depends only on (seed, i, params).
inline std::vector<GrayImage> synth_frames(int n, const SynthParams& params, std::uint64_t seed) {
  if (n < 1) throw ParameterError("frames must be >= 1");
  if (params.width < 1 || params.height < 1) throw ParameterError("frame size must be positive");
  std::vector<GrayImage> frames;
  frames.reserve(n);
  for (int i = 0; i < n; ++i) {
    Rng rng = derive_rng(seed, static_cast<std::uint64_t>(i));
    frames.push_back(detail::synth_frame(params, rng));
  }
  return frames;
}

}  // namespace ssdesc
