#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "ssdesc/error.hpp"
#include "ssdesc/image.hpp"

namespace ssdesc {

namespace detail {

// Separable correlation with clamp-to-border replication. `taps[i]` weights the
// sample at offset (i - anchor).
inline GrayImage separable_filter(const GrayImage& img, const std::vector<double>& taps,
                                  int anchor) {
  const int w = img.width(), h = img.height();
  const int k = static_cast<int>(taps.size());
  std::vector<double> tmp(static_cast<std::size_t>(w) * h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int i = 0; i < k; ++i) s += taps[i] * img.clamped(x - anchor + i, y);
      tmp[static_cast<std::size_t>(y) * w + x] = s;
    }
  }
  std::vector<float> out(tmp.size());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int i = 0; i < k; ++i) {
        const int yy = std::clamp(y - anchor + i, 0, h - 1);
        s += taps[i] * tmp[static_cast<std::size_t>(yy) * w + x];
      }
      out[static_cast<std::size_t>(y) * w + x] = static_cast<float>(s);
    }
  }
  return GrayImage(w, h, std::move(out));
}

}  // namespace detail

/// Normalized k x k mean filter. Even kernels put the output pixel at index k/2
/// of the window, so the window spans [x - k/2, x - k/2 + k - 1].
inline GrayImage box_blur(const GrayImage& img, int k) {
  if (k < 1) throw ParameterError("box kernel must be >= 1");
  if (k > std::min(img.width(), img.height())) {
    throw ParameterError("box kernel " + std::to_string(k) + " exceeds image " +
                         std::to_string(img.width()) + "x" + std::to_string(img.height()));
  }
  return detail::separable_filter(img, std::vector<double>(k, 1.0 / k), k / 2);
}

/// Gaussian blur with radius ceil(3 sigma) and clamp borders.
inline GrayImage gaussian_blur(const GrayImage& img, double sigma) {
  if (!(sigma > 0.0)) throw ParameterError("gaussian sigma must be positive");
  const int r = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> taps(2 * r + 1);
  double sum = 0.0;
  for (int i = -r; i <= r; ++i) sum += taps[i + r] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (double& t : taps) t /= sum;
  return detail::separable_filter(img, taps, r);
}

struct ClaheParams {
  double clip_limit = 2.0;
  int tiles_x = 8;
  int tiles_y = 8;
};

/// Contrast-limited adaptive histogram equalization on 256 bins.
///
/// Each tile's histogram is clipped at clip_limit * area / 256, the excess is
/// spread over all bins, and the cumulative histogram becomes the tile mapping.
/// Pixels blend the four nearest tile mappings bilinearly. The mapping is
/// applied as an offset to the input value, so sub-bin detail survives and a
/// tile whose pixels all share one bin passes through unchanged. Images whose
/// extents are not multiples of the grid are padded by border replication.
inline GrayImage clahe(const GrayImage& img, const ClaheParams& p = {}) {
  constexpr int kBins = 256;
  if (!(p.clip_limit >= 1.0)) throw ParameterError("CLAHE clip limit must be >= 1");
  if (p.tiles_x < 1 || p.tiles_y < 1) throw ParameterError("CLAHE tile grid must be >= 1x1");
  const int w = img.width(), h = img.height();
  if (w < p.tiles_x || h < p.tiles_y) {
    throw ParameterError("image smaller than the CLAHE tile grid");
  }
  const int tw = (w + p.tiles_x - 1) / p.tiles_x;
  const int th = (h + p.tiles_y - 1) / p.tiles_y;
  const int area = tw * th;

  auto bin_of = [](float v) { return static_cast<int>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)); };

  std::vector<std::array<double, kBins>> luts(static_cast<std::size_t>(p.tiles_x) * p.tiles_y);
  const int clip = std::max(1, static_cast<int>(p.clip_limit * area / kBins));
  for (int ty = 0; ty < p.tiles_y; ++ty) {
    for (int tx = 0; tx < p.tiles_x; ++tx) {
      std::array<int, kBins> hist{};
      for (int y = ty * th; y < (ty + 1) * th; ++y) {
        for (int x = tx * tw; x < (tx + 1) * tw; ++x) ++hist[bin_of(img.clamped(x, y))];
      }
      auto& lut = luts[static_cast<std::size_t>(ty) * p.tiles_x + tx];
      const int occupied = static_cast<int>(std::count_if(hist.begin(), hist.end(), [](int c) { return c > 0; }));
      if (occupied <= 1) {
        for (int b = 0; b < kBins; ++b) lut[b] = b;
        continue;
      }
      int excess = 0;
      for (int& c : hist) {
        if (c > clip) {
          excess += c - clip;
          c = clip;
        }
      }
      const int batch = excess / kBins;
      int residual = excess - batch * kBins;
      for (int& c : hist) c += batch;
      if (residual > 0) {
        const int step = std::max(kBins / residual, 1);
        for (int b = 0; b < kBins && residual > 0; b += step, --residual) ++hist[b];
      }
      double cdf = 0.0;
      for (int b = 0; b < kBins; ++b) {
        cdf += hist[b];
        lut[b] = std::min(255.0, cdf * 255.0 / area);
      }
    }
  }

  std::vector<float> out(img.size());
  for (int y = 0; y < h; ++y) {
    const double tyf = (y + 0.5) / th - 0.5;
    int ty1 = static_cast<int>(std::floor(tyf));
    const double ya = tyf - ty1;
    int ty2 = ty1 + 1;
    ty1 = std::max(ty1, 0);
    ty2 = std::min(ty2, p.tiles_y - 1);
    for (int x = 0; x < w; ++x) {
      const double txf = (x + 0.5) / tw - 0.5;
      int tx1 = static_cast<int>(std::floor(txf));
      const double xa = txf - tx1;
      int tx2 = tx1 + 1;
      tx1 = std::max(tx1, 0);
      tx2 = std::min(tx2, p.tiles_x - 1);
      const float v = img(x, y);
      const int b = bin_of(v);
      auto at = [&](int ty, int tx) { return luts[static_cast<std::size_t>(ty) * p.tiles_x + tx][b]; };
      const double mapped = (1.0 - ya) * ((1.0 - xa) * at(ty1, tx1) + xa * at(ty1, tx2)) +
                            ya * ((1.0 - xa) * at(ty2, tx1) + xa * at(ty2, tx2));
      out[static_cast<std::size_t>(y) * w + x] =
          std::clamp(static_cast<float>(v + (mapped - b) / 255.0), 0.0f, 1.0f);
    }
  }
  return GrayImage(w, h, std::move(out));
}

}  // namespace ssdesc
