#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ssdesc/error.hpp"
#include "ssdesc/homography.hpp"
#include "ssdesc/image.hpp"
#include "ssdesc/matching.hpp"
#include "ssdesc/parallel.hpp"
#include "ssdesc/rng.hpp"
#include "ssdesc/warp.hpp"

namespace ssdesc {

struct Correspondence {
  Point2 source;
  Point2 target;
};

namespace detail {

// Similarity that moves the centroid to 0 and the RMS distance to sqrt(2).
inline Eigen::Matrix3d hartley_normalizer(const std::vector<Point2>& pts) {
  double cx = 0.0, cy = 0.0;
  for (const auto& p : pts) {
    cx += p.x;
    cy += p.y;
  }
  cx /= pts.size();
  cy /= pts.size();
  double ms = 0.0;
  for (const auto& p : pts) ms += (p.x - cx) * (p.x - cx) + (p.y - cy) * (p.y - cy);
  const double rms = std::sqrt(ms / pts.size());
  if (!(rms > 1e-12)) throw DegeneracyError("all points coincide");
  const double s = std::sqrt(2.0) / rms;
  Eigen::Matrix3d t;
  t << s, 0, -s * cx, 0, s, -s * cy, 0, 0, 1;
  return t;
}

inline bool has_collinear_triple(const std::vector<Point2>& p, double tol) {
  for (std::size_t a = 0; a < p.size(); ++a) {
    for (std::size_t b = a + 1; b < p.size(); ++b) {
      for (std::size_t c = b + 1; c < p.size(); ++c) {
        const double cross = (p[b].x - p[a].x) * (p[c].y - p[a].y) - (p[b].y - p[a].y) * (p[c].x - p[a].x);
        if (std::abs(cross) <= tol) return true;
      }
    }
  }
  return false;
}

}  // namespace detail

inline constexpr double kMaxDltCondition = 1e12;

/// Hartley-normalized DLT. Minimal (4-point) sets are rejected when three
/// points on either side are collinear; any set is rejected when the system's
/// two smallest singular directions are not separated (condition > 1e12).
inline Homography estimate_homography_dlt(const std::vector<Correspondence>& c) {
  if (c.size() < 4) throw DegeneracyError("homography needs at least 4 correspondences");
  std::vector<Point2> src(c.size()), dst(c.size());
  for (std::size_t i = 0; i < c.size(); ++i) {
    src[i] = c[i].source;
    dst[i] = c[i].target;
    if (!std::isfinite(src[i].x) || !std::isfinite(src[i].y) || !std::isfinite(dst[i].x) || !std::isfinite(dst[i].y)) {
      throw ParameterError("correspondence " + std::to_string(i) + " has non-finite coordinates");
    }
  }
  const Eigen::Matrix3d ts = detail::hartley_normalizer(src), td = detail::hartley_normalizer(dst);
  auto normalize = [](const Eigen::Matrix3d& t, Point2 p) { return Point2{t(0, 0) * p.x + t(0, 2), t(1, 1) * p.y + t(1, 2)}; };
  for (auto& p : src) p = normalize(ts, p);
  for (auto& p : dst) p = normalize(td, p);
  if (c.size() == 4 && (detail::has_collinear_triple(src, 1e-9) || detail::has_collinear_triple(dst, 1e-9))) {
    throw DegeneracyError("three of the four points are collinear");
  }

  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(2 * static_cast<Eigen::Index>(c.size()), 9);
  for (std::size_t i = 0; i < c.size(); ++i) {
    const double x = src[i].x, y = src[i].y, u = dst[i].x, v = dst[i].y;
    const auto r = 2 * static_cast<Eigen::Index>(i);
    a.row(r) << 0, 0, 0, -x, -y, -1, v * x, v * y, v;
    a.row(r + 1) << x, y, 1, 0, 0, 0, -u * x, -u * y, -u;
  }
  // A 2N x 9 system has at most rank 8; pad to 9 rows so the SVD exposes all 9 directions.
  if (a.rows() < 9) {
    a.conservativeResize(9, 9);
    a.row(8).setZero();
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const auto& s = svd.singularValues();
  if (!(s(7) > 0.0) || s(0) / s(7) > kMaxDltCondition) {
    throw DegeneracyError("rank-deficient homography system");
  }
  const Eigen::VectorXd h = svd.matrixV().col(8);
  Eigen::Matrix3d hn;
  hn << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), h(8);
  const Eigen::Matrix3d m = td.inverse() * hn * ts;
  if (std::abs(m(2, 2)) < 1e-15) throw DegeneracyError("recovered homography has h33 = 0");
  try {
    return Homography(m);
  } catch (const NumericalError& e) {
    throw DegeneracyError(e.what());
  }
}

inline double reprojection_error(const Homography& h, const Correspondence& c) {
  const Eigen::Matrix3d& m = h.matrix();
  const double w = m(2, 0) * c.source.x + m(2, 1) * c.source.y + m(2, 2);
  if (std::abs(w) < 1e-15) return std::numeric_limits<double>::infinity();
  const double x = (m(0, 0) * c.source.x + m(0, 1) * c.source.y + m(0, 2)) / w;
  const double y = (m(1, 0) * c.source.x + m(1, 1) * c.source.y + m(1, 2)) / w;
  return std::hypot(x - c.target.x, y - c.target.y);
}

struct RansacParams {
  int iterations = 2000;
  double inlier_px = 3.0;
  std::uint64_t seed = 1;
};

struct RansacResult {
  Homography h;
  std::vector<bool> inliers;
  std::size_t inlier_count = 0;
};

/// Consensus needed to accept a model: max(10, ceil(10% of n)); inputs with
/// fewer than 10 correspondences must be explained entirely.
inline std::size_t ransac_consensus_floor(std::size_t n) {
  if (n < 10) return n;
  return std::max<std::size_t>(10, (n + 9) / 10);
}

/// Seeded 4-point RANSAC. The best model (most inliers, ties to the lower mean
/// inlier error) is refit by DLT on its inliers.
inline RansacResult ransac_homography(const std::vector<Correspondence>& c, const RansacParams& p = {}) {
  const std::size_t n = c.size();
  if (n < 4) throw DegeneracyError("RANSAC needs at least 4 correspondences");
  if (p.iterations < 1 || !(p.inlier_px > 0.0)) throw ParameterError("RANSAC needs iterations >= 1 and inlier_px > 0");
  Rng rng(p.seed);
  std::size_t best_count = 0;
  double best_err = std::numeric_limits<double>::infinity();
  std::vector<bool> best_mask;
  std::vector<Correspondence> sample(4);
  for (int it = 0; it < p.iterations; ++it) {
    std::array<std::size_t, 4> idx{};
    for (int k = 0; k < 4; ++k) {
      std::size_t v;
      do {
        v = uniform_index(rng, n);
      } while (std::find(idx.begin(), idx.begin() + k, v) != idx.begin() + k);
      idx[k] = v;
      sample[k] = c[v];
    }
    Homography h;
    try {
      h = estimate_homography_dlt(sample);
    } catch (const NumericalError&) {
      continue;
    }
    std::vector<bool> mask(n, false);
    std::size_t count = 0;
    double err_sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double e = reprojection_error(h, c[i]);
      if (e <= p.inlier_px) {
        mask[i] = true;
        ++count;
        err_sum += e;
      }
    }
    const double mean_err = count ? err_sum / count : std::numeric_limits<double>::infinity();
    if (count > best_count || (count == best_count && count > 0 && mean_err < best_err)) {
      best_count = count;
      best_err = mean_err;
      best_mask = std::move(mask);
    }
    if (n == 4 && best_count == 4) break;
  }
  if (best_count < std::max<std::size_t>(4, ransac_consensus_floor(n))) {
    throw NoModelError("insufficient RANSAC consensus over " + std::to_string(n) + " correspondences", best_count);
  }
  std::vector<Correspondence> inl;
  for (std::size_t i = 0; i < n; ++i) {
    if (best_mask[i]) inl.push_back(c[i]);
  }
  RansacResult r;
  try {
    r.h = estimate_homography_dlt(inl);
  } catch (const DegeneracyError&) {
    throw NoModelError("inlier set is degenerate", best_count);
  }
  r.inliers = std::move(best_mask);
  r.inlier_count = best_count;
  return r;
}

enum class BlendMode { kFeather, kOverwrite };

inline BlendMode parse_blend_mode(const std::string& s) {
  if (s == "feather") return BlendMode::kFeather;
  if (s == "overwrite") return BlendMode::kOverwrite;
  throw ParameterError("unknown blend mode '" + s + "' (expected feather|overwrite)");
}

struct Panorama {
  GrayImage canvas;
  std::vector<Homography> global;  ///< frame k -> reference frame coordinates
  ValidityMask coverage;
  Point2 origin;  ///< reference-frame coordinates of canvas pixel (0, 0)
};

/// pairwise[k] maps frame k to frame k+1. Returns G_k mapping frame k to the reference frame.
inline std::vector<Homography> chain_homographies(const std::vector<Homography>& pairwise, std::size_t n_frames,
                                                  std::size_t reference) {
  if (n_frames == 0) throw ParameterError("no frames to chain");
  if (pairwise.size() + 1 != n_frames) throw ParameterError("need one pairwise homography per consecutive pair");
  if (reference >= n_frames) throw ParameterError("reference index out of range");
  std::vector<Homography> g(n_frames);
  for (std::size_t k = reference + 1; k < n_frames; ++k) g[k] = g[k - 1] * pairwise[k - 1].inverse();
  for (std::size_t k = reference; k-- > 0;) g[k] = g[k + 1] * pairwise[k];
  return g;
}

namespace detail {

// Distance to the nearest frame edge, >= 1 inside the frame.
inline double feather_weight(double u, double v, int w, int h) {
  return std::max(0.0, std::min({u + 1.0, v + 1.0, w - u, h - v}));
}

inline std::array<Point2, 4> frame_corners(const GrayImage& f) {
  const double w = f.width() - 1, h = f.height() - 1;
  return {Point2{0, 0}, Point2{w, 0}, Point2{0, h}, Point2{w, h}};
}

}  // namespace detail

/// Warps every frame onto one canvas spanning all warped frame corners.
inline Panorama compose_panorama(const std::vector<GrayImage>& frames, const std::vector<Homography>& pairwise,
                                 std::size_t reference = 0, BlendMode blend = BlendMode::kFeather) {
  Panorama pano;
  pano.global = chain_homographies(pairwise, frames.size(), reference);
  double x0 = std::numeric_limits<double>::infinity(), y0 = x0, x1 = -x0, y1 = -x0;
  for (std::size_t k = 0; k < frames.size(); ++k) {
    for (const Point2 c : detail::frame_corners(frames[k])) {
      const Point2 p = apply_homography(pano.global[k], c);
      x0 = std::min(x0, p.x);
      y0 = std::min(y0, p.y);
      x1 = std::max(x1, p.x);
      y1 = std::max(y1, p.y);
    }
  }
  // Snap near-integers so exact shifts do not grow the canvas by a pixel.
  auto lo = [](double v) { return std::floor(v + 1e-6); };
  auto hi = [](double v) { return std::ceil(v - 1e-6); };
  pano.origin = {lo(x0), lo(y0)};
  const double cw = hi(x1) - pano.origin.x + 1, ch = hi(y1) - pano.origin.y + 1;
  constexpr double kMaxCanvas = 1 << 14;
  if (!(cw <= kMaxCanvas && ch <= kMaxCanvas)) {
    throw NumericalError("panorama canvas would be " + std::to_string(cw) + " x " + std::to_string(ch));
  }
  const int w = static_cast<int>(cw), h = static_cast<int>(ch);
  std::vector<double> acc(static_cast<std::size_t>(w) * h, 0.0), wsum(acc.size(), 0.0);
  std::vector<float> out(acc.size(), 0.0f);
  ValidityMask coverage{w, h, std::vector<std::uint8_t>(acc.size(), 0)};
  for (std::size_t k = 0; k < frames.size(); ++k) {
    const GrayImage& f = frames[k];
    const Eigen::Matrix3d inv = pano.global[k].inverse().matrix();
    for (int y = 0; y < h; ++y) {
      const double py = y + pano.origin.y;
      for (int x = 0; x < w; ++x) {
        const double px = x + pano.origin.x;
        const double wz = inv(2, 0) * px + inv(2, 1) * py + inv(2, 2);
        if (std::abs(wz) < 1e-15) continue;
        const double u = (inv(0, 0) * px + inv(0, 1) * py + inv(0, 2)) / wz;
        const double v = (inv(1, 0) * px + inv(1, 1) * py + inv(1, 2)) / wz;
        const auto s = sample_bilinear(f, u, v);
        if (!s) continue;
        const std::size_t i = static_cast<std::size_t>(y) * w + x;
        coverage.valid[i] = 1;
        if (blend == BlendMode::kOverwrite) {
          out[i] = *s;
        } else {
          const double wt = detail::feather_weight(u, v, f.width(), f.height());
          acc[i] += wt * *s;
          wsum[i] += wt;
        }
      }
    }
  }
  if (blend == BlendMode::kFeather) {
    for (std::size_t i = 0; i < acc.size(); ++i) out[i] = wsum[i] > 0.0 ? static_cast<float>(acc[i] / wsum[i]) : 0.0f;
  }
  pano.canvas = GrayImage(w, h, std::move(out));
  pano.coverage = std::move(coverage);
  return pano;
}

/// Mean absolute difference between consecutive frames warped onto the
/// panorama canvas, over the pixels both cover. 0 when nothing overlaps.
inline double overlap_difference(const std::vector<GrayImage>& frames, const Panorama& pano) {
  const int w = pano.canvas.width(), h = pano.canvas.height();
  double sum = 0.0;
  std::size_t count = 0;
  std::optional<WarpResult> prev;
  for (std::size_t k = 0; k < frames.size(); ++k) {
    WarpResult cur = warp(frames[k], pano.global[k], w, h, pano.origin);
    if (prev) {
      for (std::size_t i = 0; i < cur.mask.valid.size(); ++i) {
        if (cur.mask.valid[i] && prev->mask.valid[i]) {
          sum += std::abs(static_cast<double>(cur.image.pixels()[i]) - prev->image.pixels()[i]);
          ++count;
        }
      }
    }
    prev = std::move(cur);
  }
  return count ? sum / static_cast<double>(count) : 0.0;
}

struct MosaicConfig {
  PipelineConfig pipeline;
  RansacParams ransac;
  std::size_t reference = 0;
  BlendMode blend = BlendMode::kFeather;
};

/// Detects, describes and matches two frames, then fits frame a -> frame b.
inline RansacResult register_pair(const DescribedKeypoints& a, const DescribedKeypoints& b, const MosaicConfig& cfg) {
  std::vector<Correspondence> corr;
  for (const auto& m : match_nn(a.descriptors, b.descriptors, cfg.pipeline.match)) {
    corr.push_back({a.keypoints[m.i].location(), b.keypoints[m.j].location()});
  }
  if (corr.size() < 4) throw NoModelError("only " + std::to_string(corr.size()) + " matches", corr.size());
  return ransac_homography(corr, cfg.ransac);
}

/// Full pipeline over consecutive frames. A failed registration names the pair.
inline Panorama mosaic_frames(const std::vector<GrayImage>& frames, const DescriptorNet<float>& net,
                              const MosaicConfig& cfg, int threads = 1) {
  if (frames.empty()) throw DataError("mosaic needs at least one frame");
  std::vector<DescribedKeypoints> desc(frames.size());
  parallel_for(frames.size(), threads, [&](std::size_t k) { desc[k] = detect_and_describe(frames[k], net, cfg.pipeline); });
  std::vector<Homography> pairwise(frames.size() - 1);
  parallel_for(pairwise.size(), threads, [&](std::size_t k) {
    try {
      pairwise[k] = register_pair(desc[k], desc[k + 1], cfg).h;
    } catch (const NoModelError& e) {
      throw NoModelError("registration of frames " + std::to_string(k) + " -> " + std::to_string(k + 1) +
                             " failed: " + e.what(),
                         e.best_count());
    }
  });
  return compose_panorama(frames, pairwise, cfg.reference, cfg.blend);
}

}  // namespace ssdesc
