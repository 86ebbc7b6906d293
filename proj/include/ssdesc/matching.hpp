#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "ssdesc/filters.hpp"
#include "ssdesc/homography.hpp"
#include "ssdesc/image.hpp"
#include "ssdesc/keypoints.hpp"
#include "ssdesc/model.hpp"
#include "ssdesc/triplets.hpp"

namespace ssdesc {

/// Descriptors row-aligned with the key-points that survived border filtering.
struct DescribedKeypoints {
  std::vector<KeyPoint> keypoints;
  Tensor<float> descriptors;  ///< (N x 128); shape (0 x 128) when nothing survived

  std::size_t size() const { return keypoints.size(); }
};

/// Border-filters `kps`, crops and standardizes 128x128 patches and runs the
/// net in eval mode, `batch` patches at a time.
inline DescribedKeypoints describe(const GrayImage& img, const std::vector<KeyPoint>& kps, const DescriptorNet<float>& net,
                                   int margin = kPatchHalf, std::size_t batch = 64) {
  DescribedKeypoints out;
  out.keypoints = filter_border(kps, img.width(), img.height(), std::max(margin, kPatchHalf));
  const std::size_t n = out.keypoints.size();
  out.descriptors = Tensor<float>({n, kDescriptorDim});
  for (std::size_t b0 = 0; b0 < n; b0 += batch) {
    const std::size_t nb = std::min(batch, n - b0);
    Tensor<float> patches({nb, 1, kPatchSize, kPatchSize});
    for (std::size_t i = 0; i < nb; ++i) {
      const auto patch = preprocess_patch(crop_patch(img, out.keypoints[b0 + i].location()));
      std::copy(patch.begin(), patch.end(), patches.data() + i * kPatchPixels);
    }
    const auto desc = net.infer(patches);
    std::copy(desc.values().begin(), desc.values().end(), out.descriptors.data() + b0 * kDescriptorDim);
  }
  return out;
}

struct MatchPair {
  std::size_t i = 0;  ///< source index
  std::size_t j = 0;  ///< target index
  double distance = 0.0;

  friend bool operator==(const MatchPair&, const MatchPair&) = default;
};

struct MatchOptions {
  bool mutual = false;
  std::optional<double> max_distance;
};

/// Euclidean distance between row i of a and row j of b, accumulated in double.
inline double descriptor_distance(const Tensor<float>& a, std::size_t i, const Tensor<float>& b, std::size_t j) {
  const std::size_t dim = a.dim(1);
  const float* x = a.data() + i * dim;
  const float* y = b.data() + j * dim;
  double s = 0.0;
  for (std::size_t k = 0; k < dim; ++k) {
    const double d = static_cast<double>(x[k]) - y[k];
    s += d * d;
  }
  return std::sqrt(s);
}

/// One match per source row: the nearest target row (ties to the smallest
/// index). `mutual` keeps only pairs that are nearest in both directions.
inline std::vector<MatchPair> match_nn(const Tensor<float>& source, const Tensor<float>& target, const MatchOptions& opt = {}) {
  std::vector<MatchPair> out;
  if (source.rank() != 2 || target.rank() != 2 || source.dim(0) == 0 || target.dim(0) == 0) return out;
  if (source.dim(1) != target.dim(1)) {
    throw ShapeError("descriptor widths differ: " + nn::shape_string(source.shape()) + " vs " +
                     nn::shape_string(target.shape()));
  }
  const std::size_t n = source.dim(0), m = target.dim(0);
  std::vector<double> dist(n * m);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) dist[i * m + j] = descriptor_distance(source, i, target, j);
  }
  std::vector<std::size_t> back(m, 0);
  if (opt.mutual) {
    for (std::size_t j = 0; j < m; ++j) {
      for (std::size_t i = 1; i < n; ++i) {
        if (dist[i * m + j] < dist[back[j] * m + j]) back[j] = i;
      }
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < m; ++j) {
      if (dist[i * m + j] < dist[i * m + best]) best = j;
    }
    const double d = dist[i * m + best];
    if (opt.mutual && back[best] != i) continue;
    if (opt.max_distance && d > *opt.max_distance) continue;
    out.push_back({i, best, d});
  }
  return out;
}

inline constexpr double kDefaultProjectionError = 5.0;

struct EvalReport {
  std::size_t n_keypoints = 0;
  std::size_t n_matches = 0;
  std::size_t n_correct = 0;
  std::size_t n_correspondences = 0;
  double precision = 0.0;
  double recall = 0.0;
  double matching_score = 0.0;
  double pe = kDefaultProjectionError;
};

/// Ground truth shared by score_matches and pr_curve.
struct ScoringContext {
  std::vector<Point2> projected;  ///< H(source key-point i)
  std::vector<bool> projectable;  ///< false where the projection is undefined
  std::vector<KeyPoint> targets;
  std::size_t n_correspondences = 0;
  double pe = kDefaultProjectionError;

  ScoringContext(const std::vector<KeyPoint>& source, const std::vector<KeyPoint>& target, const Homography& h,
                 double pe_px = kDefaultProjectionError)
      : targets(target), pe(pe_px) {
    projected.resize(source.size());
    projectable.resize(source.size(), false);
    for (std::size_t i = 0; i < source.size(); ++i) {
      try {
        projected[i] = apply_homography(h, source[i].location());
        projectable[i] = true;
      } catch (const SingularProjectionError&) {
        continue;
      }
      for (const auto& t : target) {
        if (within(projected[i], t)) {
          ++n_correspondences;
          break;
        }
      }
    }
  }

  bool correct(const MatchPair& m) const {
    return m.i < projected.size() && m.j < targets.size() && projectable[m.i] && within(projected[m.i], targets[m.j]);
  }

  EvalReport score(const std::vector<MatchPair>& matches) const {
    EvalReport r;
    r.pe = pe;
    r.n_keypoints = projected.size();
    r.n_matches = matches.size();
    r.n_correspondences = n_correspondences;
    for (const auto& m : matches) r.n_correct += correct(m) ? 1 : 0;
    r.precision = r.n_matches ? static_cast<double>(r.n_correct) / r.n_matches : 0.0;
    r.recall = r.n_correspondences ? std::min(1.0, static_cast<double>(r.n_correct) / r.n_correspondences) : 0.0;
    r.matching_score = r.n_keypoints ? static_cast<double>(r.n_correct) / r.n_keypoints : 0.0;
    return r;
  }

 private:
  bool within(Point2 p, const KeyPoint& t) const { return std::hypot(p.x - t.x, p.y - t.y) <= pe; }
};

/// A match (i, j) is correct iff ||H(source_i) - target_j|| <= pe (inclusive).
inline EvalReport score_matches(const std::vector<MatchPair>& matches, const std::vector<KeyPoint>& source,
                                const std::vector<KeyPoint>& target, const Homography& h,
                                double pe = kDefaultProjectionError) {
  return ScoringContext(source, target, h, pe).score(matches);
}

struct PrPoint {
  double threshold = 0.0;
  double precision = 0.0;
  double recall = 0.0;
};

/// Retains matches with distance <= threshold.
inline EvalReport score_at_threshold(const std::vector<MatchPair>& matches, const ScoringContext& ctx, double threshold) {
  std::vector<MatchPair> kept;
  for (const auto& m : matches) {
    if (m.distance <= threshold) kept.push_back(m);
  }
  return ctx.score(kept);
}

/// Sweeps the acceptance threshold over the sorted distinct match distances
/// (preceded by 0 when every distance is positive).
inline std::vector<PrPoint> pr_curve(const std::vector<MatchPair>& matches, const ScoringContext& ctx) {
  std::vector<double> thresholds;
  for (const auto& m : matches) thresholds.push_back(m.distance);
  std::sort(thresholds.begin(), thresholds.end());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
  if (!thresholds.empty() && thresholds.front() > 0.0) thresholds.insert(thresholds.begin(), 0.0);

  std::vector<MatchPair> sorted = matches;
  std::stable_sort(sorted.begin(), sorted.end(), [](const MatchPair& a, const MatchPair& b) { return a.distance < b.distance; });
  std::vector<PrPoint> curve;
  std::size_t next = 0, correct = 0;
  for (double t : thresholds) {
    while (next < sorted.size() && sorted[next].distance <= t) correct += ctx.correct(sorted[next++]) ? 1 : 0;
    PrPoint p{t, next ? static_cast<double>(correct) / next : 0.0,
              ctx.n_correspondences ? std::min(1.0, static_cast<double>(correct) / ctx.n_correspondences) : 0.0};
    curve.push_back(p);
  }
  return curve;
}

/// Frame preparation and detection settings shared by matching, sweeps and mosaicing.
struct PipelineConfig {
  bool use_clahe = true;
  ClaheParams clahe;
  HarrisParams harris;
  int margin = kPatchHalf;
  MatchOptions match;
  double pe = kDefaultProjectionError;
};

inline GrayImage prepare_frame(const GrayImage& frame, const PipelineConfig& cfg) {
  return cfg.use_clahe ? clahe(frame, cfg.clahe) : frame;
}

/// CLAHE, Harris detection and description of one frame.
inline DescribedKeypoints detect_and_describe(const GrayImage& frame, const DescriptorNet<float>& net,
                                              const PipelineConfig& cfg) {
  const GrayImage prepared = prepare_frame(frame, cfg);
  // Detect more than needed so the cap applies after border filtering.
  HarrisParams hp = cfg.harris;
  hp.max_n = std::max(hp.max_n, 1) * 4;
  auto kps = filter_border(detect_harris(prepared, hp), prepared.width(), prepared.height(), cfg.margin);
  if (static_cast<int>(kps.size()) > cfg.harris.max_n) kps.resize(static_cast<std::size_t>(std::max(0, cfg.harris.max_n)));
  return describe(prepared, kps, net, cfg.margin);
}

/// Precision and matching score of in-set retrieval over validation pairs:
/// each anchor is matched against every positive; a match counts as correct
/// when the positive's source key-point lies within `pe` of the anchor's key-point
/// in the same frame. Uses eval mode only.
inline EvalReport validate(const DescriptorNet<float>& net, std::span<const PatchPair> pairs,
                           double pe = kDefaultProjectionError, std::size_t batch = 64) {
  const std::size_t n = pairs.size();
  if (n == 0) return EvalReport{.pe = pe};
  Tensor<float> anchors({n, kDescriptorDim}), positives({n, kDescriptorDim});
  for (std::size_t b0 = 0; b0 < n; b0 += batch) {
    const std::size_t nb = std::min(batch, n - b0);
    Tensor<float> pa({nb, 1, kPatchSize, kPatchSize}), pp({nb, 1, kPatchSize, kPatchSize});
    for (std::size_t i = 0; i < nb; ++i) {
      const auto a = preprocess_patch(dequantize_patch(pairs[b0 + i].anchor));
      const auto p = preprocess_patch(dequantize_patch(pairs[b0 + i].positive));
      std::copy(a.begin(), a.end(), pa.data() + i * kPatchPixels);
      std::copy(p.begin(), p.end(), pp.data() + i * kPatchPixels);
    }
    const auto da = net.infer(pa), dp = net.infer(pp);
    std::copy(da.values().begin(), da.values().end(), anchors.data() + b0 * kDescriptorDim);
    std::copy(dp.values().begin(), dp.values().end(), positives.data() + b0 * kDescriptorDim);
  }
  // Frames are laid side by side so points of different frames never coincide.
  constexpr double kFrameStride = 1e6;
  std::vector<KeyPoint> src(n);
  for (std::size_t i = 0; i < n; ++i) {
    src[i] = pairs[i].kp;
    src[i].x += kFrameStride * pairs[i].frame_id;
  }
  return score_matches(match_nn(anchors, positives), src, src, Homography::identity(), pe);
}

inline constexpr const char* kMatchCsvHeader = "i,j,distance";

inline void write_matches(const std::string& path, const std::vector<MatchPair>& matches) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write match CSV '" + path + "'");
  out << kMatchCsvHeader << "\n";
  for (const auto& m : matches) out << m.i << "," << m.j << "," << detail::format_double(m.distance) << "\n";
  if (!out) throw IoError("write failed for '" + path + "'");
}

inline std::vector<MatchPair> read_matches(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open match CSV '" + path + "'");
  std::string line;
  std::size_t n = 0;
  std::vector<MatchPair> out;
  while (std::getline(in, line)) {
    ++n;
    if (n == 1) {
      if (line != kMatchCsvHeader) throw ParseError("expected header '" + std::string(kMatchCsvHeader) + "'", n);
      continue;
    }
    if (line.empty()) continue;
    const auto f = detail::split_commas(line);
    if (f.size() != 3) throw ParseError("expected 3 fields, got " + std::to_string(f.size()), n);
    const double i = detail::parse_double(f[0], n, "i"), j = detail::parse_double(f[1], n, "j");
    if (i < 0 || j < 0 || i != std::floor(i) || j != std::floor(j)) throw ParseError("indices must be non-negative integers", n);
    out.push_back({static_cast<std::size_t>(i), static_cast<std::size_t>(j), detail::parse_double(f[2], n, "distance")});
  }
  return out;
}

inline constexpr const char* kEvalCsvHeader =
    "n_keypoints,n_matches,n_correct,n_correspondences,precision,recall,matching_score,pe";

inline void write_eval_report(const std::string& path, const EvalReport& r) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write eval CSV '" + path + "'");
  out << kEvalCsvHeader << "\n"
      << r.n_keypoints << "," << r.n_matches << "," << r.n_correct << "," << r.n_correspondences << ","
      << detail::format_double(r.precision) << "," << detail::format_double(r.recall) << ","
      << detail::format_double(r.matching_score) << "," << detail::format_double(r.pe) << "\n";
  if (!out) throw IoError("write failed for '" + path + "'");
}

inline constexpr const char* kPrCsvHeader = "threshold,precision,recall";

inline void write_pr_curve(const std::string& path, const std::vector<PrPoint>& curve) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write PR CSV '" + path + "'");
  out << kPrCsvHeader << "\n";
  for (const auto& p : curve) {
    out << detail::format_double(p.threshold) << "," << detail::format_double(p.precision) << ","
        << detail::format_double(p.recall) << "\n";
  }
  if (!out) throw IoError("write failed for '" + path + "'");
}

}  // namespace ssdesc
