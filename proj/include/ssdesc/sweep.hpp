#pragma once

#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "ssdesc/filters.hpp"
#include "ssdesc/matching.hpp"
#include "ssdesc/mosaic.hpp"
#include "ssdesc/parallel.hpp"
#include "ssdesc/warp.hpp"

namespace ssdesc {

enum class SweepMode { kViewpoint, kScale, kBlur };

inline SweepMode parse_sweep_mode(const std::string& s) {
  if (s == "viewpoint") return SweepMode::kViewpoint;
  if (s == "scale") return SweepMode::kScale;
  if (s == "blur") return SweepMode::kBlur;
  throw ParameterError("unknown sweep mode '" + s + "' (expected viewpoint|scale|blur)");
}

inline std::string to_string(SweepMode m) {
  switch (m) {
    case SweepMode::kViewpoint: return "viewpoint";
    case SweepMode::kScale: return "scale";
    case SweepMode::kBlur: return "blur";
  }
  return "viewpoint";
}

struct SweepConfig {
  PipelineConfig pipeline;
  int viewpoints = 10;
  double max_corner_shift = 15.0;
  std::vector<double> scales = {0.9, 0.95, 1.0, 1.05, 1.1, 1.15};
  std::vector<int> blur_kernels = {3, 5, 10, 15};
  std::uint64_t seed = 1;
};

/// Moves each image corner by up to `max_shift` px per axis and fits the
/// homography through the four moved corners.
inline Homography corner_perturbation(int width, int height, double max_shift, Rng& rng) {
  const double w = width - 1, h = height - 1;
  const std::array<Point2, 4> corners = {Point2{0, 0}, Point2{w, 0}, Point2{0, h}, Point2{w, h}};
  std::vector<Correspondence> c;
  for (const auto& p : corners) c.push_back({p, {p.x + uniform(rng, -max_shift, max_shift), p.y + uniform(rng, -max_shift, max_shift)}});
  return estimate_homography_dlt(c);
}

struct SweepRow {
  SweepMode mode = SweepMode::kViewpoint;
  std::size_t frame_id = 0;
  double condition = 0.0;  ///< transform index, scale factor or kernel size
  double precision = 0.0;
  double recall = 0.0;
  double matching_score = 0.0;
};

/// Condition values of a sweep, in output order.
inline std::vector<double> sweep_conditions(SweepMode mode, const SweepConfig& cfg) {
  std::vector<double> out;
  switch (mode) {
    case SweepMode::kViewpoint:
      for (int i = 0; i < cfg.viewpoints; ++i) out.push_back(i);
      break;
    case SweepMode::kScale: out = cfg.scales; break;
    case SweepMode::kBlur:
      for (int k : cfg.blur_kernels) out.push_back(k);
      break;
  }
  return out;
}

/// One row per (frame, condition), frame-major, regardless of `threads`.
inline std::vector<SweepRow> robustness_sweep(const std::vector<GrayImage>& frames, const DescriptorNet<float>& net,
                                              SweepMode mode, const SweepConfig& cfg, int threads = 1) {
  if (frames.empty()) throw DataError("sweep needs at least one frame");
  const auto conditions = sweep_conditions(mode, cfg);
  if (conditions.empty()) throw ParameterError("sweep has no conditions");

  // Per-frame targets and ground truth, drawn sequentially so they do not depend on threads.
  struct Task {
    std::size_t frame;
    double condition;
    Homography h;
  };
  std::vector<Task> tasks;
  for (std::size_t f = 0; f < frames.size(); ++f) {
    Rng rng = derive_rng(cfg.seed, f);
    const Point2 center{(frames[f].width() - 1) / 2.0, (frames[f].height() - 1) / 2.0};
    for (double c : conditions) {
      Homography h;
      if (mode == SweepMode::kViewpoint) h = corner_perturbation(frames[f].width(), frames[f].height(), cfg.max_corner_shift, rng);
      if (mode == SweepMode::kScale) h = Homography::scaling(c, center);
      tasks.push_back({f, c, h});
    }
  }
  std::vector<DescribedKeypoints> sources(frames.size());
  parallel_for(frames.size(), threads, [&](std::size_t f) { sources[f] = detect_and_describe(frames[f], net, cfg.pipeline); });

  std::vector<SweepRow> rows(tasks.size());
  parallel_for(tasks.size(), threads, [&](std::size_t t) {
    const Task& task = tasks[t];
    const GrayImage& frame = frames[task.frame];
    const GrayImage target = mode == SweepMode::kBlur ? box_blur(frame, static_cast<int>(task.condition))
                                                      : warp(frame, task.h, frame.width(), frame.height()).image;
    const DescribedKeypoints dst = detect_and_describe(target, net, cfg.pipeline);
    const DescribedKeypoints& src = sources[task.frame];
    const auto matches = match_nn(src.descriptors, dst.descriptors, cfg.pipeline.match);
    const EvalReport rep = score_matches(matches, src.keypoints, dst.keypoints, task.h, cfg.pipeline.pe);
    rows[t] = {mode, task.frame, task.condition, rep.precision, rep.recall, rep.matching_score};
  });
  return rows;
}

inline constexpr const char* kSweepCsvHeader = "mode,frame_id,condition,precision,recall,matching_score";

inline void write_sweep_csv(const std::string& path, const std::vector<SweepRow>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write sweep CSV '" + path + "'");
  out << kSweepCsvHeader << "\n";
  for (const auto& r : rows) {
    out << to_string(r.mode) << "," << r.frame_id << "," << detail::format_double(r.condition) << ","
        << detail::format_double(r.precision) << "," << detail::format_double(r.recall) << ","
        << detail::format_double(r.matching_score) << "\n";
  }
  if (!out) throw IoError("write failed for '" + path + "'");
}

inline std::vector<SweepRow> read_sweep_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open sweep CSV '" + path + "'");
  std::string line;
  std::size_t n = 0;
  std::vector<SweepRow> rows;
  while (std::getline(in, line)) {
    ++n;
    if (n == 1) {
      if (line != kSweepCsvHeader) throw ParseError("unexpected sweep CSV header", n);
      continue;
    }
    if (line.empty()) continue;
    const auto f = detail::split_commas(line);
    if (f.size() != 6) throw ParseError("expected 6 fields", n);
    SweepRow r;
    try {
      r.mode = parse_sweep_mode(std::string(f[0]));
    } catch (const ParameterError& e) {
      throw ParseError(e.what(), n);
    }
    r.frame_id = static_cast<std::size_t>(detail::parse_double(f[1], n, "frame_id"));
    r.condition = detail::parse_double(f[2], n, "condition");
    r.precision = detail::parse_double(f[3], n, "precision");
    r.recall = detail::parse_double(f[4], n, "recall");
    r.matching_score = detail::parse_double(f[5], n, "matching_score");
    rows.push_back(r);
  }
  return rows;
}

struct SweepSummary {
  double condition = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double matching_score = 0.0;
  std::size_t frames = 0;
};

/// Per-condition means, in first-appearance order.
inline std::vector<SweepSummary> summarize_sweep(const std::vector<SweepRow>& rows) {
  std::vector<SweepSummary> out;
  std::map<double, std::size_t> slot;
  for (const auto& r : rows) {
    auto [it, fresh] = slot.try_emplace(r.condition, out.size());
    if (fresh) out.push_back({r.condition});
    auto& s = out[it->second];
    s.precision += r.precision;
    s.recall += r.recall;
    s.matching_score += r.matching_score;
    ++s.frames;
  }
  for (auto& s : out) {
    s.precision /= s.frames;
    s.recall /= s.frames;
    s.matching_score /= s.frames;
  }
  return out;
}

}  // namespace ssdesc
