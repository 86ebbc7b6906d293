#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "ssdesc/error.hpp"
#include "ssdesc/image.hpp"

namespace ssdesc {

struct KeyPoint {
  double x = 0.0;
  double y = 0.0;
  double response = 0.0;
  double scale = 1.0;

  Point2 location() const { return {x, y}; }
  friend bool operator==(const KeyPoint&, const KeyPoint&) = default;
};

struct HarrisParams {
  int max_n = 200;
  double k = 0.04;
  int nms_radius = 8;
  /// Candidates below this fraction of the strongest response are dropped.
  double relative_threshold = 0.01;
};

/// Harris corners: R = det(M) - k trace(M)^2 on Sobel gradients, M smoothed by
/// a 3x3 box. Greedy suppression keeps detections more than `nms_radius` apart
/// (Chebyshev), strongest first. Returns at most max_n, responses non-increasing.
inline std::vector<KeyPoint> detect_harris(const GrayImage& img, const HarrisParams& p = {}) {
  const int w = img.width(), h = img.height();
  if (w < 32 || h < 32) throw ParameterError("Harris detection needs at least 32x32 pixels");
  if (p.max_n <= 0) return {};
  const std::size_t n = static_cast<std::size_t>(w) * h;
  std::vector<double> ixx(n), iyy(n), ixy(n);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      auto v = [&](int dx, int dy) { return static_cast<double>(img.clamped(x + dx, y + dy)); };
      const double gx = (v(1, -1) + 2 * v(1, 0) + v(1, 1)) - (v(-1, -1) + 2 * v(-1, 0) + v(-1, 1));
      const double gy = (v(-1, 1) + 2 * v(0, 1) + v(1, 1)) - (v(-1, -1) + 2 * v(0, -1) + v(1, -1));
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      ixx[i] = gx * gx;
      iyy[i] = gy * gy;
      ixy[i] = gx * gy;
    }
  }
  std::vector<double> response(n);
  double max_r = 0.0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double a = 0, b = 0, c = 0;
      for (int dy = -1; dy <= 1; ++dy) {
        const int yy = std::clamp(y + dy, 0, h - 1);
        for (int dx = -1; dx <= 1; ++dx) {
          const std::size_t j = static_cast<std::size_t>(yy) * w + std::clamp(x + dx, 0, w - 1);
          a += ixx[j];
          b += iyy[j];
          c += ixy[j];
        }
      }
      a /= 9.0;
      b /= 9.0;
      c /= 9.0;
      const double r = (a * b - c * c) - p.k * (a + b) * (a + b);
      response[static_cast<std::size_t>(y) * w + x] = r;
      max_r = std::max(max_r, r);
    }
  }
  if (!(max_r > 1e-12)) return {};

  const double threshold = std::max(1e-12, p.relative_threshold * max_r);
  std::vector<KeyPoint> candidates;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double r = response[static_cast<std::size_t>(y) * w + x];
      if (r <= threshold) continue;
      bool peak = true;
      for (int dy = -1; dy <= 1 && peak; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const int xx = x + dx, yy = y + dy;
          if ((dx == 0 && dy == 0) || xx < 0 || yy < 0 || xx >= w || yy >= h) continue;
          const double q = response[static_cast<std::size_t>(yy) * w + xx];
          // Plateaus keep their first pixel in raster order.
          if (q > r || (q == r && (dy < 0 || (dy == 0 && dx < 0)))) {
            peak = false;
            break;
          }
        }
      }
      if (peak) candidates.push_back({static_cast<double>(x), static_cast<double>(y), r, 1.0});
    }
  }
  std::stable_sort(candidates.begin(), candidates.end(),
                   [](const KeyPoint& a, const KeyPoint& b) { return a.response > b.response; });

  // Occupancy grid with cells of side nms_radius+1: a conflicting point can only
  // sit in the 3x3 neighbourhood of cells.
  const int r = std::max(0, p.nms_radius);
  const int cell = r + 1;
  const int gw = (w + cell - 1) / cell, gh = (h + cell - 1) / cell;
  std::vector<std::vector<int>> grid(static_cast<std::size_t>(gw) * gh);
  std::vector<KeyPoint> kept;
  for (const KeyPoint& c : candidates) {
    if (static_cast<int>(kept.size()) >= p.max_n) break;
    const int cx = static_cast<int>(c.x) / cell, cy = static_cast<int>(c.y) / cell;
    bool clear = true;
    for (int gy = std::max(0, cy - 1); gy <= std::min(gh - 1, cy + 1) && clear; ++gy) {
      for (int gx = std::max(0, cx - 1); gx <= std::min(gw - 1, cx + 1) && clear; ++gx) {
        for (int idx : grid[static_cast<std::size_t>(gy) * gw + gx]) {
          const KeyPoint& o = kept[idx];
          if (std::max(std::abs(o.x - c.x), std::abs(o.y - c.y)) <= r) {
            clear = false;
            break;
          }
        }
      }
    }
    if (!clear) continue;
    grid[static_cast<std::size_t>(cy) * gw + cx].push_back(static_cast<int>(kept.size()));
    kept.push_back(c);
  }
  return kept;
}

/// Keeps key-points with margin <= x < width - margin and margin <= y < height - margin.
inline std::vector<KeyPoint> filter_border(const std::vector<KeyPoint>& kps, int width, int height,
                                           int margin = 64) {
  if (margin < 0) throw ParameterError("border margin must be >= 0");
  std::vector<KeyPoint> out;
  out.reserve(kps.size());
  for (const auto& k : kps) {
    if (k.x >= margin && k.x < width - margin && k.y >= margin && k.y < height - margin) {
      out.push_back(k);
    }
  }
  return out;
}

namespace detail {

inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s, std::size_t line, const char* what) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size() || s.empty()) {
    throw ParseError(std::string("invalid ") + what + " '" + std::string(s) + "'", line);
  }
  return v;
}

inline std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

}  // namespace detail

inline constexpr const char* kKeypointCsvHeader = "x,y,response,scale";

inline void write_keypoints(const std::string& path, const std::vector<KeyPoint>& kps) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write key-point file '" + path + "'");
  out << kKeypointCsvHeader << '\n';
  for (const auto& k : kps) {
    out << detail::format_double(k.x) << ',' << detail::format_double(k.y) << ','
        << detail::format_double(k.response) << ',' << detail::format_double(k.scale) << '\n';
  }
  if (!out) throw IoError("write failed for '" + path + "'");
}

/// Reads the CSV written by write_keypoints. Rows may omit the scale column.
inline std::vector<KeyPoint> read_keypoints(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open key-point file '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) return {};
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kKeypointCsvHeader) throw ParseError("expected header '" + std::string(kKeypointCsvHeader) + "'", 1);
  std::vector<KeyPoint> kps;
  std::size_t n = 1;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty() || line == "\r") continue;
    const auto f = detail::split_commas(line);
    if (f.size() < 3 || f.size() > 4) throw ParseError("expected 3 or 4 fields", n);
    KeyPoint k;
    k.x = detail::parse_double(f[0], n, "x");
    k.y = detail::parse_double(f[1], n, "y");
    k.response = detail::parse_double(f[2], n, "response");
    if (f.size() == 4) k.scale = detail::parse_double(f[3], n, "scale");
    kps.push_back(k);
  }
  return kps;
}

}  // namespace ssdesc
