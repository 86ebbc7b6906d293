#pragma once

#include <array>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ssdesc/error.hpp"
#include "ssdesc/image.hpp"
#include "ssdesc/rng.hpp"

namespace ssdesc {

/// Invertible 3x3 projective transform, kept with h33 == 1 whenever h33 != 0.
class Homography {
 public:
  static constexpr double kMinDeterminant = 1e-12;

  Homography() : m_(Eigen::Matrix3d::Identity()) {}

  explicit Homography(const Eigen::Matrix3d& m) : m_(m) {
    if (!m_.allFinite()) throw NumericalError("homography has non-finite entries");
    if (m_(2, 2) != 0.0) m_ /= m_(2, 2);
    if (std::abs(m_.determinant()) <= kMinDeterminant) {
      throw NumericalError("homography is singular (|det| <= 1e-12)");
    }
  }

  /// Row-major entries h11 .. h33.
  static Homography from_row_major(const std::array<double, 9>& h) {
    Eigen::Matrix3d m;
    m << h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8];
    return Homography(m);
  }

  static Homography identity() { return Homography(); }

  static Homography translation(double tx, double ty) {
    Eigen::Matrix3d m = Eigen::Matrix3d::Identity();
    m(0, 2) = tx;
    m(1, 2) = ty;
    return Homography(m);
  }

  /// Counter-clockwise rotation in image coordinates about `center`.
  static Homography rotation(double radians, Point2 center = {}) {
    Eigen::Matrix3d r = Eigen::Matrix3d::Identity();
    const double c = std::cos(radians), s = std::sin(radians);
    r(0, 0) = c;
    r(0, 1) = -s;
    r(1, 0) = s;
    r(1, 1) = c;
    return about(r, center);
  }

  static Homography scaling(double factor, Point2 center = {}) {
    Eigen::Matrix3d s = Eigen::Matrix3d::Identity();
    s(0, 0) = factor;
    s(1, 1) = factor;
    return about(s, center);
  }

  const Eigen::Matrix3d& matrix() const noexcept { return m_; }
  double operator()(int r, int c) const { return m_(r, c); }

  std::array<double, 9> row_major() const {
    return {m_(0, 0), m_(0, 1), m_(0, 2), m_(1, 0), m_(1, 1), m_(1, 2), m_(2, 0), m_(2, 1), m_(2, 2)};
  }

  Homography inverse() const { return Homography(m_.inverse()); }

  /// Composition: (a * b)(p) == a(b(p)).
  friend Homography operator*(const Homography& a, const Homography& b) {
    return Homography(a.m_ * b.m_);
  }

  friend bool operator==(const Homography& a, const Homography& b) { return a.m_ == b.m_; }

 private:
  static Homography about(const Eigen::Matrix3d& linear, Point2 c) {
    Eigen::Matrix3d to = Eigen::Matrix3d::Identity(), back = Eigen::Matrix3d::Identity();
    to(0, 2) = -c.x;
    to(1, 2) = -c.y;
    back(0, 2) = c.x;
    back(1, 2) = c.y;
    return Homography(back * linear * to);
  }

  Eigen::Matrix3d m_;
};

/// Projective mapping with perspective divide.
inline Point2 apply_homography(const Homography& h, Point2 p) {
  const Eigen::Matrix3d& m = h.matrix();
  const double w = m(2, 0) * p.x + m(2, 1) * p.y + m(2, 2);
  if (std::abs(w) < 1e-15) {
    throw SingularProjectionError("projective denominator vanishes at (" + std::to_string(p.x) +
                                  ", " + std::to_string(p.y) + ")");
  }
  return {(m(0, 0) * p.x + m(0, 1) * p.y + m(0, 2)) / w,
          (m(1, 0) * p.x + m(1, 1) * p.y + m(1, 2)) / w};
}

/// Which similarity factors to draw and from which sets.
struct TransformRanges {
  bool rotation = true;
  bool scale = true;
  bool translation = true;
  std::vector<double> angles_deg = {5.0, 10.0, 15.0};
  std::vector<double> scales = {0.9, 0.95, 1.05, 1.1, 1.15};
  double max_translation = 8.0;
  Point2 center{};
};

/// Samples T * S * R about `ranges.center`: signed angle from the angle set, scale
/// from the scale set, translation uniform in [-max, max] per axis.
inline Homography random_homography(Rng& rng, const TransformRanges& ranges) {
  if ((ranges.rotation && ranges.angles_deg.empty()) || (ranges.scale && ranges.scales.empty()) ||
      (ranges.translation && !(ranges.max_translation >= 0.0))) {
    throw ParameterError("transform ranges must be non-empty for enabled factors");
  }
  Homography h;
  if (ranges.rotation) {
    const double deg = ranges.angles_deg[uniform_index(rng, ranges.angles_deg.size())];
    const double sign = coin(rng) ? 1.0 : -1.0;
    h = Homography::rotation(sign * deg * M_PI / 180.0, ranges.center);
  }
  if (ranges.scale) {
    const double s = ranges.scales[uniform_index(rng, ranges.scales.size())];
    h = Homography::scaling(s, ranges.center) * h;
  }
  if (ranges.translation) {
    const double tx = uniform(rng, -ranges.max_translation, ranges.max_translation);
    const double ty = uniform(rng, -ranges.max_translation, ranges.max_translation);
    h = Homography::translation(tx, ty) * h;
  }
  return h;
}

/// Formats one homography as 9 whitespace-separated decimals (row-major).
inline std::string format_homography(const Homography& h) {
  std::ostringstream os;
  os << std::setprecision(17);
  const auto v = h.row_major();
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? " " : "") << v[i];
  return os.str();
}

inline Homography parse_homography(const std::string& line, std::size_t line_no = 1) {
  std::istringstream is(line);
  std::array<double, 9> v{};
  for (double& x : v) {
    if (!(is >> x)) throw ParseError("expected 9 homography entries", line_no);
  }
  std::string extra;
  if (is >> extra) throw ParseError("trailing token '" + extra + "' after homography", line_no);
  try {
    return Homography::from_row_major(v);
  } catch (const NumericalError& e) {
    throw ParseError(e.what(), line_no);
  }
}

/// One matrix per line; blank lines and '#' comments are skipped.
inline std::vector<Homography> read_homographies(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open homography file '" + path + "'");
  std::vector<Homography> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    out.push_back(parse_homography(line, n));
  }
  return out;
}

inline void write_homographies(const std::string& path, const std::vector<Homography>& hs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write homography file '" + path + "'");
  for (const auto& h : hs) out << format_homography(h) << '\n';
  if (!out) throw IoError("write failed for '" + path + "'");
}

}  // namespace ssdesc
