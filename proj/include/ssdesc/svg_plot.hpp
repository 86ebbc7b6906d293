#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "ssdesc/error.hpp"
#include "ssdesc/keypoints.hpp"

namespace ssdesc {

/// A CSV file with a header line; non-numeric cells are kept as text.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw ParameterError("CSV has no column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  }
};

inline CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open CSV '" + path + "'");
  CsvTable t;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    for (auto f : detail::split_commas(line)) cells.emplace_back(f);
    if (t.header.empty()) {
      t.header = std::move(cells);
      continue;
    }
    if (cells.size() != t.header.size()) {
      throw ParseError("expected " + std::to_string(t.header.size()) + " fields, got " + std::to_string(cells.size()), n);
    }
    t.rows.push_back(std::move(cells));
  }
  if (t.header.empty()) throw FormatError("CSV '" + path + "' is empty");
  return t;
}

struct PlotSeries {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

struct PlotSpec {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<PlotSeries> series;
  int width = 640;
  int height = 420;
};

namespace detail {

inline std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

inline std::string svg_num(double v) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(2);
  os << v;
  return os.str();
}

}  // namespace detail

/// Line chart with one polyline and one circle per data point for each series.
inline std::string render_svg(const PlotSpec& spec) {
  constexpr double kLeft = 70, kRight = 20, kTop = 40, kBottom = 60;
  constexpr const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
  double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
  for (const auto& s : spec.series) {
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  }
  if (!(x0 <= x1)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 - x0 < 1e-12) x0 -= 0.5, x1 += 0.5;
  if (y1 - y0 < 1e-12) y0 -= 0.5, y1 += 0.5;
  const double pw = spec.width - kLeft - kRight, ph = spec.height - kTop - kBottom;
  auto px = [&](double x) { return kLeft + (x - x0) / (x1 - x0) * pw; };
  auto py = [&](double y) { return kTop + ph - (y - y0) / (y1 - y0) * ph; };
  using detail::svg_num;
  using detail::xml_escape;

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << spec.width << "\" height=\"" << spec.height
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << svg_num(spec.width / 2.0) << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">"
     << xml_escape(spec.title) << "</text>\n";
  os << "<line class=\"axis\" x1=\"" << kLeft << "\" y1=\"" << svg_num(kTop + ph) << "\" x2=\"" << svg_num(kLeft + pw)
     << "\" y2=\"" << svg_num(kTop + ph) << "\" stroke=\"black\"/>\n";
  os << "<line class=\"axis\" x1=\"" << kLeft << "\" y1=\"" << kTop << "\" x2=\"" << kLeft << "\" y2=\""
     << svg_num(kTop + ph) << "\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double xv = x0 + (x1 - x0) * t / 4.0, yv = y0 + (y1 - y0) * t / 4.0;
    os << "<text x=\"" << svg_num(px(xv)) << "\" y=\"" << svg_num(kTop + ph + 18) << "\" text-anchor=\"middle\">"
       << detail::format_double(std::round(xv * 1000) / 1000) << "</text>\n";
    os << "<text x=\"" << svg_num(kLeft - 8) << "\" y=\"" << svg_num(py(yv) + 4) << "\" text-anchor=\"end\">"
       << detail::format_double(std::round(yv * 1000) / 1000) << "</text>\n";
  }
  os << "<text class=\"xlabel\" x=\"" << svg_num(kLeft + pw / 2) << "\" y=\"" << spec.height - 15
     << "\" text-anchor=\"middle\">" << xml_escape(spec.x_label) << "</text>\n";
  os << "<text class=\"ylabel\" x=\"18\" y=\"" << svg_num(kTop + ph / 2) << "\" text-anchor=\"middle\" transform=\"rotate(-90 18 "
     << svg_num(kTop + ph / 2) << ")\">" << xml_escape(spec.y_label) << "</text>\n";
  for (std::size_t si = 0; si < spec.series.size(); ++si) {
    const auto& s = spec.series[si];
    const char* color = kColors[si % std::size(kColors)];
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i) os << (i ? " " : "") << svg_num(px(s.x[i])) << "," << svg_num(py(s.y[i]));
    os << "\"/>\n";
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      os << "<circle class=\"point\" cx=\"" << svg_num(px(s.x[i])) << "\" cy=\"" << svg_num(py(s.y[i]))
         << "\" r=\"3\" fill=\"" << color << "\"/>\n";
    }
    os << "<text x=\"" << svg_num(kLeft + pw - 4) << "\" y=\"" << svg_num(kTop + 14 + 16 * si)
       << "\" text-anchor=\"end\" fill=\"" << color << "\">" << xml_escape(s.name) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

/// Sweep CSV: mean precision per condition. PR CSV: recall against precision.
/// Anything else: first column on x, every other numeric column as a series.
inline PlotSpec plot_from_csv(const CsvTable& t, const std::string& title) {
  PlotSpec spec;
  spec.title = title;
  auto value = [](const std::string& cell, std::size_t row, const std::string& col) {
    return detail::parse_double(cell, row + 2, col.c_str());
  };
  const bool sweep = std::find(t.header.begin(), t.header.end(), "condition") != t.header.end() &&
                     std::find(t.header.begin(), t.header.end(), "precision") != t.header.end();
  const bool pr = t.header.size() == 3 && t.header[0] == "threshold";
  if (sweep) {
    const std::size_t c = t.column("condition"), p = t.column("precision");
    spec.x_label = t.header[c];
    spec.y_label = t.header[p];
    PlotSeries s{t.header[p], {}, {}};
    std::vector<double> counts;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
      const double x = value(t.rows[r][c], r, t.header[c]), y = value(t.rows[r][p], r, t.header[p]);
      const auto it = std::find(s.x.begin(), s.x.end(), x);
      if (it == s.x.end()) {
        s.x.push_back(x);
        s.y.push_back(y);
        counts.push_back(1);
      } else {
        const auto k = static_cast<std::size_t>(it - s.x.begin());
        s.y[k] += y;
        counts[k] += 1;
      }
    }
    for (std::size_t k = 0; k < s.y.size(); ++k) s.y[k] /= counts[k];
    spec.series.push_back(std::move(s));
    return spec;
  }
  if (pr) {
    spec.x_label = t.header[1];
    spec.y_label = t.header[2];
    PlotSeries s{t.header[2], {}, {}};
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
      s.x.push_back(value(t.rows[r][1], r, t.header[1]));
      s.y.push_back(value(t.rows[r][2], r, t.header[2]));
    }
    spec.series.push_back(std::move(s));
    return spec;
  }
  if (t.header.size() < 2) throw ParameterError("plot needs at least two CSV columns");
  spec.x_label = t.header[0];
  spec.y_label = t.header.size() == 2 ? t.header[1] : "value";
  for (std::size_t c = 1; c < t.header.size(); ++c) {
    PlotSeries s{t.header[c], {}, {}};
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
      s.x.push_back(value(t.rows[r][0], r, t.header[0]));
      s.y.push_back(value(t.rows[r][c], r, t.header[c]));
    }
    spec.series.push_back(std::move(s));
  }
  return spec;
}

}  // namespace ssdesc
