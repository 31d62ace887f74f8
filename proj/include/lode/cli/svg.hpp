#pragma once

// Minimal deterministic SVG plots of 2-D trajectories.

#include <algorithm>
#include <cstdio>
#include <limits>
#include <string>
#include <vector>

#include "lode/numcore.hpp"

namespace lode::cli {

struct Polyline {
  std::vector<Vector> points;
  std::string color;
  double width = 1.5;
  std::string label;
};

struct Markers {
  std::vector<Vector> points;
  std::string color;
  double radius = 2.5;
  std::string label;
};

namespace detail {

inline std::string fmt2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace detail

/// Square plot with equal axis scaling and a legend in the top-left corner.
inline std::string render_svg(const std::string& title, const std::vector<Polyline>& lines,
                              const std::vector<Markers>& markers, int size = 480) {
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  auto grow = [&](const std::vector<Vector>& pts) {
    for (const auto& p : pts) {
      x0 = std::min(x0, p[0]);
      x1 = std::max(x1, p[0]);
      y0 = std::min(y0, p[1]);
      y1 = std::max(y1, p[1]);
    }
  };
  for (const auto& l : lines) grow(l.points);
  for (const auto& m : markers) grow(m.points);
  if (!(x1 >= x0)) x0 = y0 = -1.0, x1 = y1 = 1.0;
  const double span = std::max({x1 - x0, y1 - y0, 1e-9}) * 1.1;
  const double cx = 0.5 * (x0 + x1), cy = 0.5 * (y0 + y1);
  const double margin = 30.0, inner = size - 2.0 * margin;
  auto px = [&](double x) { return margin + (x - cx + 0.5 * span) / span * inner; };
  auto py = [&](double y) { return margin + (cy + 0.5 * span - y) / span * inner; };

  using detail::fmt2;
  const std::string s = std::to_string(size);
  std::string out = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + s + "\" height=\"" + s +
                    "\" viewBox=\"0 0 " + s + " " + s + "\">\n";
  out += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out += "<rect x=\"" + fmt2(margin) + "\" y=\"" + fmt2(margin) + "\" width=\"" + fmt2(inner) +
         "\" height=\"" + fmt2(inner) + "\" fill=\"none\" stroke=\"#cccccc\"/>\n";
  out += "<text x=\"" + fmt2(margin) + "\" y=\"20\" font-family=\"sans-serif\" font-size=\"13\">" +
         detail::xml_escape(title) + "</text>\n";
  for (const auto& l : lines) {
    if (l.points.empty()) continue;
    out += "<polyline fill=\"none\" stroke=\"" + l.color + "\" stroke-width=\"" + fmt2(l.width) + "\" points=\"";
    for (std::size_t i = 0; i < l.points.size(); ++i) {
      if (i) out += ' ';
      out += fmt2(px(l.points[i][0])) + ',' + fmt2(py(l.points[i][1]));
    }
    out += "\"/>\n";
  }
  for (const auto& m : markers) {
    for (const auto& p : m.points) {
      out += "<circle cx=\"" + fmt2(px(p[0])) + "\" cy=\"" + fmt2(py(p[1])) + "\" r=\"" + fmt2(m.radius) +
             "\" fill=\"" + m.color + "\"/>\n";
    }
  }
  double ly = margin + 14.0;
  auto legend = [&](const std::string& color, const std::string& label) {
    if (label.empty()) return;
    out += "<rect x=\"" + fmt2(margin + 6) + "\" y=\"" + fmt2(ly - 8) + "\" width=\"10\" height=\"10\" fill=\"" +
           color + "\"/>\n";
    out += "<text x=\"" + fmt2(margin + 20) + "\" y=\"" + fmt2(ly + 1) +
           "\" font-family=\"sans-serif\" font-size=\"11\">" + detail::xml_escape(label) + "</text>\n";
    ly += 14.0;
  };
  for (const auto& l : lines) legend(l.color, l.label);
  for (const auto& m : markers) legend(m.color, m.label);
  out += "</svg>\n";
  return out;
}

}  // namespace lode::cli
