#pragma once

// Minimal deterministic SVG line plots. Output is a pure function of the
// input series: fixed canvas, fixed palette, fixed number formatting — so
// regenerating a plot from the same logged data is byte-identical.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "skillnet/common.hpp"

namespace skillnet {

struct PlotSeries {
  std::string label;
  std::vector<std::pair<double, double>> points;  // (x, y)
};

namespace detail_plot {

inline std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

inline const char* palette(size_t i) {
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                 "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};
  return colors[i % 8];
}

struct Range {
  double lo = 0.0, hi = 1.0;
};

inline Range span(const std::vector<PlotSeries>& series, bool x_axis) {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  for (const auto& s : series)
    for (const auto& [x, y] : s.points) {
      const double v = x_axis ? x : y;
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  if (!std::isfinite(lo)) return {0.0, 1.0};
  if (hi - lo < 1e-9) {
    lo -= 0.5;
    hi += 0.5;
  }
  const double pad = 0.05 * (hi - lo);
  return {lo - pad, hi + pad};
}

}  // namespace detail_plot

inline void write_line_plot(const std::filesystem::path& path, const std::string& title,
                            const std::string& xlabel, const std::string& ylabel,
                            const std::vector<PlotSeries>& series) {
  using detail_plot::fmt;
  if (series.empty()) throw ContractError("write_line_plot: no series");
  const double width = 640, height = 420;
  const double ml = 64, mr = 150, mt = 40, mb = 48;  // margins, legend on the right
  const detail_plot::Range xr = detail_plot::span(series, true);
  const detail_plot::Range yr = detail_plot::span(series, false);
  auto px = [&](double x) { return ml + (x - xr.lo) / (xr.hi - xr.lo) * (width - ml - mr); };
  auto py = [&](double y) { return height - mb - (y - yr.lo) / (yr.hi - yr.lo) * (height - mt - mb); };

  std::ofstream os(path);
  if (!os) throw IoError("cannot open plot file '" + path.string() + "'");
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fmt(width) << "\" height=\""
     << fmt(height) << "\" viewBox=\"0 0 " << fmt(width) << " " << fmt(height) << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << fmt(width / 2) << "\" y=\"24\" text-anchor=\"middle\" "
        "font-family=\"sans-serif\" font-size=\"15\">" << title << "</text>\n";

  // Axes with 5 ticks each.
  os << "<g stroke=\"#333\" stroke-width=\"1\" font-family=\"sans-serif\" font-size=\"11\">\n";
  os << "<line x1=\"" << fmt(ml) << "\" y1=\"" << fmt(height - mb) << "\" x2=\""
     << fmt(width - mr) << "\" y2=\"" << fmt(height - mb) << "\"/>\n";
  os << "<line x1=\"" << fmt(ml) << "\" y1=\"" << fmt(mt) << "\" x2=\"" << fmt(ml) << "\" y2=\""
     << fmt(height - mb) << "\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double fx = xr.lo + (xr.hi - xr.lo) * k / 4.0;
    const double fy = yr.lo + (yr.hi - yr.lo) * k / 4.0;
    os << "<line x1=\"" << fmt(px(fx)) << "\" y1=\"" << fmt(height - mb) << "\" x2=\""
       << fmt(px(fx)) << "\" y2=\"" << fmt(height - mb + 5) << "\"/>\n";
    os << "<text stroke=\"none\" x=\"" << fmt(px(fx)) << "\" y=\"" << fmt(height - mb + 18)
       << "\" text-anchor=\"middle\">" << fmt(fx) << "</text>\n";
    os << "<line x1=\"" << fmt(ml - 5) << "\" y1=\"" << fmt(py(fy)) << "\" x2=\"" << fmt(ml)
       << "\" y2=\"" << fmt(py(fy)) << "\"/>\n";
    os << "<text stroke=\"none\" x=\"" << fmt(ml - 8) << "\" y=\"" << fmt(py(fy) + 4)
       << "\" text-anchor=\"end\">" << fmt(fy) << "</text>\n";
  }
  os << "</g>\n";
  os << "<text x=\"" << fmt((ml + width - mr) / 2) << "\" y=\"" << fmt(height - 10)
     << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" << xlabel
     << "</text>\n";
  os << "<text x=\"16\" y=\"" << fmt((mt + height - mb) / 2)
     << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" transform=\"rotate(-90 16 "
     << fmt((mt + height - mb) / 2) << ")\">" << ylabel << "</text>\n";

  for (size_t si = 0; si < series.size(); ++si) {
    const auto& s = series[si];
    if (s.points.empty()) continue;
    os << "<polyline fill=\"none\" stroke=\"" << detail_plot::palette(si)
       << "\" stroke-width=\"1.5\" points=\"";
    for (size_t i = 0; i < s.points.size(); ++i) {
      if (i) os << " ";
      os << fmt(px(s.points[i].first)) << "," << fmt(py(s.points[i].second));
    }
    os << "\"/>\n";
    for (const auto& [x, y] : s.points)
      os << "<circle cx=\"" << fmt(px(x)) << "\" cy=\"" << fmt(py(y)) << "\" r=\"2.5\" fill=\""
         << detail_plot::palette(si) << "\"/>\n";
    const double ly = mt + 16 * static_cast<double>(si);
    os << "<line x1=\"" << fmt(width - mr + 8) << "\" y1=\"" << fmt(ly) << "\" x2=\""
       << fmt(width - mr + 28) << "\" y2=\"" << fmt(ly) << "\" stroke=\""
       << detail_plot::palette(si) << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << fmt(width - mr + 33) << "\" y=\"" << fmt(ly + 4)
       << "\" font-family=\"sans-serif\" font-size=\"11\">" << s.label << "</text>\n";
  }
  os << "</svg>\n";
  if (!os) throw IoError("write failed for plot '" + path.string() + "'");
}

}  // namespace skillnet
