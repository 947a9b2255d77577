#pragma once

#include <array>
#include <cstdio>
#include <sstream>
#include <string>

#include "core.hpp"

// Minimal deterministic SVG writer for line plots, scatter, level sets and
// heatmaps. Numbers are printed with a fixed format so equal data gives equal
// bytes.
namespace pwlc::svg {

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
  std::string color = "#1f77b4";
  double width = 1.2;
  bool points = false;
  bool closed = false;
};

struct Rect {
  double x0, y0, x1, y1;
  double value;  // mapped through the colormap
};

struct Plot {
  std::string title;
  std::string xlabel;
  std::string ylabel;
  int width = 640;
  int height = 480;
  // Explicit axis ranges; when lo >= hi the range is fitted to the data.
  double xmin = 0.0, xmax = 0.0, ymin = 0.0, ymax = 0.0;
  std::vector<Rect> cells;
  std::vector<Series> series;

  void validate() const {
    if (width < 64 || height < 64) throw ValidationError("svg: canvas too small");
    for (const auto& s : series) {
      if (s.x.size() != s.y.size()) throw ValidationError("svg: series '" + s.label + "' has mismatched x/y");
      for (std::size_t k = 0; k < s.x.size(); ++k)
        if (!std::isfinite(s.x[k]) || !std::isfinite(s.y[k]))
          throw ValidationError("svg: series '" + s.label + "' contains non-finite values");
    }
    for (const auto& c : cells)
      if (!std::isfinite(c.x0) || !std::isfinite(c.x1) || !std::isfinite(c.y0) || !std::isfinite(c.y1))
        throw ValidationError("svg: heatmap cell with non-finite corner");
  }
};

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", std::abs(v) < 5e-4 ? 0.0 : v);
  return buf;
}

inline std::string escape(const std::string& s) {
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

// Perceptually ordered blue-green-yellow ramp on [0, 1].
inline std::string colormap(double t) {
  static const std::array<std::array<double, 3>, 5> stops{{{68, 1, 84}, {59, 82, 139}, {33, 145, 140}, {94, 201, 98}, {253, 231, 37}}};
  t = std::clamp(std::isfinite(t) ? t : 1.0, 0.0, 1.0) * 4.0;
  const int i = std::min(3, static_cast<int>(t));
  const double f = t - i;
  char buf[16];
  int rgb[3];
  for (int c = 0; c < 3; ++c) rgb[c] = static_cast<int>(std::lround(stops[i][c] + f * (stops[i + 1][c] - stops[i][c])));
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", rgb[0], rgb[1], rgb[2]);
  return buf;
}

inline std::string render(const Plot& plot) {
  plot.validate();
  double x0 = plot.xmin, x1 = plot.xmax, y0 = plot.ymin, y1 = plot.ymax;
  if (!(x0 < x1) || !(y0 < y1)) {
    double ax = std::numeric_limits<double>::infinity(), bx = -ax, ay = ax, by = -ax;
    for (const auto& s : plot.series)
      for (std::size_t k = 0; k < s.x.size(); ++k) {
        ax = std::min(ax, s.x[k]);
        bx = std::max(bx, s.x[k]);
        ay = std::min(ay, s.y[k]);
        by = std::max(by, s.y[k]);
      }
    for (const auto& c : plot.cells) {
      ax = std::min({ax, c.x0, c.x1});
      bx = std::max({bx, c.x0, c.x1});
      ay = std::min({ay, c.y0, c.y1});
      by = std::max({by, c.y0, c.y1});
    }
    if (!(x0 < x1)) {
      x0 = std::isfinite(ax) ? ax : 0.0;
      x1 = std::isfinite(bx) ? bx : 1.0;
      if (!(x0 < x1)) x1 = x0 + 1.0;
    }
    if (!(y0 < y1)) {
      y0 = std::isfinite(ay) ? ay : 0.0;
      y1 = std::isfinite(by) ? by : 1.0;
      if (!(y0 < y1)) y1 = y0 + 1.0;
    }
  }
  const double ml = 64, mr = 16, mt = 32, mb = 48;
  const double pw = plot.width - ml - mr, ph = plot.height - mt - mb;
  auto X = [&](double v) { return ml + (v - x0) / (x1 - x0) * pw; };
  auto Y = [&](double v) { return mt + (1.0 - (v - y0) / (y1 - y0)) * ph; };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << plot.width << "\" height=\"" << plot.height
     << "\" viewBox=\"0 0 " << plot.width << ' ' << plot.height << "\">\n";
  os << "<rect x=\"0\" y=\"0\" width=\"" << plot.width << "\" height=\"" << plot.height << "\" fill=\"white\"/>\n";
  os << "<defs><clipPath id=\"frame\"><rect x=\"" << num(ml) << "\" y=\"" << num(mt) << "\" width=\"" << num(pw)
     << "\" height=\"" << num(ph) << "\"/></clipPath></defs>\n";
  if (!plot.cells.empty()) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto& c : plot.cells)
      if (std::isfinite(c.value)) {
        lo = std::min(lo, c.value);
        hi = std::max(hi, c.value);
      }
    os << "<g clip-path=\"url(#frame)\" stroke=\"none\" shape-rendering=\"crispEdges\">\n";
    for (const auto& c : plot.cells) {
      const double t = hi > lo ? (c.value - lo) / (hi - lo) : 0.5;
      const double a = X(std::min(c.x0, c.x1)), b = Y(std::max(c.y0, c.y1));
      os << "<rect x=\"" << num(a) << "\" y=\"" << num(b) << "\" width=\"" << num(std::abs(X(c.x1) - X(c.x0)))
         << "\" height=\"" << num(std::abs(Y(c.y1) - Y(c.y0))) << "\" fill=\"" << colormap(t) << "\"/>\n";
    }
    os << "</g>\n";
  }
  os << "<rect x=\"" << num(ml) << "\" y=\"" << num(mt) << "\" width=\"" << num(pw) << "\" height=\"" << num(ph)
     << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double vx = x0 + (x1 - x0) * k / 4.0, vy = y0 + (y1 - y0) * k / 4.0;
    os << "<text x=\"" << num(X(vx)) << "\" y=\"" << num(mt + ph + 16) << "\" font-size=\"11\" text-anchor=\"middle\">"
       << num(vx) << "</text>\n";
    os << "<text x=\"" << num(ml - 6) << "\" y=\"" << num(Y(vy) + 4) << "\" font-size=\"11\" text-anchor=\"end\">"
       << num(vy) << "</text>\n";
  }
  os << "<text x=\"" << num(ml + pw / 2) << "\" y=\"" << num(plot.height - 10.0)
     << "\" font-size=\"13\" text-anchor=\"middle\">" << escape(plot.xlabel) << "</text>\n";
  os << "<text x=\"14\" y=\"" << num(mt + ph / 2) << "\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 14 "
     << num(mt + ph / 2) << ")\">" << escape(plot.ylabel) << "</text>\n";
  os << "<text x=\"" << num(ml + pw / 2) << "\" y=\"20\" font-size=\"14\" text-anchor=\"middle\">" << escape(plot.title)
     << "</text>\n";
  os << "<g clip-path=\"url(#frame)\" fill=\"none\">\n";
  for (const auto& s : plot.series) {
    if (s.x.empty()) continue;
    if (s.points) {
      for (std::size_t k = 0; k < s.x.size(); ++k)
        os << "<circle cx=\"" << num(X(s.x[k])) << "\" cy=\"" << num(Y(s.y[k])) << "\" r=\"1.5\" fill=\"" << s.color
           << "\"/>\n";
      continue;
    }
    os << "<" << (s.closed ? "polygon" : "polyline") << " stroke=\"" << s.color << "\" stroke-width=\"" << num(s.width)
       << "\" points=\"";
    for (std::size_t k = 0; k < s.x.size(); ++k) os << (k ? " " : "") << num(X(s.x[k])) << ',' << num(Y(s.y[k]));
    os << "\"/>\n";
  }
  os << "</g>\n";
  int row = 0;
  for (const auto& s : plot.series) {
    if (s.label.empty()) continue;
    const double ly = mt + 14 + 14 * row++;
    os << "<line x1=\"" << num(ml + pw - 120) << "\" y1=\"" << num(ly - 4) << "\" x2=\"" << num(ml + pw - 100) << "\" y2=\""
       << num(ly - 4) << "\" stroke=\"" << s.color << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << num(ml + pw - 96) << "\" y=\"" << num(ly) << "\" font-size=\"11\">" << escape(s.label)
       << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace pwlc::svg
