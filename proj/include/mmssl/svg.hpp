#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

namespace mmssl {

// Minimal static SVG line charts: axes, ticks, one polyline per series and a
// legend. No external assets, no scripting.

struct ChartSeries {
  std::string label;
  std::vector<std::pair<double, double>> points;  // (x, y)
};

namespace svgdetail {

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

inline std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

inline const char* palette(size_t i) {
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                 "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};
  return colors[i % (sizeof colors / sizeof colors[0])];
}

}  // namespace svgdetail

inline std::string render_line_chart(const std::vector<ChartSeries>& series, const std::string& title,
                                     const std::string& x_label, const std::string& y_label) {
  const double width = 800, height = 500;
  const double ml = 70, mr = 160, mt = 40, mb = 55;
  const double pw = width - ml - mr, ph = height - mt - mb;

  double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  bool first = true;
  for (const auto& s : series)
    for (const auto& [x, y] : s.points) {
      if (first) {
        xmin = xmax = x;
        ymin = ymax = y;
        first = false;
      }
      xmin = std::min(xmin, x);
      xmax = std::max(xmax, x);
      ymin = std::min(ymin, y);
      ymax = std::max(ymax, y);
    }
  if (xmax == xmin) xmax = xmin + 1;
  if (ymax == ymin) ymax = ymin + 1;
  const double ypad = 0.05 * (ymax - ymin);
  ymin -= ypad;
  ymax += ypad;

  auto px = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * pw; };
  auto py = [&](double y) { return mt + ph - (y - ymin) / (ymax - ymin) * ph; };

  std::string out;
  out += "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 " + svgdetail::num(width) + " " +
         svgdetail::num(height) + "\" font-family=\"sans-serif\" font-size=\"13\">\n";
  out += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out += "<text x=\"" + svgdetail::num(ml + pw / 2) + "\" y=\"22\" text-anchor=\"middle\" font-size=\"16\">" +
         svgdetail::xml_escape(title) + "</text>\n";

  // axes
  out += "<line x1=\"" + svgdetail::num(ml) + "\" y1=\"" + svgdetail::num(mt + ph) + "\" x2=\"" +
         svgdetail::num(ml + pw) + "\" y2=\"" + svgdetail::num(mt + ph) + "\" stroke=\"black\"/>\n";
  out += "<line x1=\"" + svgdetail::num(ml) + "\" y1=\"" + svgdetail::num(mt) + "\" x2=\"" + svgdetail::num(ml) +
         "\" y2=\"" + svgdetail::num(mt + ph) + "\" stroke=\"black\"/>\n";

  const int ticks = 5;
  for (int i = 0; i <= ticks; ++i) {
    const double fx = xmin + (xmax - xmin) * i / ticks;
    const double fy = ymin + (ymax - ymin) * i / ticks;
    out += "<line x1=\"" + svgdetail::num(px(fx)) + "\" y1=\"" + svgdetail::num(mt + ph) + "\" x2=\"" +
           svgdetail::num(px(fx)) + "\" y2=\"" + svgdetail::num(mt + ph + 5) + "\" stroke=\"black\"/>\n";
    out += "<text x=\"" + svgdetail::num(px(fx)) + "\" y=\"" + svgdetail::num(mt + ph + 20) +
           "\" text-anchor=\"middle\">" + svgdetail::num(fx) + "</text>\n";
    out += "<line x1=\"" + svgdetail::num(ml - 5) + "\" y1=\"" + svgdetail::num(py(fy)) + "\" x2=\"" +
           svgdetail::num(ml) + "\" y2=\"" + svgdetail::num(py(fy)) + "\" stroke=\"black\"/>\n";
    out += "<text x=\"" + svgdetail::num(ml - 9) + "\" y=\"" + svgdetail::num(py(fy) + 4) +
           "\" text-anchor=\"end\">" + svgdetail::num(fy) + "</text>\n";
  }
  out += "<text x=\"" + svgdetail::num(ml + pw / 2) + "\" y=\"" + svgdetail::num(height - 12) +
         "\" text-anchor=\"middle\">" + svgdetail::xml_escape(x_label) + "</text>\n";
  out += "<text x=\"18\" y=\"" + svgdetail::num(mt + ph / 2) + "\" text-anchor=\"middle\" transform=\"rotate(-90 18 " +
         svgdetail::num(mt + ph / 2) + ")\">" + svgdetail::xml_escape(y_label) + "</text>\n";

  for (size_t s = 0; s < series.size(); ++s) {
    if (!series[s].points.empty()) {
      std::string pts;
      for (const auto& [x, y] : series[s].points)
        pts += svgdetail::num(px(x)) + "," + svgdetail::num(py(y)) + " ";
      out += "<polyline fill=\"none\" stroke=\"" + std::string(svgdetail::palette(s)) +
             "\" stroke-width=\"1.8\" points=\"" + pts + "\"/>\n";
    }
    const double ly = mt + 14 + 20 * static_cast<double>(s);
    out += "<line x1=\"" + svgdetail::num(ml + pw + 12) + "\" y1=\"" + svgdetail::num(ly) + "\" x2=\"" +
           svgdetail::num(ml + pw + 36) + "\" y2=\"" + svgdetail::num(ly) + "\" stroke=\"" +
           std::string(svgdetail::palette(s)) + "\" stroke-width=\"1.8\"/>\n";
    out += "<text x=\"" + svgdetail::num(ml + pw + 42) + "\" y=\"" + svgdetail::num(ly + 4) + "\">" +
           svgdetail::xml_escape(series[s].label) + "</text>\n";
  }
  out += "</svg>\n";
  return out;
}

}  // namespace mmssl
