#pragma once

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "relic/common.hpp"
#include "relic/metrics.hpp"

namespace relic {

struct Series {
  std::string label;
  std::vector<double> x, y;
};

namespace detail {

inline std::string fmt_g(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

inline std::string fmt_px(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

inline const char* palette(int i) {
  static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                  "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};
  return kColors[i % 8];
}

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

}  // namespace detail

// Deterministic standalone SVG line chart (no timestamps, fixed palette and
// geometry, value-derived coordinates only).
inline void write_line_chart_svg(const std::string& path, const std::string& title,
                                 const std::string& x_label, const std::string& y_label,
                                 const std::vector<Series>& series) {
  check(!series.empty(), "plot/empty", "no series to plot");
  double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
  for (const auto& s : series) {
    check(s.x.size() == s.y.size(), "plot/shape", "series " + s.label);
    for (size_t i = 0; i < s.x.size(); ++i) {
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  }
  check(x0 <= x1 && y0 <= y1, "plot/empty", "series contain no points");
  if (x1 - x0 < 1e-12) { x0 -= 0.5; x1 += 0.5; }
  if (y1 - y0 < 1e-12) { y0 -= 0.5; y1 += 0.5; }
  const double pad_y = 0.05 * (y1 - y0);
  y0 -= pad_y;
  y1 += pad_y;

  const double W = 800, H = 500, ml = 70, mr = 160, mt = 50, mb = 55;
  const double pw = W - ml - mr, ph = H - mt - mb;
  auto px = [&](double x) { return ml + (x - x0) / (x1 - x0) * pw; };
  auto py = [&](double y) { return mt + (1.0 - (y - y0) / (y1 - y0)) * ph; };

  std::ofstream os(path, std::ios::trunc);
  check(os.is_open(), "plot/io", "cannot open " + path);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
     << "\" viewBox=\"0 0 " << W << " " << H << "\">\n";
  os << "<rect width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
  os << "<text x=\"" << W / 2 << "\" y=\"28\" text-anchor=\"middle\" font-family=\"sans-serif\" "
        "font-size=\"17\">"
     << detail::xml_escape(title) << "</text>\n";

  // axes + ticks
  os << "<g stroke=\"#333\" stroke-width=\"1\">\n";
  os << "<line x1=\"" << ml << "\" y1=\"" << mt + ph << "\" x2=\"" << ml + pw << "\" y2=\""
     << mt + ph << "\"/>\n";
  os << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << mt + ph
     << "\"/>\n</g>\n";
  const int ticks = 5;
  for (int i = 0; i <= ticks; ++i) {
    const double fx = x0 + (x1 - x0) * i / ticks;
    const double fy = y0 + (y1 - y0) * i / ticks;
    os << "<line x1=\"" << detail::fmt_px(px(fx)) << "\" y1=\"" << mt + ph << "\" x2=\""
       << detail::fmt_px(px(fx)) << "\" y2=\"" << mt + ph + 5 << "\" stroke=\"#333\"/>\n";
    os << "<text x=\"" << detail::fmt_px(px(fx)) << "\" y=\"" << mt + ph + 20
       << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">"
       << detail::fmt_g(fx) << "</text>\n";
    os << "<line x1=\"" << ml - 5 << "\" y1=\"" << detail::fmt_px(py(fy)) << "\" x2=\"" << ml
       << "\" y2=\"" << detail::fmt_px(py(fy)) << "\" stroke=\"#333\"/>\n";
    os << "<text x=\"" << ml - 9 << "\" y=\"" << detail::fmt_px(py(fy) + 4)
       << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">"
       << detail::fmt_g(fy) << "</text>\n";
  }
  os << "<text x=\"" << ml + pw / 2 << "\" y=\"" << H - 12
     << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">"
     << detail::xml_escape(x_label) << "</text>\n";
  os << "<text x=\"18\" y=\"" << mt + ph / 2
     << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\" transform=\"rotate(-90 18 "
     << mt + ph / 2 << ")\">" << detail::xml_escape(y_label) << "</text>\n";

  for (size_t si = 0; si < series.size(); ++si) {
    const auto& s = series[si];
    os << "<polyline fill=\"none\" stroke=\"" << detail::palette(static_cast<int>(si))
       << "\" stroke-width=\"1.8\" points=\"";
    for (size_t i = 0; i < s.x.size(); ++i) {
      if (i) os << " ";
      os << detail::fmt_px(px(s.x[i])) << "," << detail::fmt_px(py(s.y[i]));
    }
    os << "\"/>\n";
    const double ly = mt + 16 + 18 * static_cast<double>(si);
    os << "<line x1=\"" << ml + pw + 12 << "\" y1=\"" << ly << "\" x2=\"" << ml + pw + 34
       << "\" y2=\"" << ly << "\" stroke=\"" << detail::palette(static_cast<int>(si))
       << "\" stroke-width=\"2.5\"/>\n";
    os << "<text x=\"" << ml + pw + 40 << "\" y=\"" << ly + 4
       << "\" font-family=\"sans-serif\" font-size=\"12\">" << detail::xml_escape(s.label)
       << "</text>\n";
  }
  os << "</svg>\n";
  check(static_cast<bool>(os), "plot/io", "write failed for " + path);
}

// Tabular twin of a chart: one row per point.
inline void write_series_csv(const std::string& path, const std::vector<Series>& series) {
  std::ofstream os(path, std::ios::trunc);
  check(os.is_open(), "plot/io", "cannot open " + path);
  os << "series,x,y\n";
  for (const auto& s : series)
    for (size_t i = 0; i < s.x.size(); ++i)
      os << "\"" << s.label << "\"," << detail::fmt_g(s.x[i]) << "," << detail::fmt_g(s.y[i])
         << "\n";
  check(static_cast<bool>(os), "plot/io", "write failed for " + path);
}

inline std::string basename_of(const std::string& path) {
  const auto slash = path.find_last_of('/');
  std::string b = slash == std::string::npos ? path : path.substr(slash + 1);
  const auto dot = b.find_last_of('.');
  if (dot != std::string::npos && dot > 0) b = b.substr(0, dot);
  return b;
}

// Return-vs-episode series: one per eval-trial record across the given files.
inline std::vector<Series> eval_series_from_metrics(const std::vector<std::string>& paths) {
  std::vector<Series> out;
  for (const auto& p : paths) {
    int idx = 0;
    for (const auto& rec : read_metrics(p)) {
      if (rec.value("kind", "") != "eval-trial" || !rec.contains("per_episode_mean")) continue;
      Series s;
      s.label = basename_of(p) + " eval#" + std::to_string(idx++) + " @" +
                std::to_string(rec.value("env_step", int64_t{0}));
      const auto& means = rec["per_episode_mean"];
      for (size_t e = 0; e < means.size(); ++e) {
        s.x.push_back(static_cast<double>(e + 1));
        s.y.push_back(means[e].get<double>());
      }
      out.push_back(std::move(s));
    }
  }
  return out;
}

// Learning-curve series (per-rollout mean episode return): one per file.
inline std::vector<Series> training_series_from_metrics(const std::vector<std::string>& paths) {
  std::vector<Series> out;
  for (const auto& p : paths) {
    Series s;
    s.label = basename_of(p);
    for (const auto& rec : read_metrics(p)) {
      if (rec.value("kind", "") != "rollout") continue;
      s.x.push_back(static_cast<double>(rec.value("env_step", int64_t{0})));
      s.y.push_back(rec.value("mean_return", 0.0));
    }
    if (!s.x.empty()) out.push_back(std::move(s));
  }
  return out;
}

}  // namespace relic
