#pragma once

// Self-contained SVG loss-curve panels: one for the general stage, one per
// personalized patient.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "idol/metrics.hpp"

namespace idol {

namespace detail {

inline std::string svg_escape(const std::string& s) {
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

inline std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

struct Series {
  std::vector<MetricRecord> points;
  const char* label;
  const char* color;
};

inline constexpr double kPanelW = 360, kPanelH = 240;
inline constexpr double kMarginL = 56, kMarginR = 12, kMarginT = 28, kMarginB = 36;

// `reference` draws a dashed horizontal line (e.g. the general model's final
// validation loss for this patient) when set.
inline std::string svg_panel(double ox, double oy, const std::string& title, const std::vector<Series>& series,
                             const std::optional<double>& reference) {
  double xmax = 1, ymin = INFINITY, ymax = -INFINITY;
  for (const auto& s : series)
    for (const auto& p : s.points) {
      xmax = std::max(xmax, static_cast<double>(p.epoch));
      ymin = std::min(ymin, p.loss);
      ymax = std::max(ymax, p.loss);
    }
  if (reference) {
    ymin = std::min(ymin, *reference);
    ymax = std::max(ymax, *reference);
  }
  if (!std::isfinite(ymin)) ymin = 0, ymax = 1;
  if (ymax - ymin < 1e-12) ymax = ymin + 1e-12;
  const double pad = 0.05 * (ymax - ymin);
  ymin -= pad;
  ymax += pad;
  const double pw = kPanelW - kMarginL - kMarginR, ph = kPanelH - kMarginT - kMarginB;
  const auto px = [&](double e) { return ox + kMarginL + (xmax > 1 ? (e - 1) / (xmax - 1) : 0.5) * pw; };
  const auto py = [&](double v) { return oy + kMarginT + (ymax - v) / (ymax - ymin) * ph; };

  std::string s = "<g>\n";
  s += "<rect x=\"" + fmt("%.1f", ox + kMarginL) + "\" y=\"" + fmt("%.1f", oy + kMarginT) + "\" width=\"" +
       fmt("%.1f", pw) + "\" height=\"" + fmt("%.1f", ph) + "\" fill=\"none\" stroke=\"#888\"/>\n";
  s += "<text x=\"" + fmt("%.1f", ox + kPanelW / 2) + "\" y=\"" + fmt("%.1f", oy + 18) +
       "\" text-anchor=\"middle\" font-size=\"13\">" + svg_escape(title) + "</text>\n";
  for (double v : {ymin + pad, ymax - pad})
    s += "<text x=\"" + fmt("%.1f", ox + kMarginL - 4) + "\" y=\"" + fmt("%.1f", py(v) + 4) +
         "\" text-anchor=\"end\" font-size=\"10\">" + fmt("%.4g", v) + "</text>\n";
  for (double e : {1.0, xmax})
    s += "<text x=\"" + fmt("%.1f", px(e)) + "\" y=\"" + fmt("%.1f", oy + kPanelH - kMarginB + 14) +
         "\" text-anchor=\"middle\" font-size=\"10\">" + fmt("%.0f", e) + "</text>\n";
  s += "<text x=\"" + fmt("%.1f", ox + kMarginL + pw / 2) + "\" y=\"" + fmt("%.1f", oy + kPanelH - 6) +
       "\" text-anchor=\"middle\" font-size=\"11\">epoch</text>\n";
  if (reference)
    s += "<line x1=\"" + fmt("%.2f", px(1)) + "\" y1=\"" + fmt("%.2f", py(*reference)) + "\" x2=\"" +
         fmt("%.2f", px(xmax)) + "\" y2=\"" + fmt("%.2f", py(*reference)) +
         "\" stroke=\"#555\" stroke-dasharray=\"4 3\"/>\n";
  double ly = oy + kMarginT + 12;
  for (const auto& ser : series) {
    if (ser.points.empty()) continue;
    s += "<polyline fill=\"none\" stroke=\"" + std::string(ser.color) + "\" stroke-width=\"1.5\" points=\"";
    for (const auto& p : ser.points)
      s += fmt("%.2f", px(static_cast<double>(p.epoch))) + "," + fmt("%.2f", py(p.loss)) + " ";
    s += "\"/>\n";
    s += "<text x=\"" + fmt("%.1f", ox + kPanelW - kMarginR - 6) + "\" y=\"" + fmt("%.1f", ly) +
         "\" text-anchor=\"end\" font-size=\"10\" fill=\"" + ser.color + "\">" + ser.label + "</text>\n";
    ly += 12;
  }
  if (reference)
    s += "<text x=\"" + fmt("%.1f", ox + kPanelW - kMarginR - 6) + "\" y=\"" + fmt("%.1f", ly) +
         "\" text-anchor=\"end\" font-size=\"10\" fill=\"#555\">general valid</text>\n";
  return s + "</g>\n";
}

}  // namespace detail

/// Panel 1: general-stage train and pooled validation loss. One further panel
/// per personalized patient with its train and validation loss and, dashed,
/// the general model's final validation loss on that patient.
inline std::string render_curves_svg(const MetricsLog& log) {
  std::vector<std::string> patients;
  for (const auto& r : log.records())
    if (r.stage == "idol" && std::find(patients.begin(), patients.end(), r.patient) == patients.end())
      patients.push_back(r.patient);
  const std::size_t panels = 1 + patients.size(), cols = std::min<std::size_t>(panels, 3);
  const std::size_t rows = (panels + cols - 1) / cols;
  const double width = static_cast<double>(cols) * detail::kPanelW, height = static_cast<double>(rows) * detail::kPanelH;

  std::string svg = "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + detail::fmt("%.0f", width) + "\" height=\"" +
         detail::fmt("%.0f", height) + "\" viewBox=\"0 0 " + detail::fmt("%.0f", width) + " " +
         detail::fmt("%.0f", height) + "\" font-family=\"sans-serif\">\n";
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg += detail::svg_panel(0, 0, "general (cohort)",
                           {{log.series("general", "train", "cohort"), "train", "#1f77b4"},
                            {log.series("general", "valid", "cohort"), "valid", "#ff7f0e"}},
                           std::nullopt);
  for (std::size_t i = 0; i < patients.size(); ++i) {
    const std::size_t slot = i + 1;
    const auto general_valid = log.series("general", "valid", patients[i]);
    std::optional<double> ref;
    if (!general_valid.empty()) ref = general_valid.back().loss;
    svg += detail::svg_panel(static_cast<double>(slot % cols) * detail::kPanelW,
                             static_cast<double>(slot / cols) * detail::kPanelH, "idol " + patients[i],
                             {{log.series("idol", "train", patients[i]), "train", "#1f77b4"},
                              {log.series("idol", "valid", patients[i]), "valid", "#ff7f0e"}},
                             ref);
  }
  return svg + "</svg>\n";
}

}  // namespace idol
