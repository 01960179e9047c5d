#pragma once

// Comparison tables over one or more summary.json files.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "idol/error.hpp"
#include "idol/metrics.hpp"

namespace idol {

struct ReportRow {
  std::string task;
  std::uint64_t seed = 0;
  std::string patient;  // "mean" for the per-summary aggregate row
  std::string metric;
  double general = 0.0, idol = 0.0, delta = 0.0;
  // sample standard deviations; only set on mean rows
  std::optional<double> general_sd, idol_sd, delta_sd;
};

inline double sample_sd(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

/// Patient rows followed by one mean row for the summary.
inline std::vector<ReportRow> summary_rows(const nlohmann::json& s) {
  std::vector<ReportRow> rows;
  const std::string task = s.at("task"), metric = s.at("metric");
  const std::uint64_t seed = s.at("config").at("seed");
  std::vector<double> g, i, d;
  for (const auto& p : s.at("patients")) {
    ReportRow r{task, seed, p.at("id"), metric, p.at("general"), p.at("idol"), p.at("delta"), {}, {}, {}};
    g.push_back(r.general);
    i.push_back(r.idol);
    d.push_back(r.delta);
    rows.push_back(r);
  }
  require(!rows.empty(), "summary lists no patients");
  const auto mean = [](const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m += x;
    return m / static_cast<double>(v.size());
  };
  rows.push_back({task, seed, "mean", metric, mean(g), mean(i), mean(d), sample_sd(g), sample_sd(i), sample_sd(d)});
  return rows;
}

inline std::vector<ReportRow> load_report_rows(const std::vector<std::filesystem::path>& summaries) {
  std::vector<ReportRow> rows;
  for (const auto& path : summaries) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    try {
      nlohmann::json j;
      in >> j;
      for (auto& r : summary_rows(j)) rows.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw IoError(path.string() + ": " + e.what());
    } catch (const InvalidArgument& e) {
      throw IoError(path.string() + ": " + e.what());
    }
  }
  return rows;
}

inline std::string report_csv(const std::vector<ReportRow>& rows) {
  std::string out = "task,seed,patient,metric,general,general_sd,idol,idol_sd,delta,delta_sd\n";
  const auto opt = [](const std::optional<double>& v) { return v ? format_real(*v) : std::string{}; };
  for (const auto& r : rows)
    out += r.task + ',' + std::to_string(r.seed) + ',' + r.patient + ',' + r.metric + ',' + format_real(r.general) +
           ',' + opt(r.general_sd) + ',' + format_real(r.idol) + ',' + opt(r.idol_sd) + ',' + format_real(r.delta) +
           ',' + opt(r.delta_sd) + '\n';
  return out;
}

/// Human-readable table; mean rows read "mean +- sd".
inline std::string report_table(const std::vector<ReportRow>& rows) {
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-5s %6s %-8s %-6s %20s %20s %20s\n", "task", "seed", "patient", "metric", "general",
                "idol", "delta");
  out += buf;
  const auto cell = [](double v, const std::optional<double>& sd) {
    char c[64];
    if (sd)
      std::snprintf(c, sizeof c, "%.4f +- %.4f", v, *sd);
    else
      std::snprintf(c, sizeof c, "%.4f", v);
    return std::string(c);
  };
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%-5s %6llu %-8s %-6s %20s %20s %20s\n", r.task.c_str(),
                  static_cast<unsigned long long>(r.seed), r.patient.c_str(), r.metric.c_str(),
                  cell(r.general, r.general_sd).c_str(), cell(r.idol, r.idol_sd).c_str(),
                  cell(r.delta, r.delta_sd).c_str());
    out += buf;
  }
  return out;
}

}  // namespace idol
