#pragma once

// Task metrics, the train/valid generalization gap, and per-epoch loss logs
// with CSV export.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "idol/error.hpp"
#include "idol/tensor.hpp"

namespace idol {

inline constexpr double kSegThreshold = 0.5;
inline constexpr double kPsnrCap = 100.0;
inline constexpr double kPsnrMinMse = 1e-10;

namespace detail {
inline void check_same_shape(const char* what, const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(),
          std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}
}  // namespace detail

/// 1 where value >= 0.5, else 0.
inline Tensor threshold_mask(const Tensor& probabilities) {
  Tensor m(probabilities.shape());
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = probabilities[i] >= kSegThreshold ? 1.0 : 0.0;
  return m;
}

/// Dice overlap of two binary masks; 1 when both are empty.
inline double dsc(const Tensor& a, const Tensor& b) {
  detail::check_same_shape("dsc", a, b);
  double inter = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    require((a[i] == 0.0 || a[i] == 1.0) && (b[i] == 0.0 || b[i] == 1.0), "dsc: masks must be binary");
    inter += a[i] * b[i];
    na += a[i];
    nb += b[i];
  }
  return na + nb == 0.0 ? 1.0 : 2.0 * inter / (na + nb);
}

inline double mean_squared_error(const Tensor& a, const Tensor& b) {
  detail::check_same_shape("mse", a, b);
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

/// Peak 1.0; capped at 100 dB once the mse drops below 1e-10.
inline double psnr(const Tensor& prediction, const Tensor& reference) {
  const double e = mean_squared_error(prediction, reference);
  return e < kPsnrMinMse ? kPsnrCap : -10.0 * std::log10(e);
}

inline double mae(const Tensor& prediction, const Tensor& reference) {
  detail::check_same_shape("mae", prediction, reference);
  double s = 0.0;
  for (std::size_t i = 0; i < prediction.size(); ++i) s += std::abs(prediction[i] - reference[i]);
  return s / static_cast<double>(prediction.size());
}

struct GenError {
  double value = 0.0;
  std::string stage;
  std::string scope;  // patient id or "cohort"
};

inline GenError generalization_error(double e_train, double e_valid, std::string stage = {}, std::string scope = {}) {
  require(std::isfinite(e_train) && std::isfinite(e_valid), "generalization_error: losses must be finite");
  return {std::abs(e_train - e_valid), std::move(stage), std::move(scope)};
}

// ---- curve logging ---------------------------------------------------------

struct MetricRecord {
  std::string stage;    // "general" or "idol"
  std::string patient;  // patient id or "cohort"
  std::size_t epoch = 0;
  std::string split;  // "train" or "valid"
  double loss = 0.0;
  std::string metric;  // empty when no task metric was recorded
  std::optional<double> metric_value;
  std::uint64_t seed = 0;

  friend bool operator==(const MetricRecord&, const MetricRecord&) = default;
};

class MetricsLog {
 public:
  /// Appends a record; epochs must strictly increase within each
  /// (stage, split, patient) series.
  void add(MetricRecord r) {
    for (const std::string* f : {&r.stage, &r.patient, &r.split, &r.metric})
      require(f->find_first_of(",\n\"") == std::string::npos, "metrics log fields must not contain ',', '\"' or newlines");
    require(r.split == "train" || r.split == "valid", "metrics log split must be 'train' or 'valid'");
    const auto key = std::tuple(r.stage, r.split, r.patient);
    const auto it = last_epoch_.find(key);
    require(it == last_epoch_.end() || r.epoch > it->second,
            "metrics log: epoch " + std::to_string(r.epoch) + " does not increase the " + r.stage + "/" + r.split + "/" +
                r.patient + " series");
    last_epoch_[key] = r.epoch;
    records_.push_back(std::move(r));
  }

  void append(const MetricsLog& other) {
    for (const auto& r : other.records_) add(r);
  }

  const std::vector<MetricRecord>& records() const { return records_; }
  bool empty() const { return records_.empty(); }
  std::size_t size() const { return records_.size(); }

  std::vector<MetricRecord> series(const std::string& stage, const std::string& split, const std::string& patient) const {
    std::vector<MetricRecord> out;
    for (const auto& r : records_)
      if (r.stage == stage && r.split == split && r.patient == patient) out.push_back(r);
    return out;
  }

  /// Loss of one record; throws if absent.
  double loss_at(const std::string& stage, const std::string& split, const std::string& patient,
                 std::size_t epoch) const {
    for (const auto& r : records_)
      if (r.stage == stage && r.split == split && r.patient == patient && r.epoch == epoch) return r.loss;
    throw InvalidArgument("metrics log has no " + stage + "/" + split + "/" + patient + " record at epoch " +
                          std::to_string(epoch));
  }

  friend bool operator==(const MetricsLog& a, const MetricsLog& b) { return a.records_ == b.records_; }

 private:
  std::vector<MetricRecord> records_;
  std::map<std::tuple<std::string, std::string, std::string>, std::size_t> last_epoch_;
};

inline constexpr const char* kCurvesHeader = "stage,patient,epoch,split,loss,metric,metric_value,seed";

/// Shortest-safe round-trip formatting: 17 significant digits.
inline std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string curves_csv(const MetricsLog& log) {
  std::string out = std::string(kCurvesHeader) + "\n";
  for (const auto& r : log.records()) {
    out += r.stage + ',' + r.patient + ',' + std::to_string(r.epoch) + ',' + r.split + ',' + format_real(r.loss) + ',' +
           r.metric + ',' + (r.metric_value ? format_real(*r.metric_value) : std::string{}) + ',' +
           std::to_string(r.seed) + '\n';
  }
  return out;
}

inline void curve_export(const MetricsLog& log, const std::filesystem::path& path) {
  require(!log.empty(), "curve_export: log is empty");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << curves_csv(log);
  if (!out) throw IoError("failed writing " + path.string());
}

/// Inverse of curve_export.
inline MetricsLog parse_curves(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kCurvesHeader) throw IoError(path.string() + ": missing curves header");
  MetricsLog log;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (!line.empty() && line.back() == ',') f.emplace_back();
    if (f.size() != 8) throw IoError(path.string() + ":" + std::to_string(lineno) + ": expected 8 fields");
    try {
      MetricRecord r{f[0], f[1], std::stoull(f[2]), f[3], std::stod(f[4]), f[5], std::nullopt, std::stoull(f[7])};
      if (!f[6].empty()) r.metric_value = std::stod(f[6]);
      log.add(std::move(r));
    } catch (const std::logic_error& e) {
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return log;
}

}  // namespace idol
