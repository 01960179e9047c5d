#pragma once

// End-to-end experiment: cohort, general model, one personalized model per
// held-out patient, evaluation, and all on-disk outputs.

#include <filesystem>
#include <fstream>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"

#include "idol/checkpoint.hpp"
#include "idol/error.hpp"
#include "idol/metrics.hpp"
#include "idol/phantoms.hpp"
#include "idol/plot.hpp"
#include "idol/train.hpp"

namespace idol {

struct ExperimentConfig {
  TaskKind task = TaskKind::seg;
  TrainConfig train;
  std::size_t patients = 20;  // training cohort size N
  std::size_t holdout = 5;    // held-out patients P
  std::size_t resolution = 32;

  void validate() const {
    train.validate();
    require(patients >= 2, "--patients must be >= 2");
    require(holdout >= 1, "--holdout must be >= 1");
    require(resolution == 32 || resolution == 64, "--resolution must be 32 or 64");
  }
};

/// Keys are the command-line flag names without dashes.
inline nlohmann::ordered_json config_to_json(const ExperimentConfig& c) {
  return {{"task", std::string(to_string(c.task))},
          {"seed", c.train.seed},
          {"epochs1", c.train.epochs1},
          {"epochs2", c.train.epochs2},
          {"lr1", c.train.lr1},
          {"lr2", c.train.lr2},
          {"batch-size", c.train.batch_size},
          {"lambda-l", c.train.lambda_l},
          {"lambda-p", c.train.lambda_p},
          {"k-prior", c.train.k_prior},
          {"amplitude", c.train.deform.amplitude},
          {"smoothness", c.train.deform.smoothness},
          {"patients", c.patients},
          {"holdout", c.holdout},
          {"resolution", c.resolution}};
}

/// Applies every recognized key; unknown keys are rejected. "out" is
/// accepted and returned through `out` when present.
inline void apply_config_json(ExperimentConfig& c, const nlohmann::json& j, std::string* out = nullptr) {
  require(j.is_object(), "config must be a JSON object");
  const auto count = [](const nlohmann::json& v, const std::string& key) {
    require(v.is_number_unsigned() || (v.is_number_integer() && v.get<long long>() >= 0),
            "config key '" + key + "' must be a non-negative integer");
    return v.get<std::size_t>();
  };
  const auto real = [](const nlohmann::json& v, const std::string& key) {
    require(v.is_number(), "config key '" + key + "' must be a number");
    return v.get<double>();
  };
  for (const auto& [key, v] : j.items()) {
    if (key == "task") {
      require(v.is_string(), "config key 'task' must be a string");
      c.task = task_from_string(v.get<std::string>());
    } else if (key == "seed") {
      c.train.seed = count(v, key);
    } else if (key == "epochs1") {
      c.train.epochs1 = count(v, key);
    } else if (key == "epochs2") {
      c.train.epochs2 = count(v, key);
    } else if (key == "lr1") {
      c.train.lr1 = real(v, key);
    } else if (key == "lr2") {
      c.train.lr2 = real(v, key);
    } else if (key == "batch-size") {
      c.train.batch_size = count(v, key);
    } else if (key == "lambda-l") {
      c.train.lambda_l = real(v, key);
    } else if (key == "lambda-p") {
      c.train.lambda_p = real(v, key);
    } else if (key == "k-prior") {
      c.train.k_prior = count(v, key);
    } else if (key == "amplitude") {
      c.train.deform.amplitude = real(v, key);
    } else if (key == "smoothness") {
      c.train.deform.smoothness = real(v, key);
    } else if (key == "patients") {
      c.patients = count(v, key);
    } else if (key == "holdout") {
      c.holdout = count(v, key);
    } else if (key == "resolution") {
      c.resolution = count(v, key);
    } else if (key == "out") {
      require(v.is_string(), "config key 'out' must be a string");
      if (out) *out = v.get<std::string>();
    } else {
      throw InvalidArgument("unknown config key '" + key + "'");
    }
  }
}

struct PatientOutcome {
  std::string id;
  double general_metric = 0.0;
  double idol_metric = 0.0;
  double general_valid_loss = 0.0;  // general model, stage-1 final epoch
  double idol_valid_loss = 0.0;     // personalized model, stage-2 final epoch
  double idol_train_loss = 0.0;
  double general_gen_error = 0.0;  // |E_train(cohort) - E_valid(patient)| at stage-1 end
  double idol_gen_error = 0.0;     // |E_train - E_valid| for the patient at stage-2 end

  /// Positive when the personalized model is better.
  double improvement(TaskKind t) const {
    return metric_higher_is_better(t) ? idol_metric - general_metric : general_metric - idol_metric;
  }
};

struct ExperimentResult {
  ExperimentConfig config;
  std::vector<PatientOutcome> patients;
  MetricsLog log;  // general stage followed by every personalization
  double general_train_loss = 0.0;
  double general_valid_loss = 0.0;

  double mean_improvement() const {
    double s = 0.0;
    for (const auto& p : patients) s += p.improvement(config.task);
    return s / static_cast<double>(patients.size());
  }

  std::size_t improved_count() const {
    std::size_t n = 0;
    for (const auto& p : patients) n += p.improvement(config.task) > 0.0;
    return n;
  }
};

inline nlohmann::ordered_json summary_json(const ExperimentResult& r) {
  const TaskKind t = r.config.task;
  nlohmann::ordered_json patients = nlohmann::ordered_json::array();
  double g = 0.0, i = 0.0;
  for (const auto& p : r.patients) {
    patients.push_back({{"id", p.id},
                        {"general", p.general_metric},
                        {"idol", p.idol_metric},
                        {"delta", p.idol_metric - p.general_metric},
                        {"improvement", p.improvement(t)},
                        {"general_valid_loss", p.general_valid_loss},
                        {"idol_train_loss", p.idol_train_loss},
                        {"idol_valid_loss", p.idol_valid_loss},
                        {"general_gen_error", p.general_gen_error},
                        {"idol_gen_error", p.idol_gen_error}});
    g += p.general_metric;
    i += p.idol_metric;
  }
  const double n = static_cast<double>(r.patients.size());
  return {{"task", std::string(to_string(t))},
          {"metric", task_metric_name(t)},
          {"higher_is_better", metric_higher_is_better(t)},
          {"config", config_to_json(r.config)},
          {"general",
           {{"train_loss", r.general_train_loss},
            {"valid_loss", r.general_valid_loss},
            {"gen_error", std::abs(r.general_train_loss - r.general_valid_loss)}}},
          {"patients", patients},
          {"mean",
           {{"general", g / n},
            {"idol", i / n},
            {"delta", (i - g) / n},
            {"improvement", r.mean_improvement()},
            {"improved_patients", r.improved_count()}}}};
}

namespace detail {
inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}
}  // namespace detail

/// Runs both stages and writes cohort/, general.model.*, idol_P###.model.*,
/// curves.csv, curves.svg and summary.json under `out`. Files are written
/// only after all training has finished.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& out,
                                       std::ostream* progress = nullptr) {
  cfg.validate();
  std::error_code ec;
  std::filesystem::create_directories(out, ec);
  if (ec) throw IoError("cannot create " + out.string() + ": " + ec.message());

  const Cohort cohort = build_cohort(cfg.task, cfg.patients, cfg.holdout, cfg.resolution, cfg.train.seed);
  const Model topology = task_model(cfg.task, cfg.resolution);
  if (progress) *progress << "stage 1: " << cfg.train.epochs1 << " epochs over " << cohort.training.size() << " patients\n";
  const TrainResult general = train_general(cohort, topology, cfg.train);

  ExperimentResult r{cfg, {}, general.log, 0.0, 0.0};
  const std::size_t e1 = cfg.train.epochs1, e2 = cfg.train.epochs2;
  r.general_train_loss = general.log.loss_at(kStageGeneral, "train", kCohortScope, e1);
  r.general_valid_loss = general.log.loss_at(kStageGeneral, "valid", kCohortScope, e1);

  std::vector<TrainResult> personalized;
  for (const auto& p : cohort.heldout) {
    if (progress) *progress << "stage 2: " << p.id << '\n';
    personalized.push_back(personalize(general, p, cohort, topology, cfg.train));
    const TrainResult& idol = personalized.back();
    const auto g_valid = general.log.series(kStageGeneral, "valid", p.id).back();
    const auto i_valid = idol.log.series(kStageIdol, "valid", p.id).back();
    PatientOutcome o;
    o.id = p.id;
    o.general_metric = *g_valid.metric_value;
    o.idol_metric = *i_valid.metric_value;
    o.general_valid_loss = g_valid.loss;
    o.idol_valid_loss = i_valid.loss;
    o.idol_train_loss = idol.log.loss_at(kStageIdol, "train", p.id, e2);
    o.general_gen_error = generalization_error(r.general_train_loss, o.general_valid_loss).value;
    o.idol_gen_error = generalization_error(o.idol_train_loss, o.idol_valid_loss).value;
    r.patients.push_back(o);
    r.log.append(idol.log);
  }

  save_cohort(cohort, out / "cohort");
  save_checkpoint(general.model, {cfg.train.seed, kStageGeneral, ""}, out, "general");
  for (const auto& idol : personalized)
    save_checkpoint(idol.model, {cfg.train.seed, kStageIdol, idol.patient}, out, "idol_" + idol.patient);
  curve_export(r.log, out / "curves.csv");
  detail::write_text(out / "curves.svg", render_curves_svg(r.log));
  detail::write_text(out / "summary.json", summary_json(r).dump(2) + "\n");
  return r;
}

}  // namespace idol
