#pragma once

// Command-line front end: cohort, run, report, dvf dump.
// Exit codes: 0 ok, 2 usage, 3 I/O, 4 numeric divergence.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "idol/deform.hpp"
#include "idol/error.hpp"
#include "idol/experiment.hpp"
#include "idol/pgm.hpp"
#include "idol/report.hpp"

namespace idol {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitIo = 3;
inline constexpr int kExitDivergence = 4;

namespace detail {

// Experiment flags bound to typed storage; only flags actually given on the
// command line override the config file.
struct ExperimentFlags {
  std::string config_path, out, task;
  std::uint64_t seed = 0;
  std::size_t epochs1 = 0, epochs2 = 0, batch_size = 0, k_prior = 0, patients = 0, holdout = 0, resolution = 0;
  double lr1 = 0, lr2 = 0, lambda_l = 0, lambda_p = 0, amplitude = 0, smoothness = 0;
  std::vector<std::pair<std::string, CLI::Option*>> given;

  template <class T>
  void add(CLI::App* app, const std::string& key, T& storage, const std::string& help) {
    given.emplace_back(key, app->add_option("--" + key, storage, help));
  }

  void register_cohort(CLI::App* app) {
    app->add_option("--config", config_path, "JSON file keyed by flag names; flags override it");
    app->add_option("--out", out, "output directory");
    add(app, "task", task, "task family: seg, sr or sct (default seg)");
    add(app, "seed", seed, "master seed (default 7)");
    add(app, "patients", patients, "training patients N (default 20)");
    add(app, "holdout", holdout, "held-out patients P (default 5)");
    add(app, "resolution", resolution, "image size, 32 or 64 (default 32)");
  }

  void register_training(CLI::App* app) {
    add(app, "epochs1", epochs1, "general-stage epochs (default 50)");
    add(app, "epochs2", epochs2, "personalization epochs (default 100)");
    add(app, "lr1", lr1, "general-stage learning rate (default 1e-3)");
    add(app, "lr2", lr2, "personalization learning rate (default 1e-4)");
    add(app, "batch-size", batch_size, "mini-batch size (default 8)");
    add(app, "lambda-l", lambda_l, "weight of the general-data term in stage 2 (default 0)");
    add(app, "lambda-p", lambda_p, "weight of the augmented-prior term in stage 2 (default 1)");
    add(app, "k-prior", k_prior, "augmented prior pairs K (default 32)");
    add(app, "amplitude", amplitude, "max deformation displacement in pixels (default 3)");
    add(app, "smoothness", smoothness, "deformation smoothing sigma in pixels (default 4)");
  }

  nlohmann::json given_json() const {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [key, opt] : given) {
      if (opt->count() == 0) continue;
      if (key == "task") j[key] = task;
      else if (key == "seed") j[key] = seed;
      else if (key == "epochs1") j[key] = epochs1;
      else if (key == "epochs2") j[key] = epochs2;
      else if (key == "lr1") j[key] = lr1;
      else if (key == "lr2") j[key] = lr2;
      else if (key == "batch-size") j[key] = batch_size;
      else if (key == "lambda-l") j[key] = lambda_l;
      else if (key == "lambda-p") j[key] = lambda_p;
      else if (key == "k-prior") j[key] = k_prior;
      else if (key == "amplitude") j[key] = amplitude;
      else if (key == "smoothness") j[key] = smoothness;
      else if (key == "patients") j[key] = patients;
      else if (key == "holdout") j[key] = holdout;
      else if (key == "resolution") j[key] = resolution;
    }
    return j;
  }

  /// Defaults, then the config file, then explicit flags.
  ExperimentConfig resolve(std::string& out_dir) const {
    ExperimentConfig cfg;
    std::string file_out;
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      if (!in) throw IoError("cannot open config " + config_path);
      nlohmann::json j;
      try {
        in >> j;
      } catch (const nlohmann::json::exception& e) {
        throw InvalidArgument("config " + config_path + ": " + e.what());
      }
      apply_config_json(cfg, j, &file_out);
    }
    apply_config_json(cfg, given_json());
    out_dir = out.empty() ? file_out : out;
    require(!out_dir.empty(), "an output directory is required (--out or \"out\" in the config)");
    return cfg;
  }
};

inline void write_dvf_pgm(const std::filesystem::path& path, const DeformationField& f, const std::vector<double>& v,
                          double range) {
  std::vector<std::uint16_t> levels(v.size());
  for (std::size_t i = 0; i < v.size(); ++i)
    levels[i] = static_cast<std::uint16_t>(std::lround(std::clamp((v[i] + range) / (2.0 * range), 0.0, 1.0) * kPgmScale));
  write_pgm16(path, f.height, f.width, levels);
}

}  // namespace detail

inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Two-stage patient-specific training on synthetic phantom cohorts", "idol"};
  app.require_subcommand(1);

  detail::ExperimentFlags cohort_flags;
  CLI::App* cohort = app.add_subcommand("cohort", "generate and save a phantom cohort");
  cohort_flags.register_cohort(cohort);

  detail::ExperimentFlags run_flags;
  CLI::App* run = app.add_subcommand("run", "train the general model, personalize each held-out patient, evaluate");
  run_flags.register_cohort(run);
  run_flags.register_training(run);
  bool quiet = false;
  run->add_flag("--quiet", quiet, "suppress progress lines");

  std::vector<std::string> summaries;
  std::string report_out = "report.csv";
  CLI::App* report = app.add_subcommand("report", "tabulate general vs personalized metrics from summary.json files");
  report->add_option("summaries", summaries, "summary.json paths")->required();
  report->add_option("--out", report_out, "CSV output path (default report.csv)");

  CLI::App* dvf = app.add_subcommand("dvf", "deformation field utilities");
  dvf->require_subcommand(1);
  CLI::App* dump = dvf->add_subcommand("dump", "write one random field as dx/dy PGM images plus a JSON sidecar");
  std::uint64_t dvf_seed = 0;
  double dvf_amplitude = DeformParams{}.amplitude, dvf_smoothness = DeformParams{}.smoothness;
  std::size_t dvf_resolution = 32;
  std::string dvf_out;
  dump->add_option("--seed", dvf_seed, "field seed (default 0)");
  dump->add_option("--amplitude", dvf_amplitude, "max displacement in pixels (default 3)");
  dump->add_option("--smoothness", dvf_smoothness, "smoothing sigma in pixels (default 4)");
  dump->add_option("--resolution", dvf_resolution, "field size (default 32)");
  dump->add_option("--out", dvf_out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (cohort->parsed()) {
      std::string dir;
      const ExperimentConfig cfg = cohort_flags.resolve(dir);
      cfg.validate();
      const Cohort c = build_cohort(cfg.task, cfg.patients, cfg.holdout, cfg.resolution, cfg.train.seed);
      save_cohort(c, dir);
      out << "cohort " << to_string(c.task) << ": " << c.training.size() << " training + " << c.heldout.size()
          << " held-out patients, " << c.resolution << "x" << c.resolution << ", " << kFractionsPerPatient + 1
          << " fractions each, seed " << c.master_seed << " -> " << dir << '\n';
    } else if (run->parsed()) {
      std::string dir;
      const ExperimentConfig cfg = run_flags.resolve(dir);
      const ExperimentResult r = run_experiment(cfg, dir, quiet ? nullptr : &out);
      char line[256];
      double g = 0.0, i = 0.0;
      for (const auto& p : r.patients) {
        g += p.general_metric;
        i += p.idol_metric;
      }
      const double n = static_cast<double>(r.patients.size());
      std::snprintf(line, sizeof line, "%s: mean %s general %.4f -> idol %.4f (%zu/%zu patients improved)\n",
                    std::string(to_string(cfg.task)).c_str(), task_metric_name(cfg.task), g / n, i / n,
                    r.improved_count(), r.patients.size());
      out << line;
    } else if (report->parsed()) {
      std::vector<std::filesystem::path> paths(summaries.begin(), summaries.end());
      const auto rows = load_report_rows(paths);
      out << report_table(rows);
      detail::write_text(report_out, report_csv(rows));
    } else if (dump->parsed()) {
      require(dvf_resolution >= 4, "--resolution must be >= 4");
      const auto f = random_dvf(dvf_resolution, dvf_resolution, {dvf_amplitude, dvf_smoothness, dvf_seed});
      const double range = dvf_amplitude > 0.0 ? dvf_amplitude : 1.0;
      std::error_code ec;
      std::filesystem::create_directories(dvf_out, ec);
      if (ec) throw IoError("cannot create " + dvf_out + ": " + ec.message());
      const std::filesystem::path dir = dvf_out;
      detail::write_dvf_pgm(dir / "dvf_dx.pgm", f, f.dx, range);
      detail::write_dvf_pgm(dir / "dvf_dy.pgm", f, f.dy, range);
      const nlohmann::ordered_json side{{"seed", dvf_seed},
                                        {"amplitude", dvf_amplitude},
                                        {"smoothness", dvf_smoothness},
                                        {"resolution", dvf_resolution},
                                        {"max_magnitude", f.max_magnitude()},
                                        {"offset", -range},
                                        {"scale", 2.0 * range / kPgmScale},
                                        {"decode", "displacement_pixels = offset + level * scale"}};
      detail::write_text(dir / "dvf.json", side.dump(2) + "\n");
      out << "dvf " << dvf_resolution << "x" << dvf_resolution << " max |d| " << f.max_magnitude() << " -> " << dvf_out
          << '\n';
    }
  } catch (const InvalidArgument& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const IoError& e) {
    err << "I/O error: " << e.what() << '\n';
    return kExitIo;
  } catch (const DivergenceError& e) {
    err << "training diverged: " << e.what() << '\n';
    return kExitDivergence;
  }
  return kExitOk;
}

inline int run_cli(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  std::vector<const char*> argv{"idol"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace idol
