#pragma once

// Parametric ellipse phantoms standing in for multi-fraction patient
// anatomy. Each patient has a baseline anatomy with one task-specific
// idiosyncrasy, and each fraction drifts that anatomy by a small smooth
// amount, so a patient's fraction 0 (the prior) predicts its later fractions
// better than any other patient does.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <string>
#include <vector>

#include "json.hpp"

#include "idol/deform.hpp"
#include "idol/error.hpp"
#include "idol/pgm.hpp"
#include "idol/rng.hpp"
#include "idol/task.hpp"
#include "idol/tensor.hpp"

namespace idol {

inline constexpr std::size_t kFractionsPerPatient = 8;  // drifted fractions after the prior
inline constexpr double kCenterDriftPerFraction = 0.03;
inline constexpr double kAxisDrift = 0.05;
inline constexpr double kAngleDrift = 0.1;
inline constexpr double kInputNoiseSigma = 0.02;
inline constexpr double kSctTargetGamma = 0.6;

/// Normalized [0, 1]^2 coordinates; a, b are semi-axes, angle in radians.
struct Ellipse {
  double cx = 0.5, cy = 0.5, a = 0.1, b = 0.1, angle = 0.0;
};

/// amplitude * sin(2 pi * frequency * (rotated offset from the centre) + phase);
/// frequency in cycles per image width. Moves and turns with its structure.
struct Texture {
  double frequency = 0.0, orientation = 0.0, phase = 0.0, amplitude = 0.0;
};

struct AnatomyParams {
  Ellipse organ;
  double base_intensity = 0.5;
  std::uint64_t texture_seed = 0;
  double intensity_coeff = 1.0;  // SCT input map clamp(c * v, 0, 1), c in [0.7, 1.3]
  double background = 0.0;
  Texture organ_texture;
  // SEG: an unlabeled look-alike structure; only the patient's own contours
  // say which of the two is the organ.
  Ellipse distractor;
  double distractor_intensity = 0.0;
  Texture distractor_texture;
  double edge_softness = 0.0;  // SR: half-width of the edge ramp in units of the semi-axes
  std::uint64_t drift_seed = 0;
  std::uint64_t noise_seed = 0;
};

struct PatientRecord {
  std::string id;
  std::uint64_t seed = 0;
  AnatomyParams anatomy;
  std::vector<SamplePair> fractions;  // [0] is the prior, [1..F] the drifted fractions

  const SamplePair& prior() const { return fractions.front(); }
};

struct Cohort {
  TaskKind task = TaskKind::seg;
  std::size_t resolution = 32;
  std::uint64_t master_seed = 0;
  std::vector<PatientRecord> training;
  std::vector<PatientRecord> heldout;

  bool is_training_patient(const std::string& id) const {
    for (const auto& p : training)
      if (p.id == id) return true;
    return false;
  }
};

namespace detail {

struct LocalCoords {
  double u, v;    // offset from the centre rotated into the ellipse frame, normalized units
  double radius;  // elliptical radius, 1 on the boundary
};

inline LocalCoords local_coords(const Ellipse& e, double px, double py) {
  const double dx = px - e.cx, dy = py - e.cy;
  const double c = std::cos(e.angle), s = std::sin(e.angle);
  const double u = dx * c + dy * s, v = -dx * s + dy * c;
  return {u, v, std::hypot(u / e.a, v / e.b)};
}

inline double texture_at(const Texture& t, const LocalCoords& lc) {
  const double along = lc.u * std::cos(t.orientation) + lc.v * std::sin(t.orientation);
  return t.amplitude * std::sin(2.0 * std::numbers::pi * t.frequency * along + t.phase);
}

inline double smoothstep(double x) {
  x = std::clamp(x, 0.0, 1.0);
  return x * x * (3.0 - 2.0 * x);
}

// A * (sin(k + phase) - sin(phase)): zero at k = 0, steps bounded by 0.96 A.
inline double drift_offset(Rng& rng, double bound, std::size_t k) {
  const double amp = rng.uniform(0.0, bound);
  const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  return amp * (std::sin(static_cast<double>(k) + phase) - std::sin(phase));
}

inline Ellipse inside_margins(Rng& rng, double min_axis, double max_axis) {
  Ellipse e;
  e.a = rng.uniform(min_axis, max_axis);
  e.b = rng.uniform(min_axis, max_axis);
  e.angle = rng.uniform(0.0, std::numbers::pi);
  const double r = std::max(e.a, e.b);
  // baseline extents within [0.17, 0.83] so drifted extents stay within [0.1, 0.9]
  e.cx = rng.uniform(0.17 + r, 0.83 - r);
  e.cy = rng.uniform(0.17 + r, 0.83 - r);
  return e;
}

inline Texture random_texture(Rng& rng, double min_freq, double max_freq, double amplitude) {
  return {rng.uniform(min_freq, max_freq), rng.uniform(0.0, std::numbers::pi), rng.uniform(0.0, 2.0 * std::numbers::pi),
          amplitude};
}

// Blur, 2x2 box decimation and nearest-neighbour upsampling back to full size.
inline Tensor degrade_resolution(const Tensor& hr) {
  const std::size_t h = hr.dim(0), w = hr.dim(1);
  const auto blurred = gaussian_blur(hr.data(), h, w, 0.8);
  Tensor lr({h, w});
  for (std::size_t y = 0; y < h; y += 2)
    for (std::size_t x = 0; x < w; x += 2) {
      const double m =
          0.25 * (blurred[y * w + x] + blurred[y * w + x + 1] + blurred[(y + 1) * w + x] + blurred[(y + 1) * w + x + 1]);
      lr.at(y, x) = lr.at(y, x + 1) = lr.at(y + 1, x) = lr.at(y + 1, x + 1) = m;
    }
  return lr;
}

}  // namespace detail

/// Baseline anatomy for one patient. Draw order is fixed; every value is a
/// function of the seed alone.
inline AnatomyParams draw_anatomy(TaskKind task, std::uint64_t seed) {
  Rng rng(seed);
  AnatomyParams p;
  p.texture_seed = rng.bits();
  p.drift_seed = rng.bits();
  p.noise_seed = rng.bits();
  p.intensity_coeff = rng.uniform(0.7, 1.3);
  Rng tex(p.texture_seed);
  switch (task) {
    case TaskKind::seg: {
      // organ and distractor on opposite sides of a random split line
      const bool vertical_split = rng.uniform() < 0.5;
      const bool organ_first = rng.uniform() < 0.5;
      const auto place = [&](bool first) {
        Ellipse e;
        e.a = rng.uniform(0.09, 0.14);
        e.b = rng.uniform(0.09, 0.14);
        e.angle = rng.uniform(0.0, std::numbers::pi);
        const double along = (first ? 0.32 : 0.68) + rng.uniform(-0.01, 0.01);
        const double across = rng.uniform(0.31, 0.69);
        e.cx = vertical_split ? along : across;
        e.cy = vertical_split ? across : along;
        return e;
      };
      p.organ = place(organ_first);
      p.distractor = place(!organ_first);
      p.background = rng.uniform(0.15, 0.35);
      p.base_intensity = rng.uniform(0.55, 0.8);
      p.distractor_intensity = rng.uniform(0.55, 0.8);
      p.organ_texture = detail::random_texture(tex, 3.0, 6.0, 0.12);
      p.distractor_texture = detail::random_texture(tex, 3.0, 6.0, 0.12);
      break;
    }
    case TaskKind::sr:
      p.organ = detail::inside_margins(rng, 0.15, 0.28);
      p.background = rng.uniform(0.05, 0.2);
      p.base_intensity = rng.uniform(0.5, 0.75);
      p.edge_softness = rng.uniform(0.02, 0.3);
      p.organ_texture = detail::random_texture(tex, 4.0, 8.0, 0.12);
      break;
    case TaskKind::sct:
      // background level and texture contrast are drawn per patient so that
      // neither reveals c; c * v stays below 1 so the clamp does not either
      p.organ = detail::inside_margins(rng, 0.15, 0.28);
      p.background = rng.uniform(0.1, 0.25);
      p.base_intensity = rng.uniform(0.4, 0.65);
      p.organ_texture = detail::random_texture(tex, 2.0, 5.0, rng.uniform(0.03, 0.1));
      break;
  }
  return p;
}

/// Anatomy at fraction k: centre moves at most 0.03 per fraction, axes
/// change by at most 5 % and the angle by at most 0.1 rad overall.
inline AnatomyParams drifted_anatomy(const AnatomyParams& base, std::size_t fraction) {
  Rng rng(base.drift_seed);
  // each term contributes at most 0.96 * amplitude per unit step
  const double ox = detail::drift_offset(rng, kCenterDriftPerFraction / std::numbers::sqrt2, fraction);
  const double oy = detail::drift_offset(rng, kCenterDriftPerFraction / std::numbers::sqrt2, fraction);
  const double oa = detail::drift_offset(rng, kAxisDrift / 2.0, fraction);
  const double ob = detail::drift_offset(rng, kAxisDrift / 2.0, fraction);
  const double ot = detail::drift_offset(rng, kAngleDrift / 2.0, fraction);
  AnatomyParams p = base;
  for (Ellipse* e : {&p.organ, &p.distractor}) {
    e->cx += ox;
    e->cy += oy;
    e->a *= 1.0 + oa;
    e->b *= 1.0 + ob;
    e->angle += ot;
  }
  return p;
}

/// (input, target) for one fraction. Targets are noise-free; inputs carry
/// Gaussian noise (sigma 0.02) and are clamped to [0, 1].
inline SamplePair render_fraction(const AnatomyParams& base, std::size_t fraction, TaskKind task,
                                  std::size_t resolution) {
  require(resolution >= 4 && resolution % 2 == 0, "render_fraction: resolution must be even and >= 4");
  const AnatomyParams p = drifted_anatomy(base, fraction);
  const std::size_t n = resolution;
  Tensor clean({n, n}), target({n, n});
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x) {
      const double px = (static_cast<double>(x) + 0.5) / static_cast<double>(n);
      const double py = (static_cast<double>(y) + 0.5) / static_cast<double>(n);
      const auto lo = detail::local_coords(p.organ, px, py);
      double v = p.background, t = 0.0;
      switch (task) {
        case TaskKind::seg: {
          const auto ld = detail::local_coords(p.distractor, px, py);
          if (lo.radius <= 1.0) {
            v = p.base_intensity + detail::texture_at(p.organ_texture, lo);
            t = 1.0;
          } else if (ld.radius <= 1.0) {
            v = p.distractor_intensity + detail::texture_at(p.distractor_texture, ld);
          }
          break;
        }
        case TaskKind::sr: {
          const double w = p.edge_softness;
          const double inside = 1.0 - detail::smoothstep((lo.radius - (1.0 - w)) / (2.0 * w));
          v = p.background + (p.base_intensity - p.background + detail::texture_at(p.organ_texture, lo)) * inside;
          break;
        }
        case TaskKind::sct:
          if (lo.radius <= 1.0) v = p.base_intensity + detail::texture_at(p.organ_texture, lo);
          break;
      }
      v = std::clamp(v, 0.0, 1.0);
      clean.at(y, x) = v;
      if (task == TaskKind::seg) target.at(y, x) = t;
      if (task == TaskKind::sr) target.at(y, x) = v;
      if (task == TaskKind::sct) target.at(y, x) = std::pow(v, kSctTargetGamma);
    }
  Tensor input = clean;
  if (task == TaskKind::sr) input = detail::degrade_resolution(clean);
  if (task == TaskKind::sct)
    for (double& v : input.data()) v = std::clamp(base.intensity_coeff * v, 0.0, 1.0);
  Rng noise(derive_seed(base.noise_seed, fraction));
  for (double& v : input.data()) v = std::clamp(v + kInputNoiseSigma * noise.normal(), 0.0, 1.0);
  return {std::move(input), std::move(target)};
}

inline PatientRecord generate_patient(TaskKind task, std::uint64_t seed, std::size_t resolution, std::string id = {}) {
  require(resolution == 32 || resolution == 64, "generate_patient: resolution must be 32 or 64");
  PatientRecord r{std::move(id), seed, draw_anatomy(task, seed), {}};
  for (std::size_t k = 0; k <= kFractionsPerPatient; ++k) r.fractions.push_back(render_fraction(r.anatomy, k, task, resolution));
  return r;
}

inline std::string patient_id(std::size_t index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "P%03zu", index);
  return buf;
}

/// N training patients P001..P00N followed by P held-out patients.
inline Cohort build_cohort(TaskKind task, std::size_t training, std::size_t heldout, std::size_t resolution,
                           std::uint64_t master_seed) {
  require(training >= 2, "build_cohort: need at least 2 training patients");
  require(heldout >= 1, "build_cohort: need at least 1 held-out patient");
  Cohort c{task, resolution, master_seed, {}, {}};
  for (std::size_t i = 1; i <= training + heldout; ++i) {
    auto rec = generate_patient(task, derive_seed(master_seed, 0x5041544945ULL, i), resolution, patient_id(i));
    (i <= training ? c.training : c.heldout).push_back(std::move(rec));
  }
  return c;
}

// ---- persistence -----------------------------------------------------------

inline nlohmann::ordered_json to_json(const Ellipse& e) {
  return {{"cx", e.cx}, {"cy", e.cy}, {"a", e.a}, {"b", e.b}, {"angle", e.angle}};
}

inline nlohmann::ordered_json to_json(const Texture& t) {
  return {{"frequency", t.frequency}, {"orientation", t.orientation}, {"phase", t.phase}, {"amplitude", t.amplitude}};
}

inline nlohmann::ordered_json to_json(const AnatomyParams& p) {
  return {{"organ", to_json(p.organ)},
          {"base_intensity", p.base_intensity},
          {"texture_seed", p.texture_seed},
          {"intensity_coeff", p.intensity_coeff},
          {"background", p.background},
          {"organ_texture", to_json(p.organ_texture)},
          {"distractor", to_json(p.distractor)},
          {"distractor_intensity", p.distractor_intensity},
          {"distractor_texture", to_json(p.distractor_texture)},
          {"edge_softness", p.edge_softness},
          {"drift_seed", p.drift_seed},
          {"noise_seed", p.noise_seed}};
}

inline Ellipse ellipse_from_json(const nlohmann::json& j) {
  return {j.at("cx"), j.at("cy"), j.at("a"), j.at("b"), j.at("angle")};
}

inline Texture texture_from_json(const nlohmann::json& j) {
  return {j.at("frequency"), j.at("orientation"), j.at("phase"), j.at("amplitude")};
}

inline AnatomyParams anatomy_from_json(const nlohmann::json& j) {
  AnatomyParams p;
  p.organ = ellipse_from_json(j.at("organ"));
  p.base_intensity = j.at("base_intensity");
  p.texture_seed = j.at("texture_seed");
  p.intensity_coeff = j.at("intensity_coeff");
  p.background = j.at("background");
  p.organ_texture = texture_from_json(j.at("organ_texture"));
  p.distractor = ellipse_from_json(j.at("distractor"));
  p.distractor_intensity = j.at("distractor_intensity");
  p.distractor_texture = texture_from_json(j.at("distractor_texture"));
  p.edge_softness = j.at("edge_softness");
  p.drift_seed = j.at("drift_seed");
  p.noise_seed = j.at("noise_seed");
  return p;
}

inline std::string fraction_file(std::size_t k, const char* role) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "frac%02zu_", k % 100);
  return buf + std::string(role) + ".pgm";
}

/// cohort.json plus P###/frac##_{input,target}.pgm (16-bit, value * 65535).
inline void save_cohort(const Cohort& c, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  nlohmann::ordered_json patients = nlohmann::ordered_json::array();
  const auto emit = [&](const PatientRecord& p, const char* split) {
    const fs::path pdir = dir / p.id;
    fs::create_directories(pdir, ec);
    if (ec) throw IoError("cannot create " + pdir.string() + ": " + ec.message());
    for (std::size_t k = 0; k < p.fractions.size(); ++k) {
      write_pgm(pdir / fraction_file(k, "input"), p.fractions[k].first);
      write_pgm(pdir / fraction_file(k, "target"), p.fractions[k].second);
    }
    patients.push_back({{"id", p.id}, {"split", split}, {"seed", p.seed}, {"anatomy", to_json(p.anatomy)}});
  };
  for (const auto& p : c.training) emit(p, "train");
  for (const auto& p : c.heldout) emit(p, "heldout");
  const nlohmann::ordered_json j{{"task", std::string(to_string(c.task))},
                                 {"master_seed", c.master_seed},
                                 {"resolution", c.resolution},
                                 {"training_patients", c.training.size()},
                                 {"heldout_patients", c.heldout.size()},
                                 {"fractions_per_patient", kFractionsPerPatient + 1},
                                 {"pgm_scale", kPgmScale},
                                 {"patients", patients}};
  std::ofstream out(dir / "cohort.json");
  if (!out) throw IoError("cannot write " + (dir / "cohort.json").string());
  out << j.dump(2) << '\n';
  if (!out) throw IoError("failed writing " + (dir / "cohort.json").string());
}

/// Reads a saved cohort; image values come back quantized to 1/65535.
inline Cohort load_cohort(const std::filesystem::path& dir) {
  std::ifstream in(dir / "cohort.json");
  if (!in) throw IoError("cannot open " + (dir / "cohort.json").string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError((dir / "cohort.json").string() + ": " + e.what());
  }
  Cohort c;
  c.task = task_from_string(j.at("task").get<std::string>());
  c.master_seed = j.at("master_seed");
  c.resolution = j.at("resolution");
  const std::size_t fractions = j.at("fractions_per_patient");
  for (const auto& pj : j.at("patients")) {
    PatientRecord r{pj.at("id"), pj.at("seed"), anatomy_from_json(pj.at("anatomy")), {}};
    for (std::size_t k = 0; k < fractions; ++k)
      r.fractions.emplace_back(read_pgm(dir / r.id / fraction_file(k, "input")),
                               read_pgm(dir / r.id / fraction_file(k, "target")));
    (pj.at("split") == "train" ? c.training : c.heldout).push_back(std::move(r));
  }
  return c;
}

}  // namespace idol
