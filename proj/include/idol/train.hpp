#pragma once

// Two-stage training: a general model fitted over the training cohort, then
// per-patient copies fine-tuned on deformation-augmented prior pairs.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "idol/deform.hpp"
#include "idol/error.hpp"
#include "idol/metrics.hpp"
#include "idol/nn.hpp"
#include "idol/phantoms.hpp"
#include "idol/rng.hpp"
#include "idol/task.hpp"

namespace idol {

struct TrainConfig {
  std::size_t epochs1 = 50;
  std::size_t epochs2 = 100;
  double lr1 = 1e-3;
  double lr2 = 1e-4;
  std::size_t batch_size = 8;
  double lambda_l = 0.0;  // weight of the general-data term in stage 2
  double lambda_p = 1.0;  // weight of the augmented-prior term in stage 2
  std::size_t k_prior = 32;
  DeformParams deform;  // seed is ignored; augmentation seeds derive from `seed`
  std::uint64_t seed = 7;

  void validate() const {
    require(epochs1 >= 1 && epochs2 >= 1, "epochs must be >= 1");
    require(batch_size >= 1, "batch size must be >= 1");
    require(k_prior >= 1, "K (augmented prior count) must be >= 1");
    require(std::isfinite(lr1) && lr1 > 0.0 && std::isfinite(lr2) && lr2 > 0.0, "learning rates must be > 0");
    require(std::isfinite(lambda_l) && std::isfinite(lambda_p) && lambda_l >= 0.0 && lambda_p >= 0.0,
            "lambda_l and lambda_p must be >= 0");
    require(lambda_l + lambda_p > 0.0, "lambda_l + lambda_p must be > 0");
    require(std::isfinite(deform.amplitude) && deform.amplitude >= 0.0, "deformation amplitude must be >= 0");
    require(std::isfinite(deform.smoothness) && deform.smoothness > 0.0, "deformation smoothness must be > 0");
  }
};

struct TrainResult {
  Model model;
  MetricsLog log;
  std::string stage;    // "general" or "idol"
  std::string patient;  // idol only
};

inline constexpr const char* kStageGeneral = "general";
inline constexpr const char* kStageIdol = "idol";
inline constexpr const char* kCohortScope = "cohort";

inline LossKind task_loss(TaskKind t) { return t == TaskKind::seg ? LossKind::bce : LossKind::mse; }

inline const char* task_metric_name(TaskKind t) {
  switch (t) {
    case TaskKind::seg: return "dsc";
    case TaskKind::sr: return "psnr";
    case TaskKind::sct: return "mae";
  }
  return "";
}

/// Higher is better for dsc and psnr, lower for mae.
inline bool metric_higher_is_better(TaskKind t) { return t != TaskKind::sct; }

/// The fixed encoder-decoder: sigmoid head for segmentation, linear otherwise.
inline Model task_model(TaskKind t, std::size_t resolution) {
  return encoder_decoder(resolution, resolution, t == TaskKind::seg ? Head::sigmoid : Head::linear);
}

/// Task metric of one predicted image. Segmentation outputs are thresholded
/// at 0.5; regression outputs are clamped to the [0, 1] image range.
inline double task_metric(TaskKind t, const Tensor& prediction, const Tensor& target) {
  if (t == TaskKind::seg) return dsc(threshold_mask(prediction), target);
  Tensor p = prediction;
  for (double& v : p.data()) v = std::clamp(v, 0.0, 1.0);
  return t == TaskKind::sr ? psnr(p, target) : mae(p, target);
}

/// Stacked mini-batch; size 0 means empty.
struct Batch {
  Tensor input;
  Tensor target;
  std::size_t size = 0;
};

inline Batch make_batch(const std::vector<const SamplePair*>& samples) {
  if (samples.empty()) return {};
  std::vector<const Tensor*> in, tg;
  for (const auto* s : samples) {
    in.push_back(&s->first);
    tg.push_back(&s->second);
  }
  return {stack(in, true), stack(tg, true), samples.size()};
}

/// lambda_l * mean general loss + lambda_p * mean prior loss; a zero-weight
/// empty batch contributes nothing. When `grad` is nonempty the matching
/// gradient is accumulated into it.
inline double combined_loss(const Model& m, const Batch& general, const Batch& prior, double lambda_l, double lambda_p,
                            LossKind kind, std::span<double> grad = {}) {
  require(lambda_l >= 0.0 && lambda_p >= 0.0, "combined_loss: weights must be >= 0");
  require(lambda_l == 0.0 || general.size > 0, "combined_loss: general batch is empty but lambda_l > 0");
  require(lambda_p == 0.0 || prior.size > 0, "combined_loss: prior batch is empty but lambda_p > 0");
  std::vector<double> scratch;
  if (grad.empty()) {
    scratch.assign(m.parameter_count(), 0.0);
    grad = scratch;
  }
  const bool want = scratch.empty();
  double total = 0.0;
  if (general.size > 0 && lambda_l != 0.0)
    total += lambda_l * accumulate_gradient(m, general.input, general.target, kind, want ? lambda_l : 0.0, grad);
  if (prior.size > 0 && lambda_p != 0.0)
    total += lambda_p * accumulate_gradient(m, prior.input, prior.target, kind, want ? lambda_p : 0.0, grad);
  return total;
}

struct Evaluation {
  double loss = 0.0;    // mean over all pixels of all samples
  double metric = 0.0;  // mean task metric over samples
};

/// Loss and task metric over fractions 1..F of one patient.
inline Evaluation evaluate_fractions(const Model& m, const PatientRecord& p, TaskKind task) {
  std::vector<const SamplePair*> samples;
  for (std::size_t k = 1; k < p.fractions.size(); ++k) samples.push_back(&p.fractions[k]);
  require(!samples.empty(), "patient " + p.id + " has no validation fractions");
  const Batch b = make_batch(samples);
  const Tensor out = forward(m, b.input);
  const std::size_t n = shape_size(p.fractions[0].second.shape());
  Evaluation e{loss(task_loss(task), out, b.target), 0.0};
  for (std::size_t i = 0; i < samples.size(); ++i) {
    Tensor pred(samples[i]->second.shape(),
                std::vector<double>(out.data().begin() + static_cast<long>(i * n),
                                    out.data().begin() + static_cast<long>((i + 1) * n)));
    e.metric += task_metric(task, pred, samples[i]->second);
  }
  e.metric /= static_cast<double>(samples.size());
  return e;
}

/// Called before every optimizer step with the current parameters.
using StepObserver = std::function<void(const Model&, std::size_t epoch, std::size_t step)>;

namespace detail {

inline void check_finite_loss(double v, const char* stage, const std::string& scope, std::size_t epoch) {
  if (!std::isfinite(v))
    throw DivergenceError(std::string("non-finite loss in stage ") + stage + (scope.empty() ? "" : " (" + scope + ")") +
                          " at epoch " + std::to_string(epoch));
}

template <class Fn>
void with_divergence_context(const char* stage, const std::string& scope, std::size_t epoch, Fn&& fn) {
  try {
    fn();
  } catch (const DivergenceError& e) {
    throw DivergenceError(std::string("stage ") + stage + (scope.empty() ? "" : " (" + scope + ")") + " epoch " +
                          std::to_string(epoch) + ": " + e.what());
  }
}

inline std::uint64_t patient_tag(const PatientRecord& p) {
  std::uint64_t h = 1469598103934665603ULL;  // FNV-1a over the id
  for (unsigned char c : p.id) h = (h ^ c) * 1099511628211ULL;
  return h;
}

inline void log_validation(MetricsLog& log, const char* stage, const std::vector<PatientRecord>& patients,
                           const Model& m, TaskKind task, std::size_t epoch, std::uint64_t seed, bool cohort_row) {
  double loss_sum = 0.0, metric_sum = 0.0;
  for (const auto& p : patients) {
    const auto e = evaluate_fractions(m, p, task);
    check_finite_loss(e.loss, stage, p.id, epoch);
    log.add({stage, p.id, epoch, "valid", e.loss, task_metric_name(task), e.metric, seed});
    loss_sum += e.loss;
    metric_sum += e.metric;
  }
  if (cohort_row) {
    const double n = static_cast<double>(patients.size());
    log.add({stage, kCohortScope, epoch, "valid", loss_sum / n, task_metric_name(task), metric_sum / n, seed});
  }
}

}  // namespace detail

/// Stage 1: Adam over every sample of every training patient. Per epoch the
/// log gets the mean training batch loss and the validation loss over the
/// held-out patients' fractions 1..F, both per patient and pooled.
inline TrainResult train_general(const Cohort& cohort, const Model& topology, const TrainConfig& cfg,
                                 const StepObserver& observer = {}) {
  cfg.validate();
  require(!cohort.training.empty(), "train_general: cohort has no training patients");
  require(cohort.training.size() >= 2, "train_general: need at least 2 training patients");
  const LossKind kind = task_loss(cohort.task);
  TrainResult r{topology, {}, kStageGeneral, {}};
  init_glorot(r.model, derive_seed(cfg.seed, 0x494e4954ULL));

  std::vector<const SamplePair*> samples;
  for (const auto& p : cohort.training)
    for (const auto& f : p.fractions) samples.push_back(&f);
  std::vector<std::size_t> order(samples.size());
  AdamState adam(r.model.parameter_count());
  std::vector<double> grad(r.model.parameter_count());

  for (std::size_t epoch = 1; epoch <= cfg.epochs1; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffler(derive_seed(cfg.seed, 1, epoch));
    shuffle(std::span(order), shuffler);
    double loss_sum = 0.0;
    std::size_t steps = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      std::vector<const SamplePair*> chunk;
      for (std::size_t i = start; i < std::min(start + cfg.batch_size, order.size()); ++i)
        chunk.push_back(samples[order[i]]);
      const Batch b = make_batch(chunk);
      if (observer) observer(r.model, epoch, steps);
      std::fill(grad.begin(), grad.end(), 0.0);
      detail::with_divergence_context(kStageGeneral, {}, epoch, [&] {
        const double l = accumulate_gradient(r.model, b.input, b.target, kind, 1.0, grad);
        detail::check_finite_loss(l, kStageGeneral, {}, epoch);
        adam_step(adam, r.model.params, grad, cfg.lr1);
        loss_sum += l;
      });
      ++steps;
    }
    r.log.add({kStageGeneral, kCohortScope, epoch, "train", loss_sum / static_cast<double>(steps), "", std::nullopt,
               cfg.seed});
    if (!cohort.heldout.empty())
      detail::log_validation(r.log, kStageGeneral, cohort.heldout, r.model, cohort.task, epoch, cfg.seed, true);
  }
  return r;
}

/// Stage 2 for one held-out patient: starts from the general parameters and
/// runs Adam on the combined objective over K augmented copies of the
/// patient's prior pair (plus cohort training batches when lambda_l > 0).
/// Only the prior (fraction 0) is trained on; fractions 1..F are validation.
inline TrainResult personalize(const TrainResult& general, const PatientRecord& patient, const Cohort& cohort,
                               const Model& topology, const TrainConfig& cfg, const StepObserver& observer = {}) {
  cfg.validate();
  require(general.model.topology == topology.topology && general.model.layers == topology.layers &&
              general.model.input_shape == topology.input_shape,
          "personalize: general model topology does not match");
  require(!cohort.is_training_patient(patient.id),
          "personalize: patient " + patient.id + " is part of the training cohort (data leakage)");
  require(!patient.fractions.empty(), "personalize: patient " + patient.id + " has no prior");
  const LossKind kind = task_loss(cohort.task);
  TrainResult r{general.model, {}, kStageIdol, patient.id};
  const std::uint64_t tag = detail::patient_tag(patient);

  std::vector<SamplePair> prior_set;
  if (cfg.lambda_p > 0.0) {
    DeformParams dp = cfg.deform;
    dp.seed = derive_seed(cfg.seed, 3, tag);
    prior_set = augment_prior(patient.prior().first, patient.prior().second, cfg.k_prior, dp, cohort.task);
  }
  std::vector<const SamplePair*> general_samples;
  if (cfg.lambda_l > 0.0)
    for (const auto& p : cohort.training)
      for (const auto& f : p.fractions) general_samples.push_back(&f);

  const std::size_t steps_per_epoch = (cfg.k_prior + cfg.batch_size - 1) / cfg.batch_size;
  std::vector<std::size_t> prior_order(prior_set.size()), general_order(general_samples.size());
  std::size_t general_cursor = general_order.size();  // forces a shuffle on first use
  std::size_t general_pass = 0;
  AdamState adam(r.model.parameter_count());
  std::vector<double> grad(r.model.parameter_count());

  for (std::size_t epoch = 1; epoch <= cfg.epochs2; ++epoch) {
    std::iota(prior_order.begin(), prior_order.end(), std::size_t{0});
    Rng shuffler(derive_seed(cfg.seed, 2, tag, epoch));
    shuffle(std::span(prior_order), shuffler);
    double loss_sum = 0.0;
    for (std::size_t step = 0; step < steps_per_epoch; ++step) {
      std::vector<const SamplePair*> prior_chunk, general_chunk;
      if (!prior_set.empty())
        for (std::size_t i = step * cfg.batch_size; i < std::min((step + 1) * cfg.batch_size, prior_order.size()); ++i)
          prior_chunk.push_back(&prior_set[prior_order[i]]);
      while (general_chunk.size() < cfg.batch_size && !general_samples.empty()) {
        if (general_cursor == general_order.size()) {
          std::iota(general_order.begin(), general_order.end(), std::size_t{0});
          Rng g(derive_seed(cfg.seed, 4, tag, general_pass++));
          shuffle(std::span(general_order), g);
          general_cursor = 0;
        }
        general_chunk.push_back(general_samples[general_order[general_cursor++]]);
      }
      const Batch pb = make_batch(prior_chunk), gb = make_batch(general_chunk);
      if (observer) observer(r.model, epoch, step);
      std::fill(grad.begin(), grad.end(), 0.0);
      detail::with_divergence_context(kStageIdol, patient.id, epoch, [&] {
        const double l = combined_loss(r.model, gb, pb, cfg.lambda_l, cfg.lambda_p, kind, grad);
        detail::check_finite_loss(l, kStageIdol, patient.id, epoch);
        adam_step(adam, r.model.params, grad, cfg.lr2);
        loss_sum += l;
      });
    }
    r.log.add({kStageIdol, patient.id, epoch, "train", loss_sum / static_cast<double>(steps_per_epoch), "",
               std::nullopt, cfg.seed});
    detail::log_validation(r.log, kStageIdol, {patient}, r.model, cohort.task, epoch, cfg.seed, false);
  }
  return r;
}

}  // namespace idol
