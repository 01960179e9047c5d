#pragma once

// Finite-difference verification of the analytic gradients in nn.hpp.
//
// The central difference [L(theta + h e_i) - L(theta - h e_i)] / 2h is
// evaluated in difference form: each perturbation is carried through the
// network as an explicit increment on top of the unperturbed activations,
// using exact increment identities for every layer and loss. Subtracting two
// separately rounded O(1) losses would otherwise leave ~1e-10 absolute noise,
// which swamps parameters whose gradients are near 1e-6.

#include <algorithm>
#include <cmath>
#include <vector>

#include "idol/nn.hpp"

namespace idol {

namespace detail {

// relu(b + d) - relu(b)
inline double relu_increment(double b, double d) {
  const double a = b + d;
  if (b > 0.0 && a > 0.0) return d;
  if (b <= 0.0 && a <= 0.0) return 0.0;
  return std::max(a, 0.0) - std::max(b, 0.0);
}

// sigmoid(b + d) - sigmoid(b), via expm1 on the side where exp(-b) <= 1
inline double sigmoid_increment(double b, double d) {
  if (b < 0.0) return -sigmoid_increment(-b, -d);
  const double u = std::exp(-b);
  return -u * std::expm1(-d) / ((1.0 + u * std::exp(-d)) * (1.0 + u));
}

// per-element loss term at (p + d) minus the term at p
inline double loss_increment(LossKind kind, double p, double d, double t) {
  if (kind == LossKind::mse) return d * (2.0 * (p - t) + d);
  const double q = std::clamp(p, kBceEpsilon, 1.0 - kBceEpsilon);
  const double q2 = std::clamp(p + d, kBceEpsilon, 1.0 - kBceEpsilon);
  const double dq = (q2 > kBceEpsilon && q2 < 1.0 - kBceEpsilon && q == p) ? d : q2 - q;
  double r = 0.0;
  if (t != 0.0) r -= t * std::log1p(dq / q);
  if (t != 1.0) r -= (1.0 - t) * std::log1p(-dq / (1.0 - q));
  return r;
}

class IncrementalLoss {
 public:
  IncrementalLoss(const Model& m, const Tensor& input, const Tensor& target, LossKind kind)
      : m_(m), target_(target), kind_(kind), shapes_(m.activation_shapes()), batch_(input.dim(0)),
        out_n_(shape_size(shapes_.back())) {
    const std::size_t in_n = shape_size(m.input_shape);
    base_.resize(batch_);
    for (std::size_t b = 0; b < batch_; ++b)
      forward_sample(m, shapes_, std::span(input.data()).subspan(b * in_n, in_n), base_[b]);
  }

  /// L(theta + step * e_i) - L(theta) for parameter `index` of layer `layer`.
  double increment(std::size_t layer, std::size_t index, double step) {
    const auto& s = m_.layers[layer];
    const std::size_t weights = parameter_count(s) - s.out;
    const std::size_t channel = index < weights ? index / (weights / s.out) : index - weights;
    std::vector<double> one_hot(parameter_count(s), 0.0);
    one_hot[index] = step;
    const std::size_t n_layers = m_.layers.size();
    double sum = 0.0;
    for (std::size_t b = 0; b < batch_; ++b) {
      const auto& base = base_[b];
      // the layer is affine in its parameters, so the exact output change is
      // the layer applied with every parameter but this one set to zero
      std::vector<double> delta(base[layer + 1].size(), 0.0);
      layer_forward(s, shapes_[layer], base[layer].data(), one_hot.data(), delta.data(), channel, channel + 1);
      const std::size_t plane = shapes_[layer + 1].size() == 3 ? shapes_[layer + 1][1] * shapes_[layer + 1][2] : 1;
      std::size_t lo = channel * plane, hi = lo + plane;
      bool single_channel = true;
      for (std::size_t k = layer + 1; k < n_layers; ++k) {
        const auto& spec = m_.layers[k];
        const auto& in = base[k];
        if (spec.kind == LayerKind::relu || spec.kind == LayerKind::sigmoid) {
          const bool relu = spec.kind == LayerKind::relu;
          for (std::size_t e = lo; e < hi; ++e)
            delta[e] = relu ? relu_increment(in[e], delta[e]) : sigmoid_increment(in[e], delta[e]);
          continue;
        }
        std::vector<double> next(base[k + 1].size(), 0.0);
        const double* w = m_.params.data() + m_.offsets[k];
        if (single_channel) {
          accumulate_channel(spec, shapes_[k], delta.data() + lo, channel, w, next.data());
          single_channel = false;
        } else {
          accumulate_all(spec, shapes_[k], delta.data(), w, next.data());
        }
        delta.swap(next);
        lo = 0;
        hi = delta.size();
      }
      const double* pred = base.back().data();
      const double* tgt = target_.data().data() + b * out_n_;
      for (std::size_t e = lo; e < hi; ++e) sum += loss_increment(kind_, pred[e], delta[e], tgt[e]);
    }
    return sum / static_cast<double>(batch_ * out_n_);
  }

 private:
  // Linear part of a parametric layer applied to an input change confined to
  // channel c.
  static void accumulate_channel(const LayerSpec& s, const Shape& is, const double* d, std::size_t c, const double* w,
                                 double* out) {
    switch (s.kind) {
      case LayerKind::dense: pointwise_accumulate(d, std::size_t{1}, std::size_t{1}, w + c, s.in, s.out, out); return;
      case LayerKind::conv1x1: pointwise_accumulate(d, std::size_t{1}, is[1] * is[2], w + c, s.in, s.out, out); return;
      case LayerKind::conv3x3:
      case LayerKind::downsample2x:
        conv3x3_accumulate(d, std::size_t{1}, is[1], is[2], w + c * 9, s.in * 9, s.out,
                           std::size_t{s.kind == LayerKind::conv3x3 ? 1u : 2u}, out);
        return;
      case LayerKind::upsample2x: {
        const auto up = upsample_nearest(d, std::size_t{1}, is[1], is[2]);
        conv3x3_accumulate(up.data(), std::size_t{1}, is[1] * 2, is[2] * 2, w + c * 9, s.in * 9, s.out,
                           std::size_t{1}, out);
        return;
      }
      default: return;
    }
  }

  static void accumulate_all(const LayerSpec& s, const Shape& is, const double* d, const double* w, double* out) {
    switch (s.kind) {
      case LayerKind::dense: pointwise_accumulate(d, s.in, std::size_t{1}, w, s.in, s.out, out); return;
      case LayerKind::conv1x1: pointwise_accumulate(d, s.in, is[1] * is[2], w, s.in, s.out, out); return;
      case LayerKind::conv3x3:
      case LayerKind::downsample2x:
        conv3x3_accumulate(d, s.in, is[1], is[2], w, s.in * 9, s.out,
                           std::size_t{s.kind == LayerKind::conv3x3 ? 1u : 2u}, out);
        return;
      case LayerKind::upsample2x: {
        const auto up = upsample_nearest(d, s.in, is[1], is[2]);
        conv3x3_accumulate(up.data(), s.in, is[1] * 2, is[2] * 2, w, s.in * 9, s.out, std::size_t{1}, out);
        return;
      }
      default: return;
    }
  }

  const Model& m_;
  const Tensor& target_;
  LossKind kind_;
  std::vector<Shape> shapes_;
  std::size_t batch_;
  std::size_t out_n_;
  std::vector<std::vector<std::vector<double>>> base_;
};

}  // namespace detail

/// Max over parameters of |analytic - central| / max(|analytic|, |central|, 1e-12),
/// with central = [L(theta + h e_i) - L(theta - h e_i)] / 2h.
inline double gradient_check(const Model& m, const Tensor& input, const Tensor& target, LossKind kind, double h) {
  require(h > 0.0 && std::isfinite(h), "gradient_check: step h must be positive");
  const auto analytic = backward(m, input, target, kind).gradient;
  detail::IncrementalLoss fd(m, input, target, kind);
  double worst = 0.0;
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    for (std::size_t j = 0; j < parameter_count(m.layers[l]); ++j) {
      const double central = (fd.increment(l, j, h) - fd.increment(l, j, -h)) / (2.0 * h);
      const double a = analytic[m.offsets[l] + j];
      worst = std::max(worst, std::abs(a - central) / std::max({std::abs(a), std::abs(central), 1e-12}));
    }
  }
  return worst;
}

}  // namespace idol
