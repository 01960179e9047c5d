#pragma once

// Small deterministic convolutional engine: layer specs, a flat parameter
// vector, hand-written forward/backward passes, losses and Adam.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "idol/error.hpp"
#include "idol/rng.hpp"
#include "idol/tensor.hpp"

namespace idol {

enum class LayerKind { dense, conv3x3, relu, sigmoid, downsample2x, upsample2x, conv1x1 };

inline std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::dense: return "dense";
    case LayerKind::conv3x3: return "conv3x3";
    case LayerKind::relu: return "relu";
    case LayerKind::sigmoid: return "sigmoid";
    case LayerKind::downsample2x: return "downsample2x";
    case LayerKind::upsample2x: return "upsample2x";
    case LayerKind::conv1x1: return "conv1x1";
  }
  return "?";
}

inline LayerKind layer_kind_from_string(std::string_view name) {
  for (auto k : {LayerKind::dense, LayerKind::conv3x3, LayerKind::relu, LayerKind::sigmoid,
                 LayerKind::downsample2x, LayerKind::upsample2x, LayerKind::conv1x1})
    if (to_string(k) == name) return k;
  throw InvalidArgument("unknown layer kind '" + std::string(name) + "'");
}

/// `in`/`out` are channel counts for convolutions and feature counts for dense.
/// Activations ignore both.
struct LayerSpec {
  LayerKind kind;
  std::size_t in = 0;
  std::size_t out = 0;

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

/// dense, conv1x1: out*in + out. conv3x3, downsample2x, upsample2x: 9*out*in + out.
constexpr std::size_t parameter_count(const LayerSpec& s) {
  switch (s.kind) {
    case LayerKind::dense:
    case LayerKind::conv1x1: return s.out * s.in + s.out;
    case LayerKind::conv3x3:
    case LayerKind::downsample2x:
    case LayerKind::upsample2x: return 9 * s.out * s.in + s.out;
    case LayerKind::relu:
    case LayerKind::sigmoid: return 0;
  }
  return 0;
}

namespace detail {

inline std::string layer_label(std::size_t index, const LayerSpec& s) {
  return "layer " + std::to_string(index) + " (" + std::string(to_string(s.kind)) + ")";
}

}  // namespace detail

/// Per-sample output shape of one layer; throws naming the layer on mismatch.
inline Shape layer_output_shape(std::size_t index, const LayerSpec& s, const Shape& in) {
  const auto fail = [&](const std::string& why) {
    throw InvalidArgument(detail::layer_label(index, s) + ": " + why + ", got input " + shape_str(in));
  };
  switch (s.kind) {
    case LayerKind::relu:
    case LayerKind::sigmoid: return in;
    case LayerKind::dense:
      if (shape_size(in) != s.in) fail("expected " + std::to_string(s.in) + " input features");
      return {s.out};
    default: break;
  }
  if (in.size() != 3) fail("expected a [C x H x W] input");
  if (in[0] != s.in) fail("expected " + std::to_string(s.in) + " input channels");
  switch (s.kind) {
    case LayerKind::conv3x3:
    case LayerKind::conv1x1: return {s.out, in[1], in[2]};
    case LayerKind::downsample2x:
      if (in[1] % 2 != 0 || in[2] % 2 != 0) fail("spatial size must be even");
      return {s.out, in[1] / 2, in[2] / 2};
    case LayerKind::upsample2x: return {s.out, in[1] * 2, in[2] * 2};
    default: break;
  }
  fail("unsupported layer");
  return {};
}

/// Layer topology plus the flat parameter vector theta.
struct Model {
  std::string topology;
  Shape input_shape;  // per sample, without the batch axis
  std::vector<LayerSpec> layers;
  std::vector<std::size_t> offsets;  // start of each layer's parameters in `params`
  std::vector<double> params;

  std::size_t parameter_count() const { return params.size(); }

  /// Activation shapes: [0] is the input, [i + 1] the output of layer i.
  std::vector<Shape> activation_shapes() const {
    std::vector<Shape> shapes{input_shape};
    for (std::size_t i = 0; i < layers.size(); ++i)
      shapes.push_back(layer_output_shape(i, layers[i], shapes.back()));
    return shapes;
  }

  Shape output_shape() const { return activation_shapes().back(); }
};

/// Validates the layer chain and allocates zeroed parameters.
inline Model make_model(std::string topology, Shape input_shape, std::vector<LayerSpec> layers) {
  require(!layers.empty(), "model needs at least one layer");
  for (auto d : input_shape) require(d > 0, "input dimensions must be positive");
  Model m{std::move(topology), std::move(input_shape), std::move(layers), {}, {}};
  (void)m.activation_shapes();
  std::size_t total = 0;
  for (const auto& l : m.layers) {
    m.offsets.push_back(total);
    total += parameter_count(l);
  }
  m.params.assign(total, 0.0);
  return m;
}

enum class Head { sigmoid, linear };

/// conv3x3(1->8) relu, downsample2x(8->16) relu, conv3x3(16->16) relu,
/// upsample2x(16->8) relu, conv1x1(8->1), optional sigmoid.
inline Model encoder_decoder(std::size_t height, std::size_t width, Head head) {
  std::vector<LayerSpec> layers{
      {LayerKind::conv3x3, 1, 8},       {LayerKind::relu},
      {LayerKind::downsample2x, 8, 16}, {LayerKind::relu},
      {LayerKind::conv3x3, 16, 16},     {LayerKind::relu},
      {LayerKind::upsample2x, 16, 8},   {LayerKind::relu},
      {LayerKind::conv1x1, 8, 1},
  };
  if (head == Head::sigmoid) layers.push_back({LayerKind::sigmoid});
  return make_model(head == Head::sigmoid ? "encdec-sigmoid" : "encdec-linear", {1, height, width},
                    std::move(layers));
}

/// Scaled uniform init: weights in +-sqrt(6 / (fan_in + fan_out)), biases zero.
inline void init_glorot(Model& m, std::uint64_t seed) {
  Rng rng(seed);
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    const auto& s = m.layers[i];
    const std::size_t n = parameter_count(s);
    if (n == 0) continue;
    const std::size_t taps = (s.kind == LayerKind::dense || s.kind == LayerKind::conv1x1) ? 1 : 9;
    const double bound = std::sqrt(6.0 / static_cast<double>((s.in + s.out) * taps));
    const std::size_t weights = n - s.out;
    double* p = m.params.data() + m.offsets[i];
    for (std::size_t k = 0; k < weights; ++k) p[k] = rng.uniform(-bound, bound);
    std::fill(p + weights, p + n, 0.0);
  }
}

/// Every parameter (biases included) uniform in [lo, hi).
inline void init_uniform(Model& m, std::uint64_t seed, double lo, double hi) {
  Rng rng(seed);
  for (double& p : m.params) p = rng.uniform(lo, hi);
}

namespace detail {

// 3x3 convolution with zero padding 1 and the given stride, added into out.
// The kernel for (output o, input c) starts at w + o * w_ostride + c * 9.
template <typename T>
void conv3x3_accumulate(const T* in, std::size_t channels, std::size_t height, std::size_t width, const T* w,
                        std::size_t w_ostride, std::size_t out_channels, std::size_t stride, T* out) {
  const std::size_t oh = height / stride, ow = width / stride;
  const auto lo = [&](long d) -> std::size_t { return d >= 0 ? 0 : (static_cast<std::size_t>(-d) + stride - 1) / stride; };
  const auto hi = [&](long d, std::size_t n, std::size_t on) -> std::size_t {
    const long last = static_cast<long>(n) - 1 - d;
    return last < 0 ? 0 : std::min(on, static_cast<std::size_t>(last) / stride + 1);
  };
  for (std::size_t o = 0; o < out_channels; ++o) {
    T* plane = out + o * oh * ow;
    for (std::size_t c = 0; c < channels; ++c) {
      const T* src = in + c * height * width;
      const T* k = w + o * w_ostride + c * 9;
      for (long ky = 0; ky < 3; ++ky) {
        const long dy = ky - 1;
        const std::size_t y0 = lo(dy), y1 = hi(dy, height, oh);
        for (long kx = 0; kx < 3; ++kx) {
          const long dx = kx - 1;
          const std::size_t x0 = lo(dx), x1 = hi(dx, width, ow);
          const T wv = k[ky * 3 + kx];
          for (std::size_t y = y0; y < y1; ++y) {
            T* orow = plane + y * ow;
            const T* irow = src + static_cast<std::size_t>(static_cast<long>(stride * y) + dy) * width;
            if (stride == 1) {
              for (std::size_t x = x0; x < x1; ++x) orow[x] += wv * irow[static_cast<long>(x) + dx];
            } else {
              for (std::size_t x = x0; x < x1; ++x) orow[x] += wv * irow[static_cast<long>(stride * x) + dx];
            }
          }
        }
      }
    }
  }
}

template <typename T>
void conv3x3_forward(const T* in, std::size_t channels, std::size_t height, std::size_t width, const T* w,
                     const T* b, std::size_t out_channels, std::size_t stride, T* out) {
  const std::size_t plane = (height / stride) * (width / stride);
  for (std::size_t o = 0; o < out_channels; ++o) std::fill(out + o * plane, out + (o + 1) * plane, b[o]);
  conv3x3_accumulate(in, channels, height, width, w, channels * 9, out_channels, stride, out);
}

// Accumulates weight/bias gradients and (when din != nullptr) input gradients.
inline void conv3x3_backward(const double* in, std::size_t channels, std::size_t height, std::size_t width,
                             const double* w, std::size_t out_channels, std::size_t stride, const double* dout,
                             double* gw, double* gb, double* din) {
  const std::size_t oh = height / stride, ow = width / stride;
  const auto lo = [&](long d) -> std::size_t { return d >= 0 ? 0 : (static_cast<std::size_t>(-d) + stride - 1) / stride; };
  const auto hi = [&](long d, std::size_t n, std::size_t on) -> std::size_t {
    const long last = static_cast<long>(n) - 1 - d;
    return last < 0 ? 0 : std::min(on, static_cast<std::size_t>(last) / stride + 1);
  };
  std::vector<double> lanes(ow);
  for (std::size_t o = 0; o < out_channels; ++o) {
    const double* g = dout + o * oh * ow;
    double bsum = 0.0;
    for (std::size_t i = 0; i < oh * ow; ++i) bsum += g[i];
    gb[o] += bsum;
    for (std::size_t c = 0; c < channels; ++c) {
      const double* src = in + c * height * width;
      double* dsrc = din ? din + c * height * width : nullptr;
      const double* k = w + (o * channels + c) * 9;
      double* gk = gw + (o * channels + c) * 9;
      for (long ky = 0; ky < 3; ++ky) {
        const long dy = ky - 1;
        const std::size_t y0 = lo(dy), y1 = hi(dy, height, oh);
        for (long kx = 0; kx < 3; ++kx) {
          const long dx = kx - 1;
          const std::size_t x0 = lo(dx), x1 = hi(dx, width, ow);
          const double wv = k[ky * 3 + kx];
          // per-column partial sums keep the reduction vectorizable and the order fixed
          std::fill(lanes.begin(), lanes.begin() + static_cast<long>(ow), 0.0);
          for (std::size_t y = y0; y < y1; ++y) {
            const double* grow = g + y * ow;
            const std::size_t row = static_cast<std::size_t>(static_cast<long>(stride * y) + dy) * width;
            const double* irow = src + row;
            if (stride == 1) {
              for (std::size_t x = x0; x < x1; ++x) lanes[x] += grow[x] * irow[static_cast<long>(x) + dx];
            } else {
              for (std::size_t x = x0; x < x1; ++x) lanes[x] += grow[x] * irow[static_cast<long>(stride * x) + dx];
            }
            if (dsrc) {
              double* drow = dsrc + row;
              for (std::size_t x = x0; x < x1; ++x) drow[static_cast<long>(stride * x) + dx] += wv * grow[x];
            }
          }
          double acc = 0.0;
          for (std::size_t x = x0; x < x1; ++x) acc += lanes[x];
          gk[ky * 3 + kx] += acc;
        }
      }
    }
  }
}

// Pointwise linear map added into out; weight (o, c) at w[o * w_ostride + c].
template <typename T>
void pointwise_accumulate(const T* in, std::size_t channels, std::size_t pixels, const T* w, std::size_t w_ostride,
                          std::size_t out_channels, T* out) {
  for (std::size_t o = 0; o < out_channels; ++o) {
    T* plane = out + o * pixels;
    for (std::size_t c = 0; c < channels; ++c) {
      const T wv = w[o * w_ostride + c];
      const T* src = in + c * pixels;
      for (std::size_t p = 0; p < pixels; ++p) plane[p] += wv * src[p];
    }
  }
}

// Dense is the 1x1-spatial case.
template <typename T>
void pointwise_forward(const T* in, std::size_t channels, std::size_t pixels, const T* w, const T* b,
                       std::size_t out_channels, T* out) {
  for (std::size_t o = 0; o < out_channels; ++o) std::fill(out + o * pixels, out + (o + 1) * pixels, b[o]);
  pointwise_accumulate(in, channels, pixels, w, channels, out_channels, out);
}

inline void pointwise_backward(const double* in, std::size_t channels, std::size_t pixels, const double* w,
                               std::size_t out_channels, const double* dout, double* gw, double* gb, double* din) {
  for (std::size_t o = 0; o < out_channels; ++o) {
    const double* g = dout + o * pixels;
    double bsum = 0.0;
    for (std::size_t p = 0; p < pixels; ++p) bsum += g[p];
    gb[o] += bsum;
    for (std::size_t c = 0; c < channels; ++c) {
      const double* src = in + c * pixels;
      double acc = 0.0;
      for (std::size_t p = 0; p < pixels; ++p) acc += g[p] * src[p];
      gw[o * channels + c] += acc;
      if (din) {
        const double wv = w[o * channels + c];
        double* d = din + c * pixels;
        for (std::size_t p = 0; p < pixels; ++p) d[p] += wv * g[p];
      }
    }
  }
}

template <typename T>
std::vector<T> upsample_nearest(const T* in, std::size_t channels, std::size_t height, std::size_t width) {
  std::vector<T> up(channels * height * width * 4);
  const std::size_t uw = width * 2;
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t y = 0; y < height * 2; ++y)
      for (std::size_t x = 0; x < uw; ++x)
        up[(c * height * 2 + y) * uw + x] = in[(c * height + y / 2) * width + x / 2];
  return up;
}

// Output channels [first, last) of one layer. `up` caches the nearest
// resize for upsample2x when non-null.
template <typename T>
void layer_forward(const LayerSpec& s, const Shape& is, const T* in, const T* w, T* out, std::size_t first,
                   std::size_t last, const std::vector<T>* up = nullptr) {
  const std::size_t n_in = shape_size(is);
  const std::size_t count = last - first;
  switch (s.kind) {
    case LayerKind::relu:
      for (std::size_t k = 0; k < n_in; ++k) out[k] = in[k] > T(0) ? in[k] : T(0);
      return;
    case LayerKind::sigmoid:
      for (std::size_t k = 0; k < n_in; ++k) out[k] = T(1) / (T(1) + std::exp(-in[k]));
      return;
    case LayerKind::dense:
      pointwise_forward(in, s.in, std::size_t{1}, w + first * s.in, w + s.in * s.out + first, count, out + first);
      return;
    case LayerKind::conv1x1: {
      const std::size_t px = is[1] * is[2];
      pointwise_forward(in, s.in, px, w + first * s.in, w + s.in * s.out + first, count, out + first * px);
      return;
    }
    case LayerKind::conv3x3:
    case LayerKind::downsample2x: {
      const std::size_t stride = s.kind == LayerKind::conv3x3 ? 1 : 2;
      const std::size_t plane = (is[1] / stride) * (is[2] / stride);
      conv3x3_forward(in, s.in, is[1], is[2], w + first * s.in * 9, w + 9 * s.in * s.out + first, count, stride,
                      out + first * plane);
      return;
    }
    case LayerKind::upsample2x: {
      std::vector<T> local;
      if (!up) {
        local = upsample_nearest(in, s.in, is[1], is[2]);
        up = &local;
      }
      const std::size_t plane = 4 * is[1] * is[2];
      conv3x3_forward(up->data(), s.in, is[1] * 2, is[2] * 2, w + first * s.in * 9, w + 9 * s.in * s.out + first,
                      count, std::size_t{1}, out + first * plane);
      return;
    }
  }
}

inline std::size_t output_channels(const LayerSpec& s) {
  switch (s.kind) {
    case LayerKind::relu:
    case LayerKind::sigmoid: return 0;
    default: return s.out;
  }
}

// Runs layers [from, end) given acts[from]; acts[0] is the input.
template <typename T>
void forward_from(const Model& m, const std::vector<Shape>& shapes, const T* params, std::size_t from,
                  std::vector<std::vector<T>>& acts) {
  acts.resize(m.layers.size() + 1);
  for (std::size_t i = from; i < m.layers.size(); ++i) {
    acts[i + 1].resize(shape_size(shapes[i + 1]));
    layer_forward(m.layers[i], shapes[i], acts[i].data(), params + m.offsets[i], acts[i + 1].data(), 0,
                  output_channels(m.layers[i]));
  }
}

inline void forward_sample(const Model& m, const std::vector<Shape>& shapes, std::span<const double> x,
                           std::vector<std::vector<double>>& acts) {
  acts.resize(m.layers.size() + 1);
  acts[0].assign(x.begin(), x.end());
  forward_from(m, shapes, m.params.data(), 0, acts);
}

// Backpropagates dout (gradient w.r.t. the final activation) into grad.
inline void backward_sample(const Model& m, const std::vector<Shape>& shapes,
                            const std::vector<std::vector<double>>& acts, std::vector<double> dout,
                            std::span<double> grad) {
  std::vector<double> din;
  for (std::size_t i = m.layers.size(); i-- > 0;) {
    const auto& s = m.layers[i];
    const Shape& is = shapes[i];
    const auto& in = acts[i];
    const auto& out = acts[i + 1];
    const bool need_din = i > 0;
    din.assign(need_din ? in.size() : 0, 0.0);
    double* d = need_din ? din.data() : nullptr;
    const double* w = m.params.data() + m.offsets[i];
    double* gw = grad.data() + m.offsets[i];
    switch (s.kind) {
      case LayerKind::relu:
        if (d)
          for (std::size_t k = 0; k < in.size(); ++k) d[k] = in[k] > 0.0 ? dout[k] : 0.0;
        break;
      case LayerKind::sigmoid:
        if (d)
          for (std::size_t k = 0; k < in.size(); ++k) d[k] = dout[k] * out[k] * (1.0 - out[k]);
        break;
      case LayerKind::dense:
        pointwise_backward(in.data(), s.in, 1, w, s.out, dout.data(), gw, gw + s.in * s.out, d);
        break;
      case LayerKind::conv1x1:
        pointwise_backward(in.data(), s.in, is[1] * is[2], w, s.out, dout.data(), gw, gw + s.in * s.out, d);
        break;
      case LayerKind::conv3x3:
        conv3x3_backward(in.data(), s.in, is[1], is[2], w, s.out, 1, dout.data(), gw, gw + 9 * s.in * s.out, d);
        break;
      case LayerKind::downsample2x:
        conv3x3_backward(in.data(), s.in, is[1], is[2], w, s.out, 2, dout.data(), gw, gw + 9 * s.in * s.out, d);
        break;
      case LayerKind::upsample2x: {
        const std::size_t h = is[1], wd = is[2];
        const auto up = upsample_nearest(in.data(), s.in, h, wd);
        std::vector<double> dup(need_din ? up.size() : 0, 0.0);
        conv3x3_backward(up.data(), s.in, h * 2, wd * 2, w, s.out, 1, dout.data(), gw, gw + 9 * s.in * s.out,
                         need_din ? dup.data() : nullptr);
        if (d)
          for (std::size_t c = 0; c < s.in; ++c)
            for (std::size_t y = 0; y < 2 * h; ++y)
              for (std::size_t x = 0; x < 2 * wd; ++x)
                d[(c * h + y / 2) * wd + x / 2] += dup[(c * 2 * h + y) * 2 * wd + x];
        break;
      }
    }
    dout.swap(din);
  }
}

inline std::size_t check_batch(const Model& m, const Tensor& input) {
  const Shape& s = input.shape();
  const bool ok = s.size() == m.input_shape.size() + 1 && std::equal(m.input_shape.begin(), m.input_shape.end(), s.begin() + 1);
  if (!ok)
    throw InvalidArgument(layer_label(0, m.layers.front()) + ": expected batched input [B x " +
                          shape_str(m.input_shape).substr(1) + ", got " + shape_str(s));
  return s[0];
}

}  // namespace detail

/// Batched forward pass. Input shape is [B, ...model.input_shape].
inline Tensor forward(const Model& m, const Tensor& input) {
  const std::size_t batch = detail::check_batch(m, input);
  const auto shapes = m.activation_shapes();
  const std::size_t in_n = shape_size(m.input_shape), out_n = shape_size(shapes.back());
  Shape out_shape{batch};
  out_shape.insert(out_shape.end(), shapes.back().begin(), shapes.back().end());
  Tensor out(out_shape);
  std::vector<std::vector<double>> acts;
  for (std::size_t b = 0; b < batch; ++b) {
    detail::forward_sample(m, shapes, std::span(input.data()).subspan(b * in_n, in_n), acts);
    std::copy(acts.back().begin(), acts.back().end(), out.data().begin() + static_cast<long>(b * out_n));
  }
  return out;
}

enum class LossKind { mse, bce };

inline std::string_view to_string(LossKind k) { return k == LossKind::mse ? "mse" : "bce"; }

/// Clamp applied to predictions before the logarithm in bce. A perfect
/// prediction of a 0/1 target therefore costs -ln(1 - kBceEpsilon) ~= 1e-7.
inline constexpr double kBceEpsilon = 1e-7;

namespace detail {

inline void check_loss_args(LossKind kind, const Shape& p, const Shape& t) {
  if (p != t)
    throw InvalidArgument("loss " + std::string(to_string(kind)) + ": prediction shape " + shape_str(p) +
                          " differs from target shape " + shape_str(t));
}

// Running sum of per-element loss terms, continuing from `sum`; when grad is
// non-empty, adds scale * d(term)/d(pred).
template <typename T>
T loss_terms(LossKind kind, std::span<const T> pred, std::span<const double> target, double scale,
             std::span<double> grad, T sum = 0) {
  const T eps = kBceEpsilon;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const T p = pred[i], t = target[i];
    if (kind == LossKind::mse) {
      const T r = p - t;
      sum += r * r;
      if (!grad.empty()) grad[i] += scale * 2.0 * static_cast<double>(r);
    } else {
      const T q = std::clamp(p, eps, T(1) - eps);
      sum += -(t * std::log(q) + (T(1) - t) * std::log(T(1) - q));
      if (!grad.empty() && p == q) grad[i] += scale * static_cast<double>((q - t) / (q * (T(1) - q)));
    }
  }
  return sum;
}

}  // namespace detail

/// Mean loss over every element of the batch.
inline double loss(LossKind kind, const Tensor& prediction, const Tensor& target) {
  detail::check_loss_args(kind, prediction.shape(), target.shape());
  if (kind == LossKind::bce)
    for (double t : target.data()) require(t >= 0.0 && t <= 1.0, "bce targets must lie in [0, 1]");
  return detail::loss_terms<double>(kind, prediction.data(), target.data(), 0.0, {}) / static_cast<double>(prediction.size());
}

/// Adds weight * d(mean loss)/d(theta) to grad and returns the mean loss.
inline double accumulate_gradient(const Model& m, const Tensor& input, const Tensor& target, LossKind kind,
                                  double weight, std::span<double> grad) {
  require(grad.size() == m.parameter_count(), "gradient buffer length does not match parameter count");
  const std::size_t batch = detail::check_batch(m, input);
  const auto shapes = m.activation_shapes();
  const std::size_t in_n = shape_size(m.input_shape), out_n = shape_size(shapes.back());
  Shape out_shape{batch};
  out_shape.insert(out_shape.end(), shapes.back().begin(), shapes.back().end());
  detail::check_loss_args(kind, out_shape, target.shape());
  const double scale = weight / static_cast<double>(batch * out_n);
  std::vector<std::vector<double>> acts;
  double sum = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    detail::forward_sample(m, shapes, std::span(input.data()).subspan(b * in_n, in_n), acts);
    std::vector<double> dout(out_n, 0.0);
    // one running sum across the batch, so the value matches loss() bitwise
    sum = detail::loss_terms<double>(kind, acts.back(), std::span(target.data()).subspan(b * out_n, out_n), scale, dout,
                                     sum);
    if (weight != 0.0) detail::backward_sample(m, shapes, acts, std::move(dout), grad);
  }
  return sum / static_cast<double>(batch * out_n);
}

struct LossAndGradient {
  double loss = 0.0;
  std::vector<double> gradient;
};

/// Analytic gradient of the mean loss with respect to every parameter.
inline LossAndGradient backward(const Model& m, const Tensor& input, const Tensor& target, LossKind kind) {
  LossAndGradient r{0.0, std::vector<double>(m.parameter_count(), 0.0)};
  r.loss = accumulate_gradient(m, input, target, kind, 1.0, r.gradient);
  return r;
}

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEpsilon = 1e-8;

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t step = 0;

  AdamState() = default;
  explicit AdamState(std::size_t n) : m(n, 0.0), v(n, 0.0) {}

  friend bool operator==(const AdamState&, const AdamState&) = default;
};

/// One bias-corrected Adam update of theta in place.
inline void adam_step(AdamState& state, std::span<double> theta, std::span<const double> grad, double lr) {
  require(state.m.size() == theta.size() && state.v.size() == theta.size() && grad.size() == theta.size(),
          "adam: state, parameter and gradient lengths differ");
  for (std::size_t i = 0; i < grad.size(); ++i)
    if (!std::isfinite(grad[i]))
      throw DivergenceError("adam: non-finite gradient component at index " + std::to_string(i));
  ++state.step;
  const double c1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < theta.size(); ++i) {
    state.m[i] = kAdamBeta1 * state.m[i] + (1.0 - kAdamBeta1) * grad[i];
    state.v[i] = kAdamBeta2 * state.v[i] + (1.0 - kAdamBeta2) * grad[i] * grad[i];
    const double mhat = state.m[i] / c1;
    const double vhat = state.v[i] / c2;
    theta[i] -= lr * mhat / (std::sqrt(vhat) + kAdamEpsilon);
  }
}

/// Smallest |pre-activation| feeding any relu for the given batch; used to
/// keep finite differences away from the kink.
inline double min_relu_margin(const Model& m, const Tensor& input) {
  const std::size_t batch = detail::check_batch(m, input);
  const auto shapes = m.activation_shapes();
  const std::size_t in_n = shape_size(m.input_shape);
  std::vector<std::vector<double>> acts;
  double margin = INFINITY;
  for (std::size_t b = 0; b < batch; ++b) {
    detail::forward_sample(m, shapes, std::span(input.data()).subspan(b * in_n, in_n), acts);
    for (std::size_t i = 0; i < m.layers.size(); ++i)
      if (m.layers[i].kind == LayerKind::relu)
        for (double v : acts[i]) margin = std::min(margin, std::abs(v));
  }
  return margin;
}

}  // namespace idol
