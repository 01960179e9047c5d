#pragma once

// Random smooth deformation vector fields and the warps that turn one prior
// (input, target) pair into K augmented patient-specific pairs.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "idol/error.hpp"
#include "idol/rng.hpp"
#include "idol/task.hpp"
#include "idol/tensor.hpp"

namespace idol {

/// Per-pixel displacement in pixel units; dx moves along columns, dy along rows.
struct DeformationField {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> dx;
  std::vector<double> dy;

  double max_magnitude() const {
    double m = 0.0;
    for (std::size_t i = 0; i < dx.size(); ++i) m = std::max(m, std::hypot(dx[i], dy[i]));
    return m;
  }

  static DeformationField uniform(std::size_t height, std::size_t width, double dx, double dy) {
    return {height, width, std::vector<double>(height * width, dx), std::vector<double>(height * width, dy)};
  }
};

struct DeformParams {
  double amplitude = 3.0;   // max displacement, pixels
  double smoothness = 4.0;  // Gaussian sigma, pixels
  std::uint64_t seed = 0;
};

namespace detail {

// Symmetric boundary: index -1 maps to 0, n maps to n - 1.
inline std::size_t reflect_index(long i, std::size_t n) {
  const long period = 2 * static_cast<long>(n);
  long r = i % period;
  if (r < 0) r += period;
  return static_cast<std::size_t>(r < static_cast<long>(n) ? r : period - 1 - r);
}

inline std::vector<double> gaussian_kernel(double sigma) {
  const long radius = static_cast<long>(std::ceil(3.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double total = 0.0;
  for (long i = -radius; i <= radius; ++i) {
    const double v = std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));
    k[static_cast<std::size_t>(i + radius)] = v;
    total += v;
  }
  for (double& v : k) v /= total;
  return k;
}

// Separable Gaussian blur with reflected borders.
inline std::vector<double> gaussian_blur(const std::vector<double>& img, std::size_t h, std::size_t w, double sigma) {
  const auto k = gaussian_kernel(sigma);
  const long r = static_cast<long>(k.size() / 2);
  std::vector<double> tmp(img.size(), 0.0), out(img.size(), 0.0);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      double s = 0.0;
      for (long i = -r; i <= r; ++i)
        s += k[static_cast<std::size_t>(i + r)] * img[y * w + reflect_index(static_cast<long>(x) + i, w)];
      tmp[y * w + x] = s;
    }
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      double s = 0.0;
      for (long i = -r; i <= r; ++i)
        s += k[static_cast<std::size_t>(i + r)] * tmp[reflect_index(static_cast<long>(y) + i, h) * w + x];
      out[y * w + x] = s;
    }
  return out;
}

inline void check_field(const Tensor& image, const DeformationField& f) {
  require(image.rank() == 2 && image.dim(0) == f.height && image.dim(1) == f.width,
          "warp: image shape " + shape_str(image.shape()) + " does not match field " + std::to_string(f.height) + "x" +
              std::to_string(f.width));
}

}  // namespace detail

/// Uniform noise in [-1, 1] per component, Gaussian-smoothed (sigma =
/// smoothness, truncated at 3 sigma, reflected borders), then rescaled so the
/// largest displacement magnitude equals the amplitude. Never exceeds it.
inline DeformationField random_dvf(std::size_t height, std::size_t width, const DeformParams& params) {
  require(height >= 4 && width >= 4, "random_dvf: field must be at least 4x4");
  require(params.amplitude >= 0.0 && std::isfinite(params.amplitude), "random_dvf: amplitude must be >= 0");
  require(params.smoothness > 0.0 && std::isfinite(params.smoothness), "random_dvf: smoothness must be > 0");
  DeformationField f{height, width, std::vector<double>(height * width, 0.0), std::vector<double>(height * width, 0.0)};
  if (params.amplitude == 0.0) return f;
  Rng rng(params.seed);
  for (double& v : f.dx) v = rng.uniform(-1.0, 1.0);
  for (double& v : f.dy) v = rng.uniform(-1.0, 1.0);
  f.dx = detail::gaussian_blur(f.dx, height, width, params.smoothness);
  f.dy = detail::gaussian_blur(f.dy, height, width, params.smoothness);
  double m = f.max_magnitude();
  if (m == 0.0) return f;
  double scale = params.amplitude / m;
  // rounding can leave the peak one ulp above the amplitude
  for (int pass = 0; pass < 4; ++pass) {
    for (std::size_t i = 0; i < f.dx.size(); ++i) {
      f.dx[i] *= scale;
      f.dy[i] *= scale;
    }
    m = f.max_magnitude();
    if (m <= params.amplitude) break;
    scale = std::nextafter(params.amplitude / m, 0.0);
  }
  return f;
}

/// Backward warp: out(p) = bilinear sample of the image at p + d(p), with
/// sample coordinates clamped to the image.
inline Tensor warp_image(const Tensor& image, const DeformationField& f) {
  detail::check_field(image, f);
  const std::size_t h = f.height, w = f.width;
  Tensor out(image.shape());
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t i = y * w + x;
      const double sx = std::clamp(static_cast<double>(x) + f.dx[i], 0.0, static_cast<double>(w - 1));
      const double sy = std::clamp(static_cast<double>(y) + f.dy[i], 0.0, static_cast<double>(h - 1));
      const auto x0 = static_cast<std::size_t>(std::floor(sx)), y0 = static_cast<std::size_t>(std::floor(sy));
      const double fx = sx - static_cast<double>(x0), fy = sy - static_cast<double>(y0);
      const std::size_t x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
      double top = image.at(y0, x0), bottom = image.at(y1, x0);
      if (fx != 0.0) {
        top = (1.0 - fx) * top + fx * image.at(y0, x1);
        bottom = (1.0 - fx) * bottom + fx * image.at(y1, x1);
      }
      out.at(y, x) = fy != 0.0 ? (1.0 - fy) * top + fy * bottom : top;
    }
  return out;
}

/// Nearest-neighbour counterpart of warp_image; never invents label values.
inline Tensor warp_labels(const Tensor& labels, const DeformationField& f) {
  detail::check_field(labels, f);
  const std::size_t h = f.height, w = f.width;
  Tensor out(labels.shape());
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t i = y * w + x;
      const double sx = std::clamp(std::floor(static_cast<double>(x) + f.dx[i] + 0.5), 0.0, static_cast<double>(w - 1));
      const double sy = std::clamp(std::floor(static_cast<double>(y) + f.dy[i] + 0.5), 0.0, static_cast<double>(h - 1));
      out.at(y, x) = labels.at(static_cast<std::size_t>(sy), static_cast<std::size_t>(sx));
    }
  return out;
}

using SamplePair = std::pair<Tensor, Tensor>;

/// K augmented pairs. Pair 0 is the prior itself; pair k >= 1 warps input and
/// target with the same field drawn from seed params.seed + k. Segmentation
/// targets are warped with nearest-neighbour sampling, others bilinearly.
inline std::vector<SamplePair> augment_prior(const Tensor& prior_input, const Tensor& prior_target, std::size_t k,
                                             const DeformParams& params, TaskKind task) {
  require(k >= 1, "augment_prior: K must be at least 1");
  require(prior_input.rank() == 2 && prior_input.shape() == prior_target.shape(),
          "augment_prior: input and target must be equally shaped 2-D images");
  std::vector<SamplePair> pairs;
  pairs.reserve(k);
  pairs.emplace_back(prior_input, prior_target);
  for (std::size_t i = 1; i < k; ++i) {
    DeformParams p = params;
    p.seed = params.seed + i;
    const auto field = random_dvf(prior_input.dim(0), prior_input.dim(1), p);
    pairs.emplace_back(warp_image(prior_input, field),
                       task == TaskKind::seg ? warp_labels(prior_target, field) : warp_image(prior_target, field));
  }
  return pairs;
}

}  // namespace idol
