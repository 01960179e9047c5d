#pragma once

// Shared helpers for the unit and acceptance suites.

#include <cstdint>

#include "idol/gradcheck.hpp"

namespace test_support {

struct GradientCase {
  double max_relative_error = 0.0;
  std::uint64_t init_seed = 0;
  idol::LossKind loss = idol::LossKind::mse;
};

/// One seeded encoder-decoder on 8x8 input with parameters in [-0.5, 0.5].
/// Initializations whose relu pre-activations come within 1e-4 of the kink
/// are redrawn. Even seeds use the sigmoid head with bce, odd seeds the
/// linear head with mse.
inline GradientCase gradient_fidelity_case(std::uint64_t seed) {
  using namespace idol;
  const bool seg = seed % 2 == 0;
  Model m = encoder_decoder(8, 8, seg ? Head::sigmoid : Head::linear);
  Tensor x({1, 1, 8, 8}), t({1, 1, 8, 8});
  Rng data(derive_seed(seed, 1));
  for (double& v : x.data()) v = data.uniform();
  for (double& v : t.data()) v = seg ? (data.uniform() < 0.5 ? 0.0 : 1.0) : data.uniform();
  GradientCase c;
  c.loss = seg ? LossKind::bce : LossKind::mse;
  for (std::uint64_t attempt = 0;; ++attempt) {
    c.init_seed = derive_seed(seed, 2, attempt);
    init_uniform(m, c.init_seed, -0.5, 0.5);
    if (min_relu_margin(m, x) >= 1e-4) break;
  }
  c.max_relative_error = gradient_check(m, x, t, c.loss, 1e-6);
  return c;
}

}  // namespace test_support
