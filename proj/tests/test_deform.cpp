#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include "idol/deform.hpp"

using namespace idol;

namespace {

Tensor ramp4x4() {
  Tensor t({4, 4});
  for (std::size_t i = 0; i < 16; ++i) t[i] = static_cast<double>(i);
  return t;
}

Tensor random_mask(std::size_t n, std::uint64_t seed) {
  Tensor t({n, n});
  Rng rng(seed);
  for (double& v : t.data()) v = rng.uniform() < 0.3 ? 1.0 : 0.0;
  return t;
}

}  // namespace

TEST(RandomDvf, ZeroAmplitudeIsIdentity) {
  const auto f = random_dvf(16, 16, {0.0, 4.0, 9});
  EXPECT_EQ(f.max_magnitude(), 0.0);
  EXPECT_TRUE(std::all_of(f.dx.begin(), f.dx.end(), [](double v) { return v == 0.0; }));
}

TEST(RandomDvf, RescaledToAmplitude) {
  const auto f = random_dvf(32, 32, {3.0, 4.0, 42});
  EXPECT_EQ(f.dx.size(), 32u * 32u);
  EXPECT_LE(f.max_magnitude(), 3.0);
  EXPECT_NEAR(f.max_magnitude(), 3.0, 1e-12);
}

TEST(RandomDvf, SeedsDifferAndRepeat) {
  const auto a = random_dvf(32, 32, {3.0, 4.0, 1}), b = random_dvf(32, 32, {3.0, 4.0, 2});
  const auto a2 = random_dvf(32, 32, {3.0, 4.0, 1});
  EXPECT_NE(a.dx, b.dx);
  EXPECT_EQ(a.dx, a2.dx);
  EXPECT_EQ(a.dy, a2.dy);
}

TEST(RandomDvf, RejectsInvalidParams) {
  EXPECT_THROW(random_dvf(3, 8, {}), InvalidArgument);
  EXPECT_THROW(random_dvf(8, 8, {-1.0, 4.0, 0}), InvalidArgument);
  EXPECT_THROW(random_dvf(8, 8, {1.0, 0.0, 0}), InvalidArgument);
}

TEST(RandomDvf, AmplitudeAndSmoothnessBounds) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    for (double sigma : {2.0, 4.0}) {
      const DeformParams p{3.0, sigma, seed};
      const auto f = random_dvf(32, 32, p);
      EXPECT_LE(f.max_magnitude(), p.amplitude);
      const double bound = 2.0 * p.amplitude / p.smoothness;
      for (const auto* comp : {&f.dx, &f.dy})
        for (std::size_t y = 1; y + 1 < 32; ++y)
          for (std::size_t x = 1; x + 1 < 32; ++x) {
            const double gx = ((*comp)[y * 32 + x + 1] - (*comp)[y * 32 + x - 1]) / 2.0;
            const double gy = ((*comp)[(y + 1) * 32 + x] - (*comp)[(y - 1) * 32 + x]) / 2.0;
            ASSERT_LE(std::hypot(gx, gy), bound) << "seed " << seed;
          }
    }
  }
}

TEST(WarpImage, IdentityIsBitwise) {
  Tensor img({8, 8});
  Rng rng(3);
  for (double& v : img.data()) v = rng.normal();
  EXPECT_EQ(warp_image(img, DeformationField::uniform(8, 8, 0.0, 0.0)), img);
}

TEST(WarpImage, UnitShiftMatchesHandReference) {
  // out(r, c) = in(r, c + 1); the last column repeats the edge
  const Tensor expected({4, 4}, std::vector<double>{1, 2, 3, 3, 5, 6, 7, 7, 9, 10, 11, 11, 13, 14, 15, 15});
  EXPECT_EQ(warp_image(ramp4x4(), DeformationField::uniform(4, 4, 1.0, 0.0)), expected);
  const Tensor down({4, 4}, std::vector<double>{4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 12, 13, 14, 15});
  EXPECT_EQ(warp_image(ramp4x4(), DeformationField::uniform(4, 4, 0.0, 1.0)), down);
}

TEST(WarpImage, HalfPixelShiftInterpolates) {
  const Tensor out = warp_image(ramp4x4(), DeformationField::uniform(4, 4, 0.5, 0.0));
  EXPECT_DOUBLE_EQ(out.at(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(out.at(2, 1), 9.5);
  EXPECT_DOUBLE_EQ(out.at(3, 3), 15.0);
}

TEST(WarpImage, OutputWithinInputRange) {
  Tensor img({32, 32});
  Rng rng(8);
  for (double& v : img.data()) v = rng.uniform(-2.0, 5.0);
  const auto [lo, hi] = std::minmax_element(img.data().begin(), img.data().end());
  for (std::uint64_t s = 0; s < 20; ++s) {
    const Tensor out = warp_image(img, random_dvf(32, 32, {6.0, 3.0, s}));
    for (double v : out.data()) {
      EXPECT_GE(v, *lo);
      EXPECT_LE(v, *hi);
    }
  }
}

TEST(WarpImage, DimensionMismatchRejected) {
  EXPECT_THROW(warp_image(Tensor({4, 5}), DeformationField::uniform(4, 4, 0, 0)), InvalidArgument);
  EXPECT_THROW(warp_labels(Tensor({5, 4}), DeformationField::uniform(4, 4, 0, 0)), InvalidArgument);
}

TEST(WarpLabels, IdentityAndIntegerShift) {
  const Tensor mask({4, 4}, std::vector<double>{0, 1, 1, 0, 0, 1, 1, 0, 0, 0, 0, 0, 1, 0, 0, 0});
  EXPECT_EQ(warp_labels(mask, DeformationField::uniform(4, 4, 0, 0)), mask);
  // dx = -1, dy = 1: out(r, c) = in(r + 1, c - 1), clamped
  const Tensor expected({4, 4}, std::vector<double>{0, 0, 1, 1, 0, 0, 0, 0, 1, 1, 0, 0, 1, 1, 0, 0});
  EXPECT_EQ(warp_labels(mask, DeformationField::uniform(4, 4, -1.0, 1.0)), expected);
}

TEST(WarpLabels, LabelSetClosed) {
  Tensor labels({16, 16});
  Rng rng(2);
  for (double& v : labels.data()) v = static_cast<double>(rng.below(3)) * 2.0;
  for (std::uint64_t s = 0; s < 20; ++s) {
    const Tensor out = warp_labels(labels, random_dvf(16, 16, {4.0, 2.0, s}));
    for (double v : out.data()) EXPECT_TRUE(v == 0.0 || v == 2.0 || v == 4.0);
  }
}

TEST(AugmentPrior, PairZeroIsThePrior) {
  const Tensor in = ramp4x4(), tgt = random_mask(4, 1);
  const auto one = augment_prior(in, tgt, 1, {}, TaskKind::seg);
  ASSERT_EQ(one.size(), 1u);
  EXPECT_EQ(one[0].first, in);
  EXPECT_EQ(one[0].second, tgt);
  EXPECT_THROW(augment_prior(in, tgt, 0, {}, TaskKind::seg), InvalidArgument);
}

TEST(AugmentPrior, SegmentationTargetsStayBinary) {
  Tensor in({32, 32});
  Rng rng(4);
  for (double& v : in.data()) v = rng.uniform();
  const auto pairs = augment_prior(in, random_mask(32, 5), 32, {3.0, 4.0, 77}, TaskKind::seg);
  ASSERT_EQ(pairs.size(), 32u);
  for (const auto& [x, y] : pairs)
    for (double v : y.data()) EXPECT_TRUE(v == 0.0 || v == 1.0);
}

TEST(AugmentPrior, DeterministicAndZeroAmplitudeNoOp) {
  const Tensor in = random_mask(16, 9), tgt = random_mask(16, 10);
  const auto a = augment_prior(in, tgt, 8, {3.0, 4.0, 5}, TaskKind::sr);
  const auto b = augment_prior(in, tgt, 8, {3.0, 4.0, 5}, TaskKind::sr);
  EXPECT_EQ(a, b);
  const auto z = augment_prior(in, tgt, 8, {0.0, 4.0, 5}, TaskKind::sct);
  for (const auto& [x, y] : z) {
    EXPECT_EQ(x, in);
    EXPECT_EQ(y, tgt);
  }
}

TEST(AugmentPrior, InputAndTargetShareOneField) {
  // warp coordinate grids: the sampled positions recovered from input and
  // target must coincide with the field for seed + k
  const std::size_t n = 24;
  Tensor xs({n, n}), ys({n, n});
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < n; ++c) {
      xs.at(r, c) = static_cast<double>(c);
      ys.at(r, c) = static_cast<double>(r);
    }
  const DeformParams p{2.5, 3.0, 1000};
  const auto pairs = augment_prior(xs, ys, 6, p, TaskKind::sct);
  for (std::size_t k = 1; k < pairs.size(); ++k) {
    DeformParams pk = p;
    pk.seed = p.seed + k;
    const auto f = random_dvf(n, n, pk);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < n; ++c) {
        const std::size_t i = r * n + c;
        EXPECT_NEAR(pairs[k].first.at(r, c), std::clamp(static_cast<double>(c) + f.dx[i], 0.0, n - 1.0), 1e-12);
        EXPECT_NEAR(pairs[k].second.at(r, c), std::clamp(static_cast<double>(r) + f.dy[i], 0.0, n - 1.0), 1e-12);
      }
  }
}
