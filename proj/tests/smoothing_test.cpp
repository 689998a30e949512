#include <algorithm>
#include <cmath>

#include <gtest/gtest.h>

#include "fldm/grad_check.hpp"
#include "fldm/ops.hpp"
#include "fldm/smoothing.hpp"

namespace fldm {
namespace {

Tensor random(Shape shape, std::uint64_t seed) {
  Rng rng(seed);
  return uniform_tensor(std::move(shape), -1, 1, rng);
}

TEST(RbfSmoothTest, RadiusZeroIsIdentity) {
  const Tensor x = random({2, 10, 3}, 1);
  const Tensor y = rbf_smooth(x, {1.0, 0});
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(y[i], x[i]);
}

TEST(RbfSmoothTest, ConstantSeriesUnchanged) {
  const Tensor y = rbf_smooth(Tensor({1, 4, 1}, {5, 5, 5, 5}), {0.7, 3});
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(y[i], 5.0, 1e-14);
}

TEST(RbfSmoothTest, StepAtIndexOne) {
  const Tensor y = rbf_smooth(Tensor({1, 4, 1}, {0, 0, 1, 1}), {1.0, 1});
  const double e = std::exp(-0.5);
  // Offsets -1, 0, +1 carry weights e, 1, e over values 0, 0, 1.
  EXPECT_NEAR(y[1], e / (1 + 2 * e), 1e-15);
  EXPECT_NEAR(y[1], 0.27407, 1e-5);
  // Left boundary: window truncated to offsets {0, +1}.
  EXPECT_NEAR(y[0], 0.0, 1e-15);
  EXPECT_NEAR(y[3], (e + 1) / (e + 1), 1e-15);
}

TEST(RbfSmoothTest, NonPositiveBandwidthThrows) {
  EXPECT_THROW(rbf_smooth(Tensor::zeros({1, 4, 1}), {0.0, 2}), ConfigError);
  EXPECT_THROW(rbf_smooth(Tensor::zeros({1, 4, 1}), {-1.0, 2}), ConfigError);
}

TEST(RbfSmoothTest, ConvexCombinationPerVariate) {
  const Tensor x = random({3, 30, 4}, 2);
  const Tensor y = rbf_smooth(x, {1.5, 3});
  for (std::size_t b = 0; b < 3; ++b)
    for (std::size_t v = 0; v < 4; ++v) {
      double lo = 1e9, hi = -1e9;
      for (std::size_t t = 0; t < 30; ++t) {
        lo = std::min(lo, x[(b * 30 + t) * 4 + v]);
        hi = std::max(hi, x[(b * 30 + t) * 4 + v]);
      }
      for (std::size_t t = 0; t < 30; ++t) {
        EXPECT_GE(y[(b * 30 + t) * 4 + v], lo - 1e-14);
        EXPECT_LE(y[(b * 30 + t) * 4 + v], hi + 1e-14);
      }
    }
}

TEST(RbfSmoothTest, LinearAndShiftEquivariantInInterior) {
  const RBFConfig cfg{0.8, 2};
  const Tensor x = random({1, 40, 1}, 3), z = random({1, 40, 1}, 4);
  std::vector<double> mix(40), shifted(40, 0.0);
  for (std::size_t i = 0; i < 40; ++i) mix[i] = 2.0 * x[i] - 0.5 * z[i];
  for (std::size_t i = 0; i + 3 < 40; ++i) shifted[i + 3] = x[i];
  const Tensor sx = rbf_smooth(x, cfg), sz = rbf_smooth(z, cfg);
  const Tensor smix = rbf_smooth(Tensor({1, 40, 1}, mix), cfg);
  for (std::size_t i = 0; i < 40; ++i) EXPECT_NEAR(smix[i], 2.0 * sx[i] - 0.5 * sz[i], 1e-13);
  const Tensor sshift = rbf_smooth(Tensor({1, 40, 1}, shifted), cfg);
  // Interior: far enough from both boundaries of both series.
  for (std::size_t t = 3 + 2 + 1; t + 2 + 1 < 40; ++t) EXPECT_NEAR(sshift[t], sx[t - 3], 1e-13);
}

TEST(RbfSmoothTest, Gradient) {
  const Tensor probe = random({2, 12, 3}, 5);
  const double err = grad_check([&](const Tensor& x) { return sum(mul(rbf_smooth(x, {1.2, 2}), probe)); },
                                random({2, 12, 3}, 6), 1e-5);
  EXPECT_LE(err, 1e-6);
}

}  // namespace
}  // namespace fldm
