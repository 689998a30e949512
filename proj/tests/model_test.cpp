#include <cmath>
#include <filesystem>
#include <numbers>

#include <gtest/gtest.h>

#include "fldm/grad_check.hpp"
#include "fldm/model.hpp"
#include "fldm/model_io.hpp"

namespace fldm {
namespace {

Tensor random(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  return uniform_tensor(std::move(shape), lo, hi, rng);
}

ModelConfig toy_config() {
  ModelConfig c;
  c.lookback = 16;
  c.horizon = 8;
  c.variates = 3;
  c.state_dim = 4;
  c.ilt_modes = 2;
  return c;
}

// Output of the head computed straight from its definition.
double ilt_direct(const Tensor& y, const ILTHeadParams& ip, std::size_t b, std::size_t j, std::size_t c) {
  const std::size_t H = y.dim(1), D = y.dim(2), M = ip.modes();
  double pooled = 0;
  for (std::size_t t = 0; t < H; ++t) pooled += y[(b * H + t) * D + c];
  pooled /= static_cast<double>(H);
  auto raw = [&](std::size_t k) { return ip.proj_w[c * 4 * M + k] * pooled + ip.proj_b[c * 4 * M + k]; };
  const double t = static_cast<double>(j) / static_cast<double>(H);
  double out = y[(b * H + j) * D + c];
  for (std::size_t n = 0; n < M; ++n) {
    const double amp = raw(n);
    const double sigma = std::log1p(std::exp(raw(M + n)));
    const double w = raw(2 * M + n), phi = raw(3 * M + n);
    out += amp * std::exp(-sigma * t) * std::cos(w * t + phi);
  }
  return out;
}

TEST(FmmBlockTest, SingleBranchEqualsThatEncoder) {
  Rng rng(1);
  FMMBlockParams block;
  block.fmamba = FMambaParameters::init(3, 4, 16, rng);
  const Tensor x = random({2, 16, 3}, 2);
  const Tensor y = fmm_block_forward(x, block);
  const Tensor ref = fmamba_encoder_forward(x, *block.fmamba);
  for (std::size_t i = 0; i < y.numel(); ++i) EXPECT_EQ(y[i], ref[i]);
}

TEST(FmmBlockTest, SumOfBranches) {
  Rng rng(3);
  FMMBlockParams block;
  block.fmamba = FMambaParameters::init(3, 4, 16, rng, true);
  block.mamba = SSMParameters::init(3, 4, rng);
  const Tensor x = random({2, 16, 3}, 4);
  const Tensor y = fmm_block_forward(x, block);
  const Tensor a = fmamba_encoder_forward(x, *block.fmamba), b = mamba_encoder_forward(x, *block.mamba);
  for (std::size_t i = 0; i < y.numel(); ++i) EXPECT_NEAR(y[i], a[i] + b[i], 1e-12);
}

TEST(FmmBlockTest, ZeroInputAndEmptyBlock) {
  Rng rng(5);
  FMMBlockParams block;
  block.fmamba = FMambaParameters::init(2, 3, 8, rng);
  block.mamba = SSMParameters::init(2, 3, rng);
  const Tensor y = fmm_block_forward(Tensor::zeros({1, 8, 2}), block);
  for (double v : y.values()) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(fmm_block_forward(Tensor::zeros({1, 8, 2}), FMMBlockParams{}), ConfigError);
}

TEST(FuseAndProjectTest, ZeroInputGivesBias) {
  Rng rng(6);
  FusionParams fp{fan_in_uniform({2 * 65, 96}, 130, rng), fan_in_uniform({96}, 130, rng)};
  const Tensor y = fuse_and_project(Tensor::zeros({4, 96, 7}), fp);
  ASSERT_EQ(y.shape(), (Shape{4, 96, 7}));
  for (std::size_t b = 0; b < 4; ++b)
    for (std::size_t h = 0; h < 96; ++h)
      for (std::size_t v = 0; v < 7; ++v) EXPECT_EQ(y[(b * 96 + h) * 7 + v], fp.bias[h]);
}

TEST(FuseAndProjectTest, Gradient) {
  Rng rng(7);
  FusionParams fp{fan_in_uniform({2 * 9, 5}, 18, rng), fan_in_uniform({5}, 18, rng)};
  Tensor y = random({2, 12, 3}, 8);
  const Tensor probe = random({2, 5, 3}, 9);
  auto loss = [&]() { return sum(mul(fuse_and_project(y, fp), probe)); };
  EXPECT_LE(grad_check_param(loss, y, 1e-5), 1e-4);
  EXPECT_LE(grad_check_param(loss, fp.weight, 1e-5), 1e-4);
  EXPECT_LE(grad_check_param(loss, fp.bias, 1e-5), 1e-4);
}

TEST(IltHeadTest, DegenerateModesGiveConstantSum) {
  const std::vector<double> a{0.5, -1.25, 2.0};
  const Tensor amp({1, 3}, a), zero = Tensor::zeros({1, 3});
  const Tensor out = damped_cosine_sum(amp, zero, zero, zero, 10);
  const double total = (0.0 + 0.5) + -1.25 + 2.0;
  for (double v : out.values()) EXPECT_EQ(v, total);
}

TEST(IltHeadTest, DegenerateModesThroughHead) {
  // sigma = softplus(-1000) is exactly 0.
  ILTHeadParams ip{Tensor::zeros({1, 8}), Tensor({1, 8}, {0.5, 1.5, -1000, -1000, 0, 0, 0, 0})};
  const Tensor y = random({2, 6, 1}, 10);
  const Tensor out = ilt_head_forward(y, ip);
  for (std::size_t i = 0; i < y.numel(); ++i) EXPECT_EQ(out[i], y[i] + 2.0);
}

TEST(IltHeadTest, CosineValues) {
  const Tensor one({1, 1}, {1.0});
  const Tensor out = damped_cosine_sum(one, Tensor::zeros({1, 1}), Tensor({1, 1}, {2.0 * std::numbers::pi}),
                                       Tensor::zeros({1, 1}), 4);
  EXPECT_NEAR(out[0], 1.0, 1e-15);
  EXPECT_NEAR(out[1], 0.0, 1e-15);
  EXPECT_NEAR(out[2], -1.0, 1e-15);
}

TEST(IltHeadTest, MatchesDirectEvaluation) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    ILTHeadParams ip{random({3, 16}, 20 + seed, -2, 2), random({3, 16}, 30 + seed, -2, 2)};
    const Tensor y = random({2, 12, 3}, 40 + seed);
    const Tensor out = ilt_head_forward(y, ip);
    for (std::size_t b = 0; b < 2; ++b)
      for (std::size_t j = 0; j < 12; ++j)
        for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(out[(b * 12 + j) * 3 + c], ilt_direct(y, ip, b, j, c), 1e-12);
  }
}

TEST(IltHeadTest, Gradient) {
  ILTHeadParams ip{random({3, 8}, 50, -1, 1), random({3, 8}, 51, -1, 1)};
  ip.proj_w.set_requires_grad(true);
  ip.proj_b.set_requires_grad(true);
  Tensor y = random({2, 6, 3}, 52);
  const Tensor probe = random({2, 6, 3}, 53);
  auto loss = [&]() { return sum(mul(ilt_head_forward(y, ip), probe)); };
  EXPECT_LE(grad_check_param(loss, y, 1e-5), 1e-4);
  EXPECT_LE(grad_check_param(loss, ip.proj_w, 1e-5), 1e-4);
  EXPECT_LE(grad_check_param(loss, ip.proj_b, 1e-5), 1e-4);
}

TEST(IltHeadTest, DecayIsNonNegative) {
  ILTHeadParams ip{random({2, 12}, 54, -5, 5), random({2, 12}, 55, -5, 5)};
  const auto modes = ilt_modes(random({3, 4, 2}, 56, -5, 5), ip);
  for (double v : modes.decay.values()) EXPECT_GE(v, 0.0);
}

TEST(ModelTest, EttLikeShape) {
  ModelConfig c;  // lookback 96, horizon 96, 7 variates
  const Model m(c, 1);
  EXPECT_EQ(m.forward(random({32, 96, 7}, 2)).shape(), (Shape{32, 96, 7}));
}

TEST(ModelTest, DeterministicForward) {
  const Model a(toy_config(), 7), b(toy_config(), 7);
  const Tensor x = random({2, 16, 3}, 3);
  const Tensor ya = a.forward(x), yb = b.forward(x), ya2 = a.forward(x);
  for (std::size_t i = 0; i < ya.numel(); ++i) {
    EXPECT_EQ(ya[i], yb[i]);
    EXPECT_EQ(ya[i], ya2[i]);
  }
}

TEST(ModelTest, RejectsBadInput) {
  const Model m(toy_config(), 1);
  EXPECT_THROW(m.forward(Tensor::zeros({1, 15, 3})), ShapeError);
  std::vector<double> v(48, 0.0);
  v[5] = NAN;
  EXPECT_THROW(m.forward(Tensor({1, 16, 3}, v)), NumericError);
}

TEST(ModelTest, ConfigValidation) {
  ModelConfig c = toy_config();
  c.use_fmamba = c.use_mamba = false;
  EXPECT_THROW(c.validate(), ConfigError);
  c = toy_config();
  c.horizon = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

void expect_model_gradients(const ModelConfig& cfg, std::uint64_t seed) {
  Model m(cfg, seed);
  const Tensor x = random({1, cfg.lookback, cfg.variates}, seed + 100);
  const Tensor probe = random({1, cfg.horizon, cfg.variates}, seed + 200);
  auto loss = [&]() { return sum(mul(m.forward(x), probe)); };
  for (auto& [name, t] : m.parameters()) EXPECT_LE(grad_check_param(loss, t, 1e-5), 1e-4) << name;
}

TEST(ModelTest, EndToEndGradientCheck) { expect_model_gradients(toy_config(), 11); }

TEST(ModelTest, EndToEndGradientCheckVariants) {
  ModelConfig c = toy_config();
  c.use_ilt = false;
  c.random_filter_init = true;
  expect_model_gradients(c, 12);
  c = toy_config();
  c.hidden = 5;
  c.use_rbf = false;
  c.per_variate_filter = true;
  c.discretization = Discretization::paper_eq4;
  expect_model_gradients(c, 13);
}

TEST(ModelTest, NoDeadParameters) {
  for (std::size_t hidden : {0u, 6u}) {
    ModelConfig c = toy_config();
    c.hidden = hidden;
    c.random_filter_init = true;
    Model m(c, 21);
    const Tensor x = random({4, 16, 3}, 22), target = random({4, 8, 3}, 23);
    Graph g;
    {
      Graph::Scope scope(g);
      const Tensor d = sub(m.forward(x), target);
      g.backward(mean(mul(d, d)));
    }
    for (const auto& [name, t] : m.parameters()) {
      ASSERT_TRUE(t.has_grad()) << name;
      double norm = 0;
      for (double v : t.grad()) norm += v * v;
      EXPECT_GT(norm, 0.0) << name;
    }
  }
}

TEST(ModelTest, DisabledSpectralPathMatchesIdentityFilterUpToFloor) {
  ModelConfig c = toy_config();
  c.dt_min = 1.0;  // keep step sizes above the floor's knee
  c.dt_max = 2.0;
  const Model with(c, 31);
  c.use_ft = false;
  const Model without(c, 31);
  const Tensor x = random({2, 16, 3}, 32, -0.2, 0.2);
  const Tensor a = with.forward(x), b = without.forward(x);
  double worst = 0, scale = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    worst = std::max(worst, std::abs(a[i] - b[i]));
    scale = std::max(scale, std::abs(b[i]));
  }
  EXPECT_LE(worst, 1e-3 * std::max(1.0, scale));
  // The filter is not a trainable parameter of the variant.
  for (const auto& [name, t] : without.parameters()) EXPECT_EQ(name.find("filter"), std::string::npos);
}

TEST(ModelTest, AblationFlagsSelectComponents) {
  ModelConfig c = toy_config();
  c.use_fmamba = false;
  const Model no_fm(c, 1);
  for (const auto& block : no_fm.params().blocks) {
    EXPECT_FALSE(block.fmamba);
    EXPECT_TRUE(block.mamba);
  }
  c = toy_config();
  c.use_ilt = false;
  const Model no_ilt(c, 1);
  EXPECT_FALSE(no_ilt.params().ilt);
  ASSERT_TRUE(no_ilt.params().compensation);
  EXPECT_EQ(no_ilt.params().compensation->weight.shape(), (Shape{8, 8}));
}

TEST(ModelTest, ChunkedScanMatchesSequential) {
  ModelConfig c = toy_config();
  c.lookback = 130;
  const Model seq(c, 41);
  c.scan = ScanMode::chunked;
  const Model chk(c, 41);
  const Tensor x = random({2, 130, 3}, 42);
  const Tensor a = seq.forward(x), b = chk.forward(x);
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(a[i], b[i], 1e-10);
}

TEST(ModelIoTest, SaveLoadForwardIsBitIdentical) {
  ModelConfig c = toy_config();
  c.hidden = 4;
  c.per_variate_filter = true;
  c.random_filter_init = true;
  const Model m(c, 0xfeedbeefcafeull);
  const auto path = std::filesystem::temp_directory_path() / "fldm_model_io_test.ckpt";
  save_model(path.string(), m, {{"extra.stats", Tensor({2}, {1.5, -2.5})}});
  const LoadedModel loaded = load_model(path.string());
  std::filesystem::remove(path);
  EXPECT_EQ(loaded.model.seed(), m.seed());
  EXPECT_EQ(loaded.model.config().hidden, 4u);
  EXPECT_TRUE(loaded.model.config().per_variate_filter);
  ASSERT_EQ(loaded.extras.count("extra.stats"), 1u);
  EXPECT_EQ(loaded.extras.at("extra.stats")[1], -2.5);
  const Tensor x = random({2, 16, 3}, 43);
  const Tensor a = m.forward(x), b = loaded.model.forward(x);
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_EQ(a[i], b[i]);
}

}  // namespace
}  // namespace fldm
