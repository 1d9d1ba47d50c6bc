#include <gtest/gtest.h>

#include <cmath>

#include "lshift/model.hpp"
#include "lshift/shift.hpp"
#include "support/helpers.hpp"

namespace lshift {
namespace {

using D = Tensor<double>;

TEST(TimestepEmbedding, ZeroAndOne) {
  const auto e0 = timestep_embedding(0, 64);
  ASSERT_EQ(e0.size(), 64u);
  for (int i = 0; i < 32; ++i) {
    EXPECT_EQ(e0[i], 0.0);
    EXPECT_EQ(e0[32 + i], 1.0);
  }
  const auto e1 = timestep_embedding(1, 64);
  EXPECT_EQ(e1[0], std::sin(1.0));
  EXPECT_NE(e1[0], e0[0]);
  EXPECT_THROW(timestep_embedding(0, 7), ConfigError);
}

TEST(UNetConfig, Validation) {
  UNetConfig c;
  EXPECT_NO_THROW(c.validate());
  c.heads = 5;
  EXPECT_THROW(c.validate(), ConfigError);
  c = UNetConfig{};
  c.attention_levels = {2};
  EXPECT_THROW(c.validate(), ConfigError);
  c = UNetConfig{};
  c.norm_groups = 7;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(ParameterCount, ConvWithBias) {
  ParamStore<double> p;
  p.add("conv.weight", D::zeros({4, 4, 1, 1}));
  p.add("conv.bias", D::zeros({4}));
  EXPECT_EQ(parameter_count(p), 20);
}

TEST(ParameterCount, ShiftAddsNothing) {
  for (UNetConfig c : {UNetConfig{}, test::tiny_unet_config()}) {
    ParamStore<float> on, off;
    Rng r1(1), r2(1);
    c.use_shift = true;
    UNet<float>(c).init(on, r1);
    c.use_shift = false;
    UNet<float>(c).init(off, r2);
    EXPECT_EQ(parameter_count(on), parameter_count(off));
    EXPECT_EQ(on.size(), off.size());
  }
}

TEST(UNet, OutputShapeMatchesInput) {
  UNetConfig c = test::tiny_unet_config();
  c.in_channels = 4;
  UNet<float> net(c);
  ParamStore<float> p;
  Rng rng(2);
  net.init(p, rng);
  auto u = Tensor<float>::randn({1, 8, 4, 8, 8}, rng);
  auto ctx = Tensor<float>::randn({1, 8, c.context_dim}, rng);
  const std::vector<int> t = {10};
  auto y = net.forward(p, u, t, ctx);
  EXPECT_EQ(y.shape(), u.shape());
}

TEST(UNet, DeskConfigForwardIsFinite) {
  UNet<float> net(UNetConfig{});
  ParamStore<float> p;
  Rng rng(3);
  net.init(p, rng);
  auto u = Tensor<float>::randn({2, 8, 12, 8, 8}, rng);
  auto ctx = Tensor<float>::randn({2, 8, 64}, rng);
  const std::vector<int> t = {0, 999};
  auto y = net.forward(p, u, t, ctx);
  EXPECT_NO_THROW(y.validate_finite("unet output"));
}

TEST(UNet, ZeroInitialisedOutputPredictsZero) {
  UNet<float> net(test::tiny_unet_config());
  ParamStore<float> p;
  Rng rng(4);
  net.init(p, rng);
  auto u = Tensor<float>::randn({1, 2, 3, 4, 4}, rng);
  auto ctx = Tensor<float>::randn({1, 3, 6}, rng);
  const std::vector<int> t = {5};
  for (float v : test::values(net.forward(p, u, t, ctx))) EXPECT_EQ(v, 0.0f);
}

TEST(UNet, RejectsIndivisibleSpatialDims) {
  UNet<float> net(test::tiny_unet_config());
  ParamStore<float> p;
  Rng rng(5);
  net.init(p, rng);
  auto u = Tensor<float>::randn({1, 2, 3, 5, 5}, rng);
  auto ctx = Tensor<float>::randn({1, 3, 6}, rng);
  const std::vector<int> t = {5};
  EXPECT_THROW(net.forward(p, u, t, ctx), ShapeError);
}

TEST(UNet, SingleFrameRunsWithVideoWeights) {
  UNet<float> net(test::tiny_unet_config());
  ParamStore<float> p;
  Rng rng(6);
  net.init(p, rng);
  auto u = Tensor<float>::randn({2, 1, 3, 4, 4}, rng);
  auto ctx = Tensor<float>::randn({2, 3, 6}, rng);
  const std::vector<int> t = {1, 2};
  EXPECT_EQ(net.forward(p, u, t, ctx).shape(), u.shape());
}

TEST(UNet, TinyGradientCheck) {
  const UNetConfig c = test::tiny_unet_config();
  UNet<double> net(c);
  ParamStore<double> params;
  Rng rng(7);
  net.init(params, rng);
  test::perturb(params, 8, 0.05);
  std::vector<std::string> names;
  std::vector<D> leaves = {test::random_leaf({1, 2, 3, 4, 4}, 9), test::random_leaf({1, 3, 6}, 10)};
  for (const auto& [name, t] : params.entries()) {
    names.push_back(name);
    leaves.push_back(t.detach());
  }
  const std::vector<int> t = {17};
  const double err = test::grad_check(
      [&](const std::vector<D>& p) {
        ParamStore<double> ps;
        for (std::size_t i = 0; i < names.size(); ++i) ps.add(names[i], p[i + 2]);
        return test::probe_sum(net.forward(ps, p[0], t, p[1]));
      },
      leaves);
  EXPECT_LE(err, 1e-4);
}

class ResblockTest : public ::testing::Test {
 protected:
  void SetUp() override {
    Rng rng(20);
    net.init_resblock(params, "rb", 6, 6, rng);
    test::perturb(params, 21, 0.1);
    temb = test::random_leaf({1, net.config().time_dim()}, 22);
  }
  D run(const D& x) const { return net.resblock(params, "rb", x, frames, silu(temb)); }

  UNet<double> net{[] {
    UNetConfig c = test::tiny_unet_config();
    c.norm_groups = 2;
    return c;
  }()};
  ParamStore<double> params;
  D temb;
  std::int64_t frames = 6;
};

TEST_F(ResblockTest, ZeroFinalConvGivesSkipPath) {
  for (auto* n : {"rb.conv2.weight", "rb.conv2.bias"})
    for (auto& v : params.at(n).mutable_data()) v = 0.0;
  auto x = test::random_leaf({6, 6, 3, 3}, 23);
  EXPECT_EQ(test::to_vec(run(x)), test::to_vec(x));
}

TEST_F(ResblockTest, SingleFrameIsFinite) {
  frames = 1;
  auto x = test::random_leaf({1, 6, 3, 3}, 24);
  EXPECT_NO_THROW(run(x).validate_finite("resblock"));
}

TEST_F(ResblockTest, TemporalLocality) {
  auto x = test::random_leaf({6, 6, 3, 3}, 25);
  const auto base = test::to_vec(run(x));
  const std::int64_t per = 6 * 9;
  for (int j = 0; j < 6; ++j) {
    auto xp = test::to_vec(x);
    for (std::int64_t i = j * per; i < (j + 1) * per; ++i) xp[i] += 0.5;
    const auto y = test::to_vec(run(D::from(x.shape(), xp)));
    for (int f = 0; f < 6; ++f) {
      double change = 0;
      for (std::int64_t i = f * per; i < (f + 1) * per; ++i) change = std::max(change, std::abs(y[i] - base[i]));
      if (std::abs(f - j) <= 1)
        EXPECT_GT(change, 1e-6) << "input " << j << " output " << f;
      else
        EXPECT_LE(change, 1e-12) << "input " << j << " output " << f;
    }
  }
}

TEST_F(ResblockTest, WithoutShiftFramesAreIndependent) {
  UNetConfig c = net.config();
  c.use_shift = false;
  UNet<double> plain(c);
  auto x = test::random_leaf({6, 6, 3, 3}, 26);
  const auto base = test::to_vec(plain.resblock(params, "rb", x, frames, silu(temb)));
  auto xp = test::to_vec(x);
  for (int i = 2 * 54; i < 3 * 54; ++i) xp[i] += 0.5;
  const auto y = test::to_vec(plain.resblock(params, "rb", D::from(x.shape(), xp), frames, silu(temb)));
  for (int i = 0; i < 6 * 54; ++i)
    if (i / 54 != 2) EXPECT_EQ(y[i], base[i]);
}

TEST_F(ResblockTest, TemporalModuleHook) {
  int calls = 0;
  net.set_temporal_module([&](const D& z) {
    ++calls;
    return z;
  });
  auto x = test::random_leaf({6, 6, 3, 3}, 27);
  run(x);
  EXPECT_EQ(calls, 1);
}

class TransformerTest : public ::testing::Test {
 protected:
  void SetUp() override {
    Rng rng(30);
    net.init_transformer(params, "tf", 8, rng);
    test::perturb(params, 31, 0.1);
  }
  UNet<double> net{test::tiny_unet_config()};
  ParamStore<double> params;
};

TEST_F(TransformerTest, FramePermutationCommutes) {
  auto x = test::random_leaf({3, 8, 2, 2}, 32);
  auto ctx = test::random_leaf({1, 4, 6}, 33);
  auto ctx3 = repeat_batch(ctx, 3);
  const auto y = test::to_vec(net.transformer(params, "tf", x, ctx3));
  // Reverse the frame order.
  auto xv = test::to_vec(x);
  std::vector<double> xr;
  for (int n = 2; n >= 0; --n) xr.insert(xr.end(), xv.begin() + n * 32, xv.begin() + (n + 1) * 32);
  const auto yr = test::to_vec(net.transformer(params, "tf", D::from(x.shape(), xr), ctx3));
  for (int n = 0; n < 3; ++n)
    for (int i = 0; i < 32; ++i) EXPECT_EQ(yr[(2 - n) * 32 + i], y[n * 32 + i]);
}

TEST_F(TransformerTest, IdenticalContextTokensIgnoreCrossQuery) {
  auto x = test::random_leaf({2, 8, 2, 2}, 34);
  auto row = test::to_vec(test::random_leaf({6}, 35));
  std::vector<double> ctx;
  for (int i = 0; i < 2 * 5; ++i) ctx.insert(ctx.end(), row.begin(), row.end());
  const D context = D::from({2, 5, 6}, ctx);
  const auto before = test::to_vec(net.transformer(params, "tf", x, context));
  for (auto& v : params.at("tf.cross.q.weight").mutable_data()) v *= -3.0;
  const auto after = test::to_vec(net.transformer(params, "tf", x, context));
  EXPECT_LE(testkit::max_rel_error(before, after), 1e-12);
}

TEST_F(TransformerTest, SinglePositionSelfAttentionIsIdentityWeighting) {
  auto x = test::random_leaf({2, 8, 1, 1}, 36);
  auto ctx = test::random_leaf({2, 3, 6}, 37);
  const auto before = test::to_vec(net.transformer(params, "tf", x, ctx));
  for (auto* n : {"tf.self.q.weight", "tf.self.k.weight"})
    for (auto& v : params.at(n).mutable_data()) v *= 5.0;
  EXPECT_EQ(test::to_vec(net.transformer(params, "tf", x, ctx)), before);
}

TEST_F(TransformerTest, ContextWidthMismatch) {
  auto x = test::random_leaf({1, 8, 2, 2}, 38);
  EXPECT_THROW(net.transformer(params, "tf", x, test::random_leaf({1, 3, 5}, 39)), ShapeError);
}

}  // namespace
}  // namespace lshift
