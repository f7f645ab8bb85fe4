#include <gtest/gtest.h>

#include "natseg/autograd.h"
#include "natseg/gradcheck.h"
#include "natseg/hetconv.h"
#include "natseg/ops.h"
#include "oracles.h"

using namespace natseg;

namespace {

// Compositional oracle: three slice convs, concatenated, plus the 1x1 conv.
Tensor hetconv_oracle(const Tensor& x, const HetConvLayer& layer) {
  const int cg = layer.c_in() / kHetGroups;
  std::vector<Tensor> parts;
  for (int g = 0; g < kHetGroups; ++g) {
    parts.push_back(conv2d(slice_channels(x, g * cg, cg), layer.group(g)));
  }
  return add(concat_channels(parts), conv2d(x, layer.pointwise));
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

}  // namespace

TEST(HetConv, PaperShapeAndGroupSize) {
  auto layer = HetConvLayer::make(66, 66, 1, 1);
  EXPECT_EQ(layer.group(0).weight.shape(), (Shape{22, 22, 3, 3}));
  NoGradScope ng;
  auto y = hetconv_forward(Tensor::create(Shape{1, 66, 384, 384}), layer);
  EXPECT_EQ(y.shape(), (Shape{1, 66, 384, 384}));
}

TEST(HetConv, ZeroInputZeroBiasGivesZero) {
  auto layer = HetConvLayer::make(6, 9, 2, 3);
  auto y = hetconv_forward(Tensor::create(Shape{2, 6, 7, 7}), layer);
  EXPECT_EQ(y.shape(), (Shape{2, 9, 4, 4}));
  for (Real v : y.data()) EXPECT_EQ(v, 0);
}

TEST(HetConv, EqualsCompositionalOracleExactly) {
  auto layer = HetConvLayer::make(6, 6, 1, 5);
  for (Real& b : layer.pointwise.bias.mutable_data()) b = Real(0.125);
  auto x = oracle::random_tensor(Shape{1, 6, 7, 7}, 6);
  EXPECT_TRUE(bitwise_equal(hetconv_forward(x, layer), hetconv_oracle(x, layer)));
  auto rgb = HetConvLayer::make(3, 12, 2, 7);  // input layer: one channel per group
  auto img = oracle::random_tensor(Shape{2, 3, 8, 8}, 8);
  EXPECT_TRUE(bitwise_equal(hetconv_forward(img, rgb), hetconv_oracle(img, rgb)));
}

TEST(HetConv, LinearWithoutBias) {
  auto layer = HetConvLayer::make(6, 6, 1, 9);
  auto x = oracle::random_tensor(Shape{1, 6, 5, 5}, 10);
  auto y = oracle::random_tensor(Shape{1, 6, 5, 5}, 11);
  const Real a = 1.5f, b = -0.5f;
  auto fx = hetconv_forward(x, layer), fy = hetconv_forward(y, layer);
  auto fxy = hetconv_forward(add(scale(x, a), scale(y, b)), layer);
  for (std::size_t i = 0; i < fxy.data().size(); ++i) {
    EXPECT_NEAR(fxy.data()[i], a * fx.data()[i] + b * fy.data()[i], 1e-5);
  }
}

TEST(HetConv, ChannelDivisibility) {
  EXPECT_THROW(HetConvLayer::make(4, 6, 1, 0), ConfigError);
  EXPECT_THROW(HetConvLayer::make(6, 8, 1, 0), ConfigError);
  EXPECT_NO_THROW(HetConvLayer::make(3, 6, 1, 0));
}

TEST(HetConv, ParamCounts) {
  EXPECT_EQ(Conv2dParams::make(64, 64, 3, 1, 1, false, 0).param_count(), 36864);
  EXPECT_EQ(HetConvLayer::make(66, 66, 1, 0).weight_count(), 17424);
  EXPECT_EQ(HetConvLayer::make(66, 66, 1, 0).param_count(), 17424 + 66);
  for (int c : {1, 5, 64}) {
    EXPECT_EQ(Conv2dParams::make(c, c, 1, 1, 1, true, 0).param_count(), std::int64_t(c) * c + c);
  }
}

TEST(HetConv, GradCheck) {
  auto layer = HetConvLayer::make(6, 6, 2, 12);
  auto x = oracle::random_tensor(Shape{1, 6, 6, 6}, 13, -1, 1, true);
  auto w = oracle::random_tensor(Shape{1, 6, 3, 3}, 14);
  ParamList params{{"x", x}};
  layer.collect(params, "het");
  const auto r = grad_check([&] { return sum(mul(hetconv_forward(x, layer), w)); }, params);
  EXPECT_TRUE(r.passed) << r.render();
}

TEST(ResidualUnit, ZeroBranchIsIdentity) {
  for (auto kind : {ConvKind::kPlain, ConvKind::kHet}) {
    auto unit = ResidualUnit::make(kind, 6, 6, 1, 3);
    EXPECT_FALSE(unit.shortcut.has_value());
    ParamList params;
    unit.collect(params, "u");
    for (auto& p : params) {
      if (p.name.find("conv") != std::string::npos) {
        for (Real& v : Tensor(p.tensor).mutable_data()) v = 0;
      }
    }
    auto x = oracle::random_tensor(Shape{2, 6, 5, 5}, 4);
    auto y = residual_unit_forward(x, unit);
    EXPECT_TRUE(bitwise_equal(x, y));
  }
}

TEST(ResidualUnit, PaperE2Shape) {
  auto unit = ResidualUnit::make(ConvKind::kPlain, 64, 128, 2, 1);
  ASSERT_TRUE(unit.shortcut.has_value());
  EXPECT_EQ(unit.shortcut->conv.kernel(), 1);
  NoGradScope ng;
  unit.set_mode(NormMode::kEval);
  EXPECT_EQ(residual_unit_forward(Tensor::create(Shape{1, 64, 384, 384}), unit).shape(),
            (Shape{1, 128, 192, 192}));
}

TEST(ResidualUnit, MatchesStepByStepOracle) {
  auto unit = ResidualUnit::make(ConvKind::kHet, 6, 9, 2, 21);
  auto twin = unit;  // separate BN buffers, shared parameters
  auto x = oracle::random_tensor(Shape{2, 6, 8, 8}, 22);
  auto y = residual_unit_forward(x, unit);
  Tensor h = relu(batch_norm(x, twin.bn1));
  h = hetconv_forward(h, std::get<HetConvLayer>(twin.conv1));
  h = relu(batch_norm(h, twin.bn2));
  h = hetconv_forward(h, std::get<HetConvLayer>(twin.conv2));
  Tensor s = batch_norm(conv2d(x, twin.shortcut->conv), twin.shortcut->bn);
  EXPECT_TRUE(bitwise_equal(y, add(s, h)));
  EXPECT_EQ(unit.bn1.running_mean, twin.bn1.running_mean);
}

TEST(ResidualUnit, RejectsWrongChannels) {
  auto unit = ResidualUnit::make(ConvKind::kPlain, 4, 4, 1, 1);
  EXPECT_THROW(residual_unit_forward(Tensor::create(Shape{1, 5, 4, 4}), unit), ShapeError);
}

TEST(ResidualUnit, GradCheckBothVariants) {
  for (auto kind : {ConvKind::kPlain, ConvKind::kHet}) {
    auto unit = ResidualUnit::make(kind, 3, 6, 2, 31);
    auto x = oracle::random_tensor(Shape{2, 3, 6, 6}, 32, -1, 1, true);
    auto w = oracle::random_tensor(Shape{2, 6, 3, 3}, 33);
    ParamList params{{"x", x}};
    unit.collect(params, "u");
    GradCheckOptions opts;
    opts.samples_per_param = 12;
    const auto r = grad_check([&] {
      ResidualUnit copy = unit;
      return sum(mul(residual_unit_forward(x, copy), w));
    }, params, opts);
    EXPECT_TRUE(r.passed) << r.render();
  }
}

TEST(ResidualUnit, HetConvCheaperForEveryPaperRow) {
  // (c_in, c_out) of every 3x3 conv in the architecture table.
  const std::pair<int, int> rows[] = {{3, 66},    {66, 66},   {66, 126},  {126, 126},
                                      {126, 252}, {252, 252}, {252, 510}, {510, 510},
                                      {762, 252}, {378, 126}, {192, 66}};
  for (auto [ci, co] : rows) {
    const auto het = HetConvLayer::make(ci, co, 1, 0).param_count();
    const auto plain = Conv2dParams::make(ci, co, 3, 1, 1, true, 0).param_count();
    EXPECT_LT(het, plain) << ci << "->" << co;
  }
}
