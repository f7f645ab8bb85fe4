#include <gtest/gtest.h>

#include <cmath>

#include "natseg/autograd.h"
#include "natseg/gradcheck.h"
#include "natseg/kernels.h"
#include "natseg/nn.h"
#include "natseg/ops.h"
#include "oracles.h"

using namespace natseg;

namespace {

Conv2dParams conv_with(Tensor weight, Tensor bias, int stride, int pad, int groups) {
  Conv2dParams p;
  p.weight = std::move(weight);
  p.bias = std::move(bias);
  p.stride = stride;
  p.padding = pad;
  p.groups = groups;
  return p;
}

class ConvAlgoScope {
 public:
  explicit ConvAlgoScope(kernels::ConvAlgorithm a) : prev_(kernels::conv_algorithm()) {
    kernels::set_conv_algorithm(a);
  }
  ~ConvAlgoScope() { kernels::set_conv_algorithm(prev_); }

 private:
  kernels::ConvAlgorithm prev_;
};

const kernels::ConvAlgorithm kAllAlgos[] = {kernels::ConvAlgorithm::kReference,
                                            kernels::ConvAlgorithm::kDirect,
                                            kernels::ConvAlgorithm::kIm2col};

}  // namespace

TEST(Conv2d, OnesKernelUnderZeroPadding) {
  auto x = Tensor::create(Shape{1, 1, 3, 3}, fill::Ones{});
  auto p = conv_with(Tensor::create(Shape{1, 1, 3, 3}, fill::Ones{}), Tensor(), 1, 1, 1);
  for (auto algo : kAllAlgos) {
    ConvAlgoScope scope(algo);
    auto y = conv2d(x, p);
    EXPECT_EQ(y.at(0, 0, 1, 1), 9);
    EXPECT_EQ(y.at(0, 0, 0, 0), 4);
    EXPECT_EQ(y.at(0, 0, 0, 1), 6);
  }
}

TEST(Conv2d, IdentityKernel) {
  auto x = oracle::random_tensor(Shape{2, 1, 5, 4}, 3);
  auto w = Tensor::create(Shape{1, 1, 3, 3});
  w.mutable_data()[4] = 1;
  auto p = conv_with(w, Tensor(), 1, 1, 1);
  for (auto algo : kAllAlgos) {
    ConvAlgoScope scope(algo);
    auto y = conv2d(x, p);
    EXPECT_TRUE(std::equal(y.data().begin(), y.data().end(), x.data().begin()));
  }
}

TEST(Conv2d, GroupedStridedMatchesNaiveOracle) {
  auto x = oracle::random_tensor(Shape{1, 4, 9, 9}, 7);
  auto p = Conv2dParams::make(4, 6, 3, 2, 2, true, 8);
  for (Real& b : p.bias.mutable_data()) b = Real(0.3);
  const auto expect = oracle::conv2d(x, p.weight, &p.bias, 2, 1, 2);
  for (auto algo : kAllAlgos) {
    ConvAlgoScope scope(algo);
    auto y = conv2d(x, p);
    EXPECT_EQ(y.shape(), (Shape{1, 6, 5, 5}));
    EXPECT_LE(oracle::max_abs_diff(y.data(), expect), 1e-5);
  }
}

TEST(Conv2d, OutputShapeSweep) {
  for (int h = 3; h <= 16; ++h)
    for (int k : {1, 3})
      for (int pad : {0, 1})
        for (int stride : {1, 2}) {
          auto x = oracle::random_tensor(Shape{1, 2, h, h + 1}, h);
          auto p = conv_with(oracle::random_tensor(Shape{3, 2, k, k}, 99), Tensor(), stride, pad, 1);
          auto y = conv2d(x, p);
          EXPECT_EQ(y.shape().h, (h + 2 * pad - k) / stride + 1);
          EXPECT_EQ(y.shape().w, (h + 1 + 2 * pad - k) / stride + 1);
        }
}

TEST(Conv2d, GroupsEqualSlicedConvsExactly) {
  auto x = oracle::random_tensor(Shape{2, 6, 7, 7}, 12);
  auto p = Conv2dParams::make(6, 9, 3, 1, 3, false, 13);
  auto y = conv2d(x, p);
  std::vector<Tensor> parts;
  for (int g = 0; g < 3; ++g) {
    Tensor wg = Tensor::create(Shape{3, 2, 3, 3});
    std::copy_n(p.weight.data().begin() + g * wg.numel(), wg.numel(), wg.mutable_data().begin());
    parts.push_back(conv2d(slice_channels(x, 2 * g, 2), conv_with(wg, Tensor(), 1, 1, 1)));
  }
  auto ref = concat_channels(parts);
  EXPECT_TRUE(std::equal(y.data().begin(), y.data().end(), ref.data().begin()));
}

TEST(Conv2d, RejectsBadGeometry) {
  auto x = oracle::random_tensor(Shape{1, 4, 5, 5}, 1);
  EXPECT_THROW(conv2d(x, Conv2dParams::make(3, 3, 3, 1, 1, true, 1)), ShapeError);
  auto big = conv_with(oracle::random_tensor(Shape{1, 4, 3, 3}, 2), Tensor(), 1, 0, 1);
  EXPECT_THROW(conv2d(oracle::random_tensor(Shape{1, 4, 2, 2}, 3), big), ShapeError);
  EXPECT_THROW(Conv2dParams::make(4, 5, 3, 1, 2, true, 1), ConfigError);
}

TEST(Conv2d, BackwardAlgorithmsAgree) {
  auto x = oracle::random_tensor(Shape{2, 4, 7, 6}, 17, -1, 1, true);
  auto p = Conv2dParams::make(4, 6, 3, 2, 2, true, 18);
  auto w = oracle::random_tensor(Shape{2, 6, 4, 3}, 19);
  std::vector<std::vector<Real>> grads;
  for (auto algo : kAllAlgos) {
    ConvAlgoScope scope(algo);
    x.zero_grad();
    p.weight.zero_grad();
    p.bias.zero_grad();
    Tape tape;
    TapeScope ts(tape);
    tape.backward(sum(mul(conv2d(x, p), w)));
    std::vector<Real> g(x.grad().begin(), x.grad().end());
    g.insert(g.end(), p.weight.grad().begin(), p.weight.grad().end());
    g.insert(g.end(), p.bias.grad().begin(), p.bias.grad().end());
    grads.push_back(g);
  }
  EXPECT_LE(oracle::max_abs_diff(grads[1], grads[0]), 1e-4);
  EXPECT_LE(oracle::max_abs_diff(grads[2], grads[0]), 1e-4);
}

TEST(Conv2d, GradCheckAllAlgorithms) {
  for (auto algo : kAllAlgos) {
    ConvAlgoScope scope(algo);
    auto x = oracle::random_tensor(Shape{1, 4, 6, 6}, 21, -1, 1, true);
    auto p = Conv2dParams::make(4, 4, 3, 2, 2, true, 22);
    auto w = oracle::random_tensor(Shape{1, 4, 3, 3}, 23);
    ParamList params{{"x", x}};
    p.collect(params, "conv");
    const auto r = grad_check([&] { return sum(mul(conv2d(x, p), w)); }, params);
    EXPECT_TRUE(r.passed) << r.render();
  }
}

TEST(PointwiseConv, IdentityAndPaperShape) {
  auto x = oracle::random_tensor(Shape{1, 3, 4, 4}, 31);
  auto w = Tensor::create(Shape{3, 3, 1, 1});
  for (int i = 0; i < 3; ++i) w.mutable_data()[i * 3 + i] = 1;
  auto y = pointwise_conv(x, conv_with(w, Tensor(), 1, 0, 1));
  EXPECT_TRUE(std::equal(y.data().begin(), y.data().end(), x.data().begin()));
  NoGradScope ng;
  auto big = pointwise_conv(Tensor::create(Shape{1, 3, 384, 384}), Conv2dParams::make(3, 66, 1, 1, 1, true, 1));
  EXPECT_EQ(big.shape(), (Shape{1, 66, 384, 384}));
}

TEST(PointwiseConv, MatchesPerPixelMatvec) {
  auto x = oracle::random_tensor(Shape{2, 5, 3, 4}, 33);
  auto p = Conv2dParams::make(5, 7, 1, 1, 1, true, 34);
  for (Real& b : p.bias.mutable_data()) b = Real(-0.2);
  auto y = pointwise_conv(x, p);
  double worst = 0.0;
  for (int n = 0; n < 2; ++n)
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 4; ++c)
        for (int o = 0; o < 7; ++o) {
          double acc = p.bias.data()[o];
          for (int i = 0; i < 5; ++i) acc += double(p.weight.data()[o * 5 + i]) * x.at(n, i, r, c);
          worst = std::max(worst, std::abs(acc - y.at(n, o, r, c)));
        }
  EXPECT_LE(worst, 1e-5);
  EXPECT_THROW(pointwise_conv(x, Conv2dParams::make(5, 7, 3, 1, 1, true, 1)), ConfigError);
}

TEST(BatchNorm, ConstantInputGivesZero) {
  auto bn = BatchNormState::make(2);
  auto y = batch_norm(Tensor::create(Shape{2, 2, 3, 3}, fill::Constant{5}), bn);
  for (Real v : y.data()) EXPECT_EQ(v, 0);
}

TEST(BatchNorm, EvalFormula) {
  auto bn = BatchNormState::make(1);
  bn.mode = NormMode::kEval;
  bn.running_mean = {2};
  bn.running_var = {4};
  bn.epsilon = 0;
  bn.beta.mutable_data()[0] = 1;
  auto y = batch_norm(Tensor::create(Shape{1, 1, 1, 1}, fill::Constant{4}), bn);
  EXPECT_FLOAT_EQ(y.item(), 2.0f);
}

TEST(BatchNorm, TrainMatchesTwoPassOracleAndUpdatesBuffers) {
  auto x = oracle::random_tensor(Shape{3, 4, 5, 6}, 41, -2, 3);
  auto bn = BatchNormState::make(4);
  for (int c = 0; c < 4; ++c) {
    bn.gamma.mutable_data()[c] = Real(0.5 + c);
    bn.beta.mutable_data()[c] = Real(-0.25 * c);
  }
  auto y = batch_norm(x, bn);
  std::vector<double> mean, var;
  oracle::bn_stats(x, mean, var);
  double worst = 0.0;
  for (int n = 0; n < 3; ++n)
    for (int c = 0; c < 4; ++c)
      for (int r = 0; r < 5; ++r)
        for (int q = 0; q < 6; ++q) {
          const double e = (0.5 + c) * (x.at(n, c, r, q) - mean[c]) / std::sqrt(var[c] + 1e-5) - 0.25 * c;
          worst = std::max(worst, std::abs(e - y.at(n, c, r, q)));
        }
  EXPECT_LE(worst, 1e-5);
  for (int c = 0; c < 4; ++c) {
    EXPECT_NEAR(bn.running_mean[c], 0.1 * mean[c], 1e-6);
    EXPECT_NEAR(bn.running_var[c], 0.9 + 0.1 * var[c], 1e-6);
  }
}

TEST(BatchNorm, Errors) {
  auto bn = BatchNormState::make(3);
  EXPECT_THROW(batch_norm(Tensor::create(Shape{1, 2, 2, 2}), bn), ShapeError);
  EXPECT_THROW(batch_norm(Tensor::create(Shape{1, 3, 1, 1}), bn), NumericError);
}

TEST(BatchNorm, EvalIsAffine) {
  auto bn = BatchNormState::make(2);
  bn.mode = NormMode::kEval;
  bn.running_mean = {0.5f, -1.0f};
  bn.running_var = {2.0f, 0.25f};
  bn.gamma.mutable_data()[1] = 3;
  auto x = oracle::random_tensor(Shape{1, 2, 3, 3}, 51);
  const Real a = 2.5f, b = -0.75f;
  Tensor ax = Tensor::create(x.shape());
  for (std::size_t i = 0; i < ax.data().size(); ++i) ax.mutable_data()[i] = a * x.data()[i] + b;
  auto y = batch_norm(x, bn);
  auto y2 = batch_norm(ax, bn);
  for (int c = 0; c < 2; ++c) {
    const double g = bn.gamma.data()[c] / std::sqrt(bn.running_var[c] + 1e-5);
    for (int r = 0; r < 3; ++r)
      for (int q = 0; q < 3; ++q) {
        EXPECT_NEAR(y2.at(0, c, r, q), y.at(0, c, r, q) + g * ((a - 1) * x.at(0, c, r, q) + b), 1e-5);
      }
  }
}

TEST(BatchNorm, KernelMatchesReference) {
  auto x = oracle::random_tensor(Shape{4, 5, 6, 7}, 61);
  kernels::BnGeometry g{4, 5, 42};
  std::vector<Real> m1(5), v1(5), m2(5), v2(5);
  kernels::bn_batch_stats(g, x.data(), m1, v1);
  kernels::bn_batch_stats_reference(g, x.data(), m2, v2);
  EXPECT_EQ(m1, m2);
  EXPECT_EQ(v1, v2);
}

TEST(BatchNorm, GradCheckTrainAndEval) {
  for (auto mode : {NormMode::kTrain, NormMode::kEval}) {
    auto x = oracle::random_tensor(Shape{2, 3, 4, 4}, 71, -1, 1, true);
    auto bn = BatchNormState::make(3);
    bn.mode = mode;
    bn.running_var = {0.5f, 1.5f, 2.0f};
    // Pre-affine gamma/beta to make the check non-trivial.
    for (int c = 0; c < 3; ++c) bn.gamma.mutable_data()[c] = Real(0.7 + 0.3 * c);
    auto w = oracle::random_tensor(Shape{2, 3, 4, 4}, 72);
    ParamList params{{"x", x}};
    bn.collect(params, "bn");
    const auto r = grad_check([&] {
      BatchNormState copy = bn;  // running-buffer updates must not leak between evaluations
      return sum(mul(batch_norm(x, copy), w));
    }, params);
    EXPECT_TRUE(r.passed) << r.render();
  }
}

TEST(Activations, ReluAndSigmoid) {
  auto y = relu(Tensor::from_data(Shape{1, 1, 1, 3}, {-1, 0, 2}));
  EXPECT_EQ(std::vector<Real>(y.data().begin(), y.data().end()), (std::vector<Real>{0, 0, 2}));
  EXPECT_EQ(sigmoid(Tensor::create(Shape{1, 1, 1, 1})).item(), Real(0.5));
  auto s = sigmoid(Tensor::from_data(Shape{1, 1, 1, 2}, {40, -40}));
  EXPECT_TRUE(std::isfinite(s.data()[0]) && std::isfinite(s.data()[1]));
  EXPECT_NEAR(s.data()[0], 1.0, 1e-6);
  EXPECT_NEAR(s.data()[1], 0.0, 1e-6);
  EXPECT_GT(s.data()[1], 0.0f);
  const long double hp = 1.0L / (1.0L + std::exp(40.0L));
  EXPECT_NEAR(s.data()[1], double(hp), 1e-20);
}

TEST(Activations, GradCheck) {
  auto x = oracle::random_tensor(Shape{1, 2, 4, 4}, 81, -2, 2, true);
  auto w = oracle::random_tensor(Shape{1, 2, 4, 4}, 82);
  const auto r1 = grad_check([&] { return sum(mul(relu(x), w)); }, {{"x", x}});
  EXPECT_TRUE(r1.passed) << r1.render();
  const auto r2 = grad_check([&] { return sum(mul(sigmoid(x), w)); }, {{"x", x}});
  EXPECT_TRUE(r2.passed) << r2.render();
}

TEST(Softmax, UniformShiftAndOracle) {
  auto y = softmax_lastdim(Tensor::create(Shape{1, 1, 1, 9}));
  for (Real v : y.data()) EXPECT_NEAR(v, 1.0 / 9.0, 1e-7);

  auto x = oracle::random_tensor(Shape{1, 2, 3, 7}, 91, -5, 5);
  auto shifted = Tensor::create(x.shape());
  for (std::size_t i = 0; i < x.data().size(); ++i) shifted.mutable_data()[i] = x.data()[i] + Real(3.5);
  auto a = softmax_lastdim(x), b = softmax_lastdim(shifted);
  EXPECT_LE(oracle::max_abs_diff(a.data(), b.data()), 1e-6);

  for (int row = 0; row < 6; ++row) {
    long double mx = -1e30L, z = 0;
    for (int j = 0; j < 7; ++j) mx = std::max<long double>(mx, x.data()[row * 7 + j]);
    for (int j = 0; j < 7; ++j) z += std::exp((long double)x.data()[row * 7 + j] - mx);
    double total = 0;
    for (int j = 0; j < 7; ++j) {
      const long double e = std::exp((long double)x.data()[row * 7 + j] - mx) / z;
      EXPECT_NEAR(a.data()[row * 7 + j], double(e), 1e-6);
      EXPECT_GT(a.data()[row * 7 + j], 0.0f);
      total += a.data()[row * 7 + j];
    }
    EXPECT_NEAR(total, 1.0, 1e-6);
  }
}

TEST(Softmax, GradCheck) {
  auto x = oracle::random_tensor(Shape{1, 2, 2, 5}, 92, -2, 2, true);
  auto w = oracle::random_tensor(Shape{1, 2, 2, 5}, 93);
  const auto r = grad_check([&] { return sum(mul(softmax_lastdim(x), w)); }, {{"x", x}});
  EXPECT_TRUE(r.passed) << r.render();
}

TEST(Upsample, ReplicationShapeAndGradient) {
  auto x = Tensor::from_data(Shape{1, 1, 2, 2}, {1, 2, 3, 4}, true);
  Tape tape;
  TapeScope scope(tape);
  auto y = upsample_nearest2x(x);
  EXPECT_EQ(std::vector<Real>(y.data().begin(), y.data().end()),
            (std::vector<Real>{1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4}));
  tape.backward(sum(y));
  for (Real g : x.grad()) EXPECT_EQ(g, 4);
  NoGradScope ng;
  EXPECT_EQ(upsample_nearest2x(Tensor::create(Shape{1, 256, 48, 48})).shape(), (Shape{1, 256, 96, 96}));
}

TEST(Upsample, GradCheck) {
  auto x = oracle::random_tensor(Shape{1, 2, 3, 3}, 95, -1, 1, true);
  auto w = oracle::random_tensor(Shape{1, 2, 6, 6}, 96);
  const auto r = grad_check([&] { return sum(mul(upsample_nearest2x(x), w)); }, {{"x", x}});
  EXPECT_TRUE(r.passed) << r.render();
}
