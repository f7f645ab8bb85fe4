#include <gtest/gtest.h>

#include <set>

#include "natseg/autograd.h"
#include "natseg/gradcheck.h"
#include "natseg/kernels.h"
#include "natseg/nat.h"
#include "natseg/ops.h"
#include "oracles.h"

using namespace natseg;

namespace {

NATConfig strict_config(int dim, int window) {
  NATConfig cfg;
  cfg.dim = dim;
  cfg.window = window;
  cfg.proj_out = false;
  cfg.proj_bias = false;
  return cfg;
}

void set_identity(Conv2dParams& p) {
  auto w = p.weight.mutable_data();
  std::fill(w.begin(), w.end(), Real(0));
  const int d = p.c_out();
  for (int i = 0; i < d; ++i) w[i * d + i] = 1;
}

}  // namespace

TEST(NeighborhoodIndex, InteriorAndCorner) {
  auto idx = build_neighborhood_index(5, 5, 3);
  std::set<std::pair<int, int>> centre, corner;
  for (auto nb : idx.at(2, 2)) centre.insert({nb.row, nb.col});
  for (auto nb : idx.at(0, 0)) corner.insert({nb.row, nb.col});
  std::set<std::pair<int, int>> want_centre, want_corner;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) {
      want_centre.insert({r + 1, c + 1});
      want_corner.insert({r, c});
    }
  EXPECT_EQ(centre, want_centre);
  EXPECT_EQ(corner, want_corner);
}

TEST(NeighborhoodIndex, FixedCardinalitySweep) {
  auto idx = build_neighborhood_index(7, 9, 3);
  for (int i = 0; i < 7; ++i)
    for (int j = 0; j < 9; ++j) {
      auto nbs = idx.at(i, j);
      ASSERT_EQ(nbs.size(), 9u);
      std::set<std::pair<int, int>> uniq;
      for (auto nb : nbs) {
        EXPECT_TRUE(nb.row >= 0 && nb.row < 7 && nb.col >= 0 && nb.col < 9);
        uniq.insert({nb.row, nb.col});
      }
      EXPECT_EQ(uniq.size(), 9u);
    }
  EXPECT_THROW(build_neighborhood_index(2, 5, 3), ConfigError);
}

TEST(AttentionWeights, Examples) {
  std::vector<std::vector<Real>> keys(9, std::vector<Real>(4, 0.5f));
  std::vector<Real> bias(9, 0);
  for (Real v : attention_weights(std::vector<Real>(4, 0), keys, bias)) EXPECT_EQ(v, 0);
  for (int j = 0; j < 9; ++j) keys[j][0] = Real(j + 1);
  std::vector<Real> e1{1, 0, 0, 0};
  auto logits = attention_weights(e1, keys, bias);
  for (int j = 0; j < 9; ++j) EXPECT_EQ(logits[j], Real(j + 1));

  Rng rng(3);
  std::vector<Real> q(5);
  for (auto& v : q) v = Real(rng.uniform(-1, 1));
  std::vector<std::vector<Real>> ks(9, std::vector<Real>(5));
  for (auto& k : ks)
    for (auto& v : k) v = Real(rng.uniform(-1, 1));
  for (auto& b : bias) b = Real(rng.uniform(-1, 1));
  auto got = attention_weights(q, ks, bias);
  for (int j = 0; j < 9; ++j) {
    double dot = bias[j];
    for (int d = 0; d < 5; ++d) dot += double(q[d]) * ks[j][d];
    EXPECT_NEAR(got[j], dot, 1e-6);
  }
}

TEST(NatForward, UniformSoftmaxGivesNeighbourhoodMean) {
  NATConfig cfg;
  cfg.dim = 4;
  cfg.proj_bias = false;
  auto params = NATParams::make(cfg, 1);
  for (Real& v : params.proj_q.weight.mutable_data()) v = 0;
  for (Real& v : params.bias_table.mutable_data()) v = 0;
  set_identity(params.proj_v);
  set_identity(*params.proj_out);
  auto x = oracle::random_tensor(Shape{1, 4, 5, 6}, 2);
  auto y = nat_forward(x, params, cfg);
  auto idx = build_neighborhood_index(5, 6, 3);
  for (int d = 0; d < 4; ++d)
    for (int i = 0; i < 5; ++i)
      for (int j = 0; j < 6; ++j) {
        double mean = 0;
        for (auto nb : idx.at(i, j)) mean += x.at(0, d, nb.row, nb.col);
        EXPECT_NEAR(y.at(0, d, i, j), mean / 9.0, 1e-6);
      }
}

TEST(NatForward, PaperBridgeShape) {
  NATConfig cfg;
  cfg.dim = 512;
  auto params = NATParams::make(cfg, 1);
  NoGradScope ng;
  EXPECT_EQ(nat_forward(Tensor::create(Shape{1, 512, 48, 48}), params, cfg).shape(),
            (Shape{1, 512, 48, 48}));
  EXPECT_THROW(nat_forward(Tensor::create(Shape{1, 8, 6, 6}), params, cfg), ShapeError);
}

TEST(NatForward, MatchesMaskedGlobalOracle) {
  int seed = 0;
  for (int d : {4, 8})
    for (int window : {1, 3})
      for (int h = window; h <= 6; ++h)
        for (int w = window; w <= 6; ++w) {
          auto cfg = strict_config(d, window);
          auto params = NATParams::make(cfg, ++seed);
          for (Real& v : params.bias_table.mutable_data()) v *= 20;  // make the bias matter
          auto x = oracle::random_tensor(Shape{2, d, h, w}, ++seed);
          auto y = nat_forward(x, params, cfg);
          auto q = conv2d(x, params.proj_q), k = conv2d(x, params.proj_k), v = conv2d(x, params.proj_v);
          const auto expect = oracle::masked_global_attention(q, k, v, params.bias_table, window);
          EXPECT_LE(oracle::max_abs_diff(y.data(), expect), 1e-5) << d << " " << window << " " << h << "x" << w;
        }
}

TEST(NatForward, WindowOneReturnsValues) {
  auto cfg = strict_config(4, 1);
  auto params = NATParams::make(cfg, 5);
  auto x = oracle::random_tensor(Shape{1, 4, 3, 3}, 6);
  auto y = nat_forward(x, params, cfg);
  auto v = conv2d(x, params.proj_v);
  EXPECT_TRUE(std::equal(y.data().begin(), y.data().end(), v.data().begin()));
}

TEST(NatForward, BiasShiftInvariance) {
  NATConfig cfg;
  cfg.dim = 8;
  auto params = NATParams::make(cfg, 7);
  auto x = oracle::random_tensor(Shape{1, 8, 5, 5}, 8);
  auto y = nat_forward(x, params, cfg);
  for (Real& b : params.bias_table.mutable_data()) b += Real(0.75);
  auto y2 = nat_forward(x, params, cfg);
  EXPECT_LE(oracle::max_abs_diff(y.data(), y2.data()), 1e-6);
}

TEST(NatForward, KernelMatchesReference) {
  kernels::AttentionGeometry g{2, 5, 6, 7, 3};
  const std::size_t n = 2 * 5 * 6 * 7;
  auto q = oracle::random_tensor(Shape{2, 5, 6, 7}, 1), k = oracle::random_tensor(Shape{2, 5, 6, 7}, 2),
       v = oracle::random_tensor(Shape{2, 5, 6, 7}, 3), b = oracle::random_tensor(Shape{1, 1, 5, 5}, 4),
       dout = oracle::random_tensor(Shape{2, 5, 6, 7}, 5);
  std::vector<Real> o1(n), o2(n), p1(2 * 42 * 9), p2(2 * 42 * 9);
  kernels::neighborhood_attention_forward(g, q.data(), k.data(), v.data(), b.data(), o1, p1);
  kernels::neighborhood_attention_forward_reference(g, q.data(), k.data(), v.data(), b.data(), o2, p2);
  EXPECT_EQ(o1, o2);
  EXPECT_EQ(p1, p2);
  std::vector<Real> g1(3 * n + 25, 0), g2(3 * n + 25, 0);
  auto sp = [&](std::vector<Real>& buf, std::size_t off, std::size_t len) {
    return std::span<Real>(buf).subspan(off, len);
  };
  kernels::neighborhood_attention_backward(g, q.data(), k.data(), v.data(), p1, dout.data(), sp(g1, 0, n),
                                           sp(g1, n, n), sp(g1, 2 * n, n), sp(g1, 3 * n, 25));
  kernels::neighborhood_attention_backward_reference(g, q.data(), k.data(), v.data(), p2, dout.data(),
                                                     sp(g2, 0, n), sp(g2, n, n), sp(g2, 2 * n, n),
                                                     sp(g2, 3 * n, 25));
  EXPECT_LE(oracle::max_abs_diff(g1, g2), 1e-5);
}

TEST(NatForward, GradCheck) {
  NATConfig cfg;
  cfg.dim = 4;
  auto params = NATParams::make(cfg, 11);
  // Larger projections give attention weights far from uniform.
  for (auto* p : {&params.proj_q, &params.proj_k, &params.proj_v}) {
    for (Real& v : p->weight.mutable_data()) v *= 25;
  }
  for (Real& v : params.bias_table.mutable_data()) v *= 25;
  auto x = oracle::random_tensor(Shape{1, 4, 4, 5}, 12, -1, 1, true);
  auto w = oracle::random_tensor(Shape{1, 4, 4, 5}, 13);
  ParamList list{{"x", x}};
  params.collect(list, "nat");
  const auto r = grad_check([&] { return sum(mul(nat_forward(x, params, cfg), w)); }, list);
  EXPECT_TRUE(r.passed) << r.render();
}

TEST(NatParamCount, Enumeration) {
  auto cfg = strict_config(8, 3);
  EXPECT_EQ(nat_param_count(cfg), 217);
  EXPECT_EQ(NATParams::make(cfg, 0).param_count(), 217);
  cfg.window = 1;
  EXPECT_EQ(nat_param_count(cfg) - 3 * 64, 1);
  auto big = strict_config(512, 3);
  EXPECT_EQ(nat_param_count(big), 786457);
  big.proj_bias = true;
  big.proj_out = true;
  EXPECT_EQ(nat_param_count(big), 786457 + 3 * 512 + 512 * 512 + 512);
  EXPECT_EQ(NATParams::make(big, 0).param_count(), nat_param_count(big));
}

TEST(NatConfig, Validation) {
  NATConfig cfg;
  cfg.dim = 4;
  cfg.window = 2;
  EXPECT_THROW(validate_nat_config(cfg), ConfigError);
  cfg.window = 3;
  cfg.dim = 0;
  EXPECT_THROW(validate_nat_config(cfg), ConfigError);
}
