#include <gtest/gtest.h>

#include <cmath>

#include "natseg/autograd.h"
#include "natseg/gradcheck.h"
#include "natseg/objectives.h"
#include "natseg/rng.h"
#include "oracles.h"

using namespace natseg;

namespace {

Tensor vec(std::vector<Real> v) {
  const int n = static_cast<int>(v.size());
  return Tensor::from_data(Shape{1, 1, 1, n}, std::move(v));
}

Tensor random_mask(Shape s, std::uint64_t seed, double p = 0.3) {
  auto t = Tensor::create(s, fill::Uniform{seed, 0, 1});
  for (Real& v : t.mutable_data()) v = v < p ? 1 : 0;
  return t;
}

}  // namespace

TEST(Bce, Examples) {
  auto y = vec({1, 0, 1, 0});
  EXPECT_LE(bce_loss(vec({1, 0, 1, 0}), y).item(), -std::log(1 - 1e-7) + 1e-9);
  EXPECT_GE(bce_loss(vec({1, 0, 1, 0}), y).item(), 0);
  EXPECT_NEAR(bce_loss(vec({0.5f, 0.5f, 0.5f, 0.5f}), y).item(), std::log(2.0), 1e-6);
  EXPECT_THROW(bce_loss(vec({0.5f}), y), ShapeError);
}

TEST(Bce, MatchesExtendedPrecisionOracle) {
  auto p = Tensor::create(Shape{2, 1, 8, 8}, fill::Uniform{1, 0.01, 0.99});
  auto y = random_mask(Shape{2, 1, 8, 8}, 2);
  long double acc = 0;
  for (std::size_t i = 0; i < p.data().size(); ++i) {
    const long double pi = p.data()[i], yi = y.data()[i];
    acc -= yi * std::log(pi) + (1 - yi) * std::log(1 - pi);
  }
  EXPECT_NEAR(bce_loss(p, y).item(), double(acc / p.numel()), 1e-6);
}

TEST(SoftIou, Examples) {
  auto ones = Tensor::create(Shape{1, 1, 4, 4}, fill::Ones{});
  EXPECT_LE(soft_iou_loss(ones, ones).item(), 1.0 / 17.0);
  EXPECT_NEAR(soft_iou_loss(ones, ones).item(), 0.0, 1e-6);
  EXPECT_NEAR(soft_iou_loss(vec({1, 1, 0, 0}), vec({1, 0, 1, 0}), 0.0).item(), 2.0 / 3.0, 1e-6);
  auto p = Tensor::create(Shape{1, 1, 6, 6}, fill::Uniform{3, 0, 1});
  auto y = random_mask(Shape{1, 1, 6, 6}, 4, 0.5);
  double i = 0, sp = 0, sy = 0;
  for (std::size_t k = 0; k < p.data().size(); ++k) {
    i += double(p.data()[k]) * y.data()[k];
    sp += p.data()[k];
    sy += y.data()[k];
  }
  const double l = soft_iou_loss(p, y).item();
  EXPECT_NEAR(l, 1 - (i + 1) / (sp + sy - i + 1), 1e-6);
  EXPECT_GE(l, 0);
  EXPECT_LE(l, 1);
}

TEST(SoftIou, MonotoneInPositivePixels) {
  auto p = Tensor::create(Shape{1, 1, 5, 5}, fill::Uniform{5, 0, 0.9});
  auto y = random_mask(Shape{1, 1, 5, 5}, 6, 0.5);
  double prev = soft_iou_loss(p, y).item();
  for (std::size_t k = 0; k < p.data().size(); ++k) {
    if (y.data()[k] < 0.5) continue;
    p.mutable_data()[k] += Real(0.05);
    const double cur = soft_iou_loss(p, y).item();
    EXPECT_LE(cur, prev + 1e-7);
    prev = cur;
  }
}

TEST(Losses, GradCheckAndTargetIsConstant) {
  auto p = Tensor::create(Shape{1, 1, 4, 4}, fill::Uniform{7, 0.1, 0.9}, true);
  auto y = random_mask(Shape{1, 1, 4, 4}, 8, 0.5);
  GradCheckOptions opts;
  opts.step = kGradStep / 10;
  for (LossKind kind : {LossKind::kBce, LossKind::kIou}) {
    const auto r = grad_check([&] { return compute_loss(kind, p, y); }, {{"pred", p}}, opts);
    EXPECT_TRUE(r.passed) << loss_name(kind) << "\n" << r.render();
  }
  // Gradients flow only into pred, even when the target asks for them.
  y.set_requires_grad(true);
  Tape tape;
  TapeScope scope(tape);
  tape.backward(soft_iou_loss(p, y));
  EXPECT_FALSE(y.has_grad());
}

TEST(Confusion, Examples) {
  auto y = random_mask(Shape{1, 1, 6, 6}, 9);
  auto c = confusion(y.data(), y.data());
  EXPECT_EQ(c.fp, 0);
  EXPECT_EQ(c.fn, 0);
  auto low = Tensor::create(Shape{1, 1, 3, 3}, fill::Constant{0.4f});
  auto ones = Tensor::create(Shape{1, 1, 3, 3}, fill::Ones{});
  auto c2 = confusion(low.data(), ones.data(), 0.5);
  EXPECT_EQ(c2.tp, 0);
  EXPECT_EQ(c2.fn, 9);

  auto p = Tensor::create(Shape{1, 1, 9, 9}, fill::Uniform{10, 0, 1});
  auto yy = random_mask(Shape{1, 1, 9, 9}, 9);
  ConfusionCounts loop2;
  for (std::size_t i = 0; i < p.data().size(); ++i) {
    const bool a = p.data()[i] >= 0.3f, b = yy.data()[i] >= 0.5f;
    loop2.tp += a && b;
    loop2.fp += a && !b;
    loop2.fn += !a && b;
    loop2.tn += !a && !b;
  }
  EXPECT_EQ(confusion(p.data(), yy.data(), 0.3), loop2);
  EXPECT_EQ(loop2.total(), 81);
}

TEST(Confusion, AdditiveOverTiles) {
  auto p = Tensor::create(Shape{1, 1, 10, 10}, fill::Uniform{11, 0, 1});
  auto y = random_mask(Shape{1, 1, 10, 10}, 12);
  const auto whole = confusion(p.data(), y.data());
  ConfusionCounts parts;
  for (std::size_t off = 0; off < 100; off += 25) {
    parts += confusion(p.data().subspan(off, 25), y.data().subspan(off, 25));
  }
  EXPECT_EQ(whole, parts);
}

TEST(PrfDice, Examples) {
  ConfusionCounts c{2, 1, 1, 10};
  std::vector<Real> empty;
  auto r = prf_dice(c, empty, empty);
  EXPECT_DOUBLE_EQ(r.precision, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(r.recall, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(r.f1, 2.0 / 3.0);
  auto z = prf_dice(ConfusionCounts{0, 0, 3, 5}, empty, empty);
  EXPECT_EQ(z.precision, 0.0);
  EXPECT_TRUE(z.precision_undefined);
  EXPECT_FALSE(z.recall_undefined);
}

TEST(PrfDice, ThresholdedDiceEqualsF1) {
  Rng rng(13);
  for (int t = 0; t < 200; ++t) {
    auto p = Tensor::create(Shape{1, 1, 8, 8}, fill::Uniform{rng.next_u64(), 0, 1});
    auto y = random_mask(Shape{1, 1, 8, 8}, rng.next_u64(), rng.uniform());
    auto r = prf_dice(confusion(p.data(), y.data()), p.data(), y.data());
    std::int64_t inter = 0, a = 0, b = 0;
    for (std::size_t i = 0; i < p.data().size(); ++i) {
      const bool pa = p.data()[i] >= 0.5f, yb = y.data()[i] >= 0.5f;
      inter += pa && yb;
      a += pa;
      b += yb;
    }
    const double dice = a + b == 0 ? 0.0 : 2.0 * double(inter) / double(a + b);
    EXPECT_EQ(r.f1, dice);
    if (!r.precision_undefined && !r.recall_undefined && r.precision + r.recall > 0) {
      EXPECT_NEAR(r.f1, 2 * r.precision * r.recall / (r.precision + r.recall), 1e-12);
    }
  }
}

TEST(PrfDice, SoftDice) {
  std::vector<Real> p{0.5f, 0.5f, 0.0f}, y{1, 0, 0};
  bool undefined = true;
  EXPECT_DOUBLE_EQ(soft_dice(p, y, &undefined), 2 * 0.5 / 2.0);
  EXPECT_FALSE(undefined);
  std::vector<Real> z{0, 0};
  EXPECT_EQ(soft_dice(z, z, &undefined), 0.0);
  EXPECT_TRUE(undefined);
}

TEST(RocAuc, Examples) {
  EXPECT_EQ(roc_auc(std::vector<Real>{0.1f, 0.2f, 0.8f, 0.9f}, std::vector<Real>{0, 0, 1, 1}), 1.0);
  EXPECT_EQ(roc_auc(std::vector<Real>{0.3f, 0.3f, 0.3f, 0.3f}, std::vector<Real>{0, 1, 0, 1}), 0.5);
  const std::vector<Real> s{0.1f, 0.4f, 0.35f, 0.8f}, l{0, 0, 1, 1};
  EXPECT_DOUBLE_EQ(roc_auc(s, l), oracle::auc_pairs(s, l));
  EXPECT_DOUBLE_EQ(roc_auc(s, l), 0.75);
  EXPECT_THROW(roc_auc(std::vector<Real>{0.1f, 0.2f}, std::vector<Real>{1, 1}), NumericError);
}

TEST(RocAuc, BruteForceAndMonotoneInvariance) {
  Rng rng(17);
  for (int t = 0; t < 50; ++t) {
    const int n = 2 + static_cast<int>(rng.below(199));
    std::vector<Real> s(n), l(n), s2(n);
    for (int i = 0; i < n; ++i) {
      s[i] = Real(std::round(rng.uniform() * 20) / 20);  // coarse grid forces ties
      l[i] = rng.uniform() < 0.4 ? 1 : 0;
      s2[i] = Real(std::exp(3 * s[i]));
    }
    l[0] = 1;
    l[1] = 0;
    EXPECT_NEAR(roc_auc(s, l), oracle::auc_pairs(s, l), 1e-9);
    EXPECT_EQ(roc_auc(s, l), roc_auc(s2, l));
  }
}

TEST(MetricsReport, CsvAndBlock) {
  MetricsReport r;
  r.f1 = 0.6582;
  r.precision = 0.7;
  r.recall = 0.62;
  r.dice_soft = 0.5113;
  r.auc = 0.97;
  EXPECT_EQ(MetricsReport::csv_header(), "threshold,precision,recall,f1,dice_hard,dice_soft,iou,auc");
  const std::string block = r.render_block();
  EXPECT_NE(block.find("65.82"), std::string::npos);
  EXPECT_NE(block.find("0.5113"), std::string::npos);
  EXPECT_NE(block.find("F-1x100"), std::string::npos);
}
