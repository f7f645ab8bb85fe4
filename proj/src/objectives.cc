#include "natseg/objectives.h"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <vector>

#include "natseg/autograd.h"
#include "natseg/nn.h"

namespace natseg {
namespace {

void require_same(const Tensor& pred, const Tensor& target, const char* what) {
  if (pred.shape() != target.shape()) {
    throw ShapeError(std::string(what) + ": pred " + pred.shape().str() +
                     " vs target " + target.shape().str());
  }
}

double clamp_prob(double p) { return std::clamp(p, kProbClamp, 1.0 - kProbClamp); }

}  // namespace

std::string loss_name(LossKind kind) { return kind == LossKind::kBce ? "bce" : "iou"; }

LossKind parse_loss(const std::string& name) {
  if (name == "bce") return LossKind::kBce;
  if (name == "iou") return LossKind::kIou;
  throw ConfigError("unknown loss '" + name + "' (expected bce or iou)");
}

Tensor bce_loss(const Tensor& pred, const Tensor& target) {
  require_same(pred, target, "bce_loss");
  const bool rec = should_record({&pred});
  Tensor out = make_output(Shape{}, rec);
  auto p = pred.data();
  auto y = target.data();
  const double n = static_cast<double>(pred.numel());
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double pc = clamp_prob(p[i]);
    acc -= y[i] * std::log(pc) + (1.0 - y[i]) * std::log(1.0 - pc);
  }
  out.mutable_data()[0] = static_cast<Real>(acc / n);
  if (rec) {
    Tape::active()->record({pred}, out, [pred, target, out, n]() mutable {
      const double g = out.grad()[0];
      auto p = pred.data();
      auto y = target.data();
      auto dp = pred.mutable_grad();
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double pc = clamp_prob(p[i]);
        dp[i] += static_cast<Real>(g * (-y[i] / pc + (1.0 - y[i]) / (1.0 - pc)) / n);
      }
    });
  }
  return out;
}

Tensor bce_with_logits_loss(const Tensor& logits, const Tensor& target) {
  require_same(logits, target, "bce_with_logits_loss");
  const bool rec = should_record({&logits});
  Tensor out = make_output(Shape{}, rec);
  auto z = logits.data();
  auto y = target.data();
  const double n = static_cast<double>(logits.numel());
  double acc = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double zi = z[i];
    acc += std::max(zi, 0.0) - zi * y[i] + std::log1p(std::exp(-std::abs(zi)));
  }
  out.mutable_data()[0] = static_cast<Real>(acc / n);
  if (rec) {
    Tape::active()->record({logits}, out, [logits, target, out, n]() mutable {
      const double g = out.grad()[0];
      auto z = logits.data();
      auto y = target.data();
      auto dz = logits.mutable_grad();
      for (std::size_t i = 0; i < z.size(); ++i) {
        const double sig = 1.0 / (1.0 + std::exp(-static_cast<double>(z[i])));
        dz[i] += static_cast<Real>(g * (sig - y[i]) / n);
      }
    });
  }
  return out;
}

Tensor soft_iou_loss(const Tensor& pred, const Tensor& target, double smoothing) {
  require_same(pred, target, "soft_iou_loss");
  const bool rec = should_record({&pred});
  Tensor out = make_output(Shape{}, rec);
  auto p = pred.data();
  auto y = target.data();
  double inter = 0.0, sp = 0.0, sy = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    inter += static_cast<double>(p[i]) * y[i];
    sp += p[i];
    sy += y[i];
  }
  const double uni = sp + sy - inter + smoothing;
  const double num = inter + smoothing;
  out.mutable_data()[0] = static_cast<Real>(1.0 - num / uni);
  if (rec) {
    Tape::active()->record({pred}, out, [pred, target, out, uni, num]() mutable {
      const double g = out.grad()[0];
      auto y = target.data();
      auto dp = pred.mutable_grad();
      // d(num/uni)/dp_i = (y_i * uni - num * (1 - y_i)) / uni^2
      for (std::size_t i = 0; i < y.size(); ++i) {
        const double d = (y[i] * uni - num * (1.0 - y[i])) / (uni * uni);
        dp[i] += static_cast<Real>(-g * d);
      }
    });
  }
  return out;
}

Tensor compute_loss(LossKind kind, const Tensor& pred, const Tensor& target) {
  return kind == LossKind::kBce ? bce_loss(pred, target) : soft_iou_loss(pred, target);
}

Tensor compute_loss_from_logits(LossKind kind, const Tensor& logits, const Tensor& target) {
  return kind == LossKind::kBce ? bce_with_logits_loss(logits, target)
                                : soft_iou_loss(sigmoid(logits), target);
}

ConfusionCounts confusion(std::span<const Real> pred, std::span<const Real> target,
                          double threshold) {
  if (pred.size() != target.size()) throw ShapeError("confusion: size mismatch");
  ConfusionCounts c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] >= threshold;
    const bool t = target[i] >= Real(0.5);
    if (p && t) ++c.tp;
    else if (p) ++c.fp;
    else if (t) ++c.fn;
    else ++c.tn;
  }
  return c;
}

double soft_dice(std::span<const Real> pred, std::span<const Real> target, bool* undefined) {
  double inter = 0.0, sp = 0.0, sy = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    inter += static_cast<double>(pred[i]) * target[i];
    sp += pred[i];
    sy += target[i];
  }
  const double denom = sp + sy;
  if (undefined) *undefined = denom == 0.0;
  return denom == 0.0 ? 0.0 : 2.0 * inter / denom;
}

MetricsReport prf_dice(const ConfusionCounts& c, std::span<const Real> pred,
                       std::span<const Real> target) {
  MetricsReport r;
  const auto ratio = [](double num, double den, bool& undefined) {
    undefined = den == 0.0;
    return undefined ? 0.0 : num / den;
  };
  const double tp = static_cast<double>(c.tp);
  r.precision = ratio(tp, tp + c.fp, r.precision_undefined);
  r.recall = ratio(tp, tp + c.fn, r.recall_undefined);
  r.f1 = ratio(2.0 * tp, 2.0 * tp + c.fp + c.fn, r.f1_undefined);
  bool unused = false;
  r.dice_hard = r.f1;
  r.iou = ratio(tp, tp + c.fp + c.fn, unused);
  r.dice_soft = soft_dice(pred, target, &r.dice_undefined);
  return r;
}

double roc_auc(std::span<const Real> pred, std::span<const Real> target) {
  if (pred.size() != target.size()) throw ShapeError("roc_auc: size mismatch");
  std::vector<std::size_t> order(pred.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return pred[a] < pred[b]; });
  // Sum of (1-based, tie-averaged) ranks of positives.
  double rank_sum = 0.0;
  std::int64_t positives = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && pred[order[j]] == pred[order[i]]) ++j;
    const double avg_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
    for (std::size_t k = i; k < j; ++k) {
      if (target[order[k]] >= Real(0.5)) {
        rank_sum += avg_rank;
        ++positives;
      }
    }
    i = j;
  }
  const std::int64_t negatives = static_cast<std::int64_t>(pred.size()) - positives;
  if (positives == 0 || negatives == 0) {
    throw NumericError("roc_auc: target contains a single class");
  }
  const double p = static_cast<double>(positives);
  const double u = rank_sum - p * (p + 1.0) / 2.0;
  return u / (p * static_cast<double>(negatives));
}

std::string MetricsReport::csv_header() {
  return "threshold,precision,recall,f1,dice_hard,dice_soft,iou,auc";
}

std::string MetricsReport::csv_row() const {
  std::ostringstream os;
  os << std::setprecision(6) << std::fixed << threshold << "," << precision << "," << recall
     << "," << f1 << "," << dice_hard << "," << dice_soft << "," << iou << ",";
  if (auc_undefined) os << "nan";
  else os << auc;
  return os.str();
}

std::string MetricsReport::render_block() const {
  std::ostringstream os;
  os << std::fixed;
  os << "F-1x100    Precisionx100    Recallx100    Dice coefficient    AUC\n";
  os << std::setprecision(2) << std::setw(7) << f1 * 100.0 << "    " << std::setw(13)
     << precision * 100.0 << "    " << std::setw(10) << recall * 100.0 << "    "
     << std::setprecision(4) << std::setw(16) << dice_soft << "    ";
  if (auc_undefined) os << "n/a";
  else os << std::setprecision(4) << auc;
  os << "\n";
  if (precision_undefined || recall_undefined || dice_undefined) {
    os << "(undefined ratios reported as 0:";
    if (precision_undefined) os << " precision";
    if (recall_undefined) os << " recall";
    if (dice_undefined) os << " dice";
    os << ")\n";
  }
  return os.str();
}

}  // namespace natseg
