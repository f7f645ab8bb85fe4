#ifndef NATSEG_OBJECTIVES_H_
#define NATSEG_OBJECTIVES_H_

#include <cstdint>
#include <span>
#include <string>

#include "natseg/tensor.h"

namespace natseg {

inline constexpr double kProbClamp = 1e-7;
inline constexpr double kIouSmoothing = 1.0;

enum class LossKind { kBce, kIou };
std::string loss_name(LossKind kind);
LossKind parse_loss(const std::string& name);

// Mean binary cross-entropy with p clamped to [1e-7, 1 - 1e-7]. The gradient
// is taken at the clamped value (it does not vanish for saturated
// predictions). `target` is treated as a constant.
Tensor bce_loss(const Tensor& pred, const Tensor& target);

// Mean BCE of sigmoid(logits), evaluated as max(z,0) - z*y + log1p(exp(-|z|)).
// Equal to bce_loss(sigmoid(z), y) away from the clamp, but keeps full
// precision when the probability rounds to 0 or 1 in Real.
Tensor bce_with_logits_loss(const Tensor& logits, const Tensor& target);

// 1 - (sum p*y + s) / (sum p + sum y - sum p*y + s). Differentiable w.r.t.
// pred only.
Tensor soft_iou_loss(const Tensor& pred, const Tensor& target,
                     double smoothing = kIouSmoothing);

Tensor compute_loss(LossKind kind, const Tensor& pred, const Tensor& target);
// Same objectives taking pre-sigmoid scores; BCE goes through the stable form.
Tensor compute_loss_from_logits(LossKind kind, const Tensor& logits, const Tensor& target);

struct ConfusionCounts {
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  std::int64_t fn = 0;
  std::int64_t tn = 0;

  std::int64_t total() const { return tp + fp + fn + tn; }
  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    tn += o.tn;
    return *this;
  }
  friend ConfusionCounts operator+(ConfusionCounts a, const ConfusionCounts& b) {
    return a += b;
  }
  bool operator==(const ConfusionCounts&) const = default;
};

// A pixel is predicted positive iff pred >= threshold; target positive iff
// target >= 0.5.
ConfusionCounts confusion(std::span<const Real> pred, std::span<const Real> target,
                          double threshold = 0.5);

struct MetricsReport {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double dice_hard = 0.0;  // on thresholded masks; identical to f1
  double dice_soft = 0.0;  // 2 sum(p*y) / (sum p + sum y) on probabilities
  double iou = 0.0;        // thresholded
  double auc = 0.0;
  double threshold = 0.5;
  bool precision_undefined = false;
  bool recall_undefined = false;
  bool f1_undefined = false;
  bool dice_undefined = false;
  bool auc_undefined = false;

  static std::string csv_header();
  std::string csv_row() const;
  // F-1 x100, Precision x100, Recall x100, Dice (soft), plus AUC.
  std::string render_block() const;
};

// Precision/recall/F1/thresholded IoU from counts; soft Dice from the raw
// probabilities. Zero denominators yield 0 and set the matching flag.
MetricsReport prf_dice(const ConfusionCounts& c, std::span<const Real> pred,
                       std::span<const Real> target);

// Soft Dice 2 sum(p*y) / (sum p + sum y). Sets `undefined` on 0/0.
double soft_dice(std::span<const Real> pred, std::span<const Real> target,
                 bool* undefined = nullptr);

// Area under the ROC curve via the Mann-Whitney rank statistic; tied scores
// count 1/2. Throws NumericError when target holds a single class.
double roc_auc(std::span<const Real> pred, std::span<const Real> target);

}  // namespace natseg

#endif  // NATSEG_OBJECTIVES_H_
