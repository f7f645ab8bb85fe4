#ifndef NATSEG_GRADCHECK_H_
#define NATSEG_GRADCHECK_H_

#include <cstdint>
#include <span>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "natseg/nn.h"
#include "natseg/tensor.h"

namespace natseg {

// Tracks ReLU gates on this thread while alive. A recording monitor stores
// the gate of every element (pre-activation > 0) in call order. A replaying
// monitor hands those gates back to relu, so perturbed evaluations follow the
// base activation pattern and the objective stays smooth in the parameters.
// Elements whose base pre-activation lies within `margin` of zero are kinks;
// if a replayed value lands on the other side of one, the evaluation is
// marked as crossing a kink.
class KinkMonitor {
 public:
  // Recording monitor.
  explicit KinkMonitor(double margin);
  // Replays the gates captured by `recorded`.
  explicit KinkMonitor(const KinkMonitor* recorded);
  ~KinkMonitor();
  KinkMonitor(const KinkMonitor&) = delete;
  KinkMonitor& operator=(const KinkMonitor&) = delete;

  // Called by relu. Returns the gates to apply, or nullptr when recording.
  const std::uint8_t* observe(std::span<const Real> pre_activation);
  bool crossed_kink() const { return crossed_; }
  // The replayed graph did not match the recording call for call.
  bool mismatched() const { return mismatched_; }

  static KinkMonitor* active();

 private:
  KinkMonitor* previous_;
  const KinkMonitor* recorded_ = nullptr;
  double margin_;
  // Per relu call: bit 0 gate, bit 1 base value within margin of zero.
  std::vector<std::vector<std::uint8_t>> calls_;
  std::size_t cursor_ = 0;
  bool crossed_ = false;
  bool mismatched_ = false;
};

// Default tolerances per build precision.
inline constexpr double kGradTolerance = kRealBytes == 4 ? 1e-3 : 1e-5;
inline constexpr double kGradStep = kRealBytes == 4 ? 1e-2 : 1e-4;

struct GradCheckOptions {
  double step = kGradStep;
  // Pre-activations closer than this to zero count as ReLU kinks.
  double kink_margin = 1e-6;
  double tolerance = kGradTolerance;
  // Floor of the relative-error denominator. The effective floor is also
  // raised to the rounding resolution of the central difference divided by
  // the tolerance; below that resolution a difference of two Real objectives
  // says nothing about the gradient. The resolution is the larger of
  //   noise_ulps * eps(Real) * (|f+| + |f-|) / (2 * step)
  //   noise_sigmas * sqrt(2) * sigma_f / (2 * step)
  // where sigma_f is the rounding noise of the objective, measured once per
  // check from high-order differences of f along a random direction with
  // coordinate steps of noise_probe_step.
  double denom_floor = 1e-3;
  double noise_ulps = 8.0;
  double noise_sigmas = 6.0;
  double noise_probe_step = kRealBytes == 4 ? 1e-4 : 1e-7;
  // Coordinates checked per parameter tensor; 0 checks all of them.
  int samples_per_param = 0;
  std::uint64_t seed = 0;

  // End-to-end model checks. Small weights feeding batch norm over a few
  // pixels make the objective sharply curved, so the step is smaller than
  // for unit-scale primitives, and two coordinates per tensor are sampled.
  static GradCheckOptions model_scope(std::uint64_t seed = 0);
};

struct CoordinateCheck {
  std::string param;
  std::int64_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double error = 0.0;
  bool excluded = false;  // perturbation crosses a ReLU kink
  std::string failure;    // evaluation error, if any
};

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::vector<std::pair<std::string, double>> per_parameter_errors;
  std::vector<CoordinateCheck> coordinates;
  int checked = 0;
  int excluded = 0;
  double objective_noise = 0.0;  // measured sigma_f
  bool passed = false;

  std::string render() const;
};

// Relative error |a - n| / max(|a| + |n|, floor).
double relative_error(double analytic, double numeric, double floor);

// `f` builds a graph with the currently active tape and returns a scalar.
// Analytic gradients come from one taped evaluation; numeric ones from
// central differences (f(p + h) - f(p - h)) / 2h per sampled coordinate,
// evaluated with every ReLU gate held at its base-point value. Holding the
// gates removes the error of perturbations that move some distant unit
// across zero, which in a large network happens for almost every coordinate;
// backprop differentiates exactly this gated function. A coordinate is
// excluded when its perturbation moves an element that sat within
// kink_margin of zero, where no derivative exists.
using ScalarFn = std::function<Tensor()>;
GradCheckReport grad_check(const ScalarFn& f, const ParamList& params,
                           const GradCheckOptions& options = {});

}  // namespace natseg

#endif  // NATSEG_GRADCHECK_H_
