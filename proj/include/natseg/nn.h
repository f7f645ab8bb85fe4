#ifndef NATSEG_NN_H_
#define NATSEG_NN_H_

#include <cmath>
#include <string>
#include <vector>

#include "natseg/tensor.h"

namespace natseg {

// A learnable tensor and its dotted name, e.g. "e1.conv1.pointwise.weight".
struct NamedParam {
  std::string name;
  Tensor tensor;
};
using ParamList = std::vector<NamedParam>;

// Non-learnable state that still belongs in a checkpoint (BN running stats).
struct NamedBuffer {
  std::string name;
  std::vector<Real>* values;
};
using BufferList = std::vector<NamedBuffer>;

struct Conv2dParams {
  Tensor weight;  // (c_out, c_in / groups, k, k)
  Tensor bias;    // (1, c_out, 1, 1), or undefined for a bias-free conv
  int stride = 1;
  int padding = 0;
  int groups = 1;

  int c_out() const { return weight.shape().n; }
  int c_in() const { return weight.shape().c * groups; }
  int kernel() const { return weight.shape().h; }

  // He-normal weights (fan_in = k*k*c_in/groups), zero bias. Padding is
  // k/2 so stride-1 convs keep the spatial size.
  static Conv2dParams make(int c_in, int c_out, int k, int stride, int groups,
                           bool with_bias, std::uint64_t seed);

  std::int64_t param_count() const;
  void collect(ParamList& out, const std::string& prefix) const;
};

// out = conv(x) with zero padding. Backward covers x, weight and bias.
Tensor conv2d(const Tensor& x, const Conv2dParams& p);

// 1x1, stride 1, ungrouped.
Tensor pointwise_conv(const Tensor& x, const Conv2dParams& p);

enum class NormMode { kTrain, kEval };

struct BatchNormState {
  Tensor gamma;  // (1, c, 1, 1)
  Tensor beta;   // (1, c, 1, 1)
  std::vector<Real> running_mean;
  std::vector<Real> running_var;
  Real momentum = Real(0.1);
  Real epsilon = Real(1e-5);
  NormMode mode = NormMode::kTrain;

  static BatchNormState make(int channels);
  int channels() const { return gamma.shape().c; }
  std::int64_t param_count() const { return 2 * static_cast<std::int64_t>(channels()); }
  void collect(ParamList& out, const std::string& prefix) const;
  void collect_buffers(BufferList& out, const std::string& prefix);
};

// Train mode normalises with batch statistics and updates the running
// buffers (new = (1 - m) * old + m * batch, same biased batch variance
// that normalised the input);
// eval mode uses the running buffers only.
Tensor batch_norm(const Tensor& x, BatchNormState& s);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);

// Softmax over the last (w) axis of every (n, c, h) row.
Tensor softmax_lastdim(const Tensor& x);

// Nearest-neighbour x2: every pixel becomes a 2x2 block.
Tensor upsample_nearest2x(const Tensor& x);

// Scalar sigmoid with a branch per sign so exp never overflows.
inline Real stable_sigmoid(Real x) {
  if (x >= 0) {
    const Real z = std::exp(-x);
    return Real{1} / (Real{1} + z);
  }
  const Real z = std::exp(x);
  return z / (Real{1} + z);
}
}  // namespace natseg

#endif  // NATSEG_NN_H_
