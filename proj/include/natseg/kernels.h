#ifndef NATSEG_KERNELS_H_
#define NATSEG_KERNELS_H_

// Raw-buffer compute kernels. Every hot kernel has an OpenMP version and a
// serial `*_reference` twin that the tests hold it against. Parallel loops
// partition the *output* index space so that no two threads write the same
// accumulator; results are therefore independent of the thread count.

#include <span>
#include <vector>

#include "natseg/common.h"

namespace natseg::kernels {

struct ConvGeometry {
  int n = 1;
  int c_in = 1;
  int h = 1;
  int w = 1;
  int c_out = 1;
  int k = 1;
  int stride = 1;
  int pad = 0;
  int groups = 1;

  int out_h() const { return (h + 2 * pad - k) / stride + 1; }
  int out_w() const { return (w + 2 * pad - k) / stride + 1; }
  int cin_per_group() const { return c_in / groups; }
  int cout_per_group() const { return c_out / groups; }
};

enum class ConvAlgorithm { kReference, kDirect, kIm2col };

// Process-wide selection used by the differentiable conv op.
void set_conv_algorithm(ConvAlgorithm algo);
ConvAlgorithm conv_algorithm();

// x: (n, c_in, h, w); weight: (c_out, c_in/groups, k, k); bias: c_out or empty.
void conv2d_forward_reference(const ConvGeometry& g, std::span<const Real> x,
                              std::span<const Real> weight,
                              std::span<const Real> bias, std::span<Real> out);
void conv2d_forward_direct(const ConvGeometry& g, std::span<const Real> x,
                           std::span<const Real> weight,
                           std::span<const Real> bias, std::span<Real> out);
void conv2d_forward_im2col(const ConvGeometry& g, std::span<const Real> x,
                           std::span<const Real> weight,
                           std::span<const Real> bias, std::span<Real> out);

// Accumulates (+=) into dx, dweight, dbias. Any of the three may be empty to
// skip that gradient.
void conv2d_backward_reference(const ConvGeometry& g, std::span<const Real> x,
                               std::span<const Real> weight,
                               std::span<const Real> dout, std::span<Real> dx,
                               std::span<Real> dweight, std::span<Real> dbias);
void conv2d_backward_direct(const ConvGeometry& g, std::span<const Real> x,
                            std::span<const Real> weight,
                            std::span<const Real> dout, std::span<Real> dx,
                            std::span<Real> dweight, std::span<Real> dbias);
void conv2d_backward_im2col(const ConvGeometry& g, std::span<const Real> x,
                            std::span<const Real> weight,
                            std::span<const Real> dout, std::span<Real> dx,
                            std::span<Real> dweight, std::span<Real> dbias);

// Batch normalisation over (n, h, w) per channel.
struct BnGeometry {
  int n = 1;
  int c = 1;
  int plane = 1;  // h * w
};

// Computes per-channel batch mean and biased variance (two-pass).
void bn_batch_stats_reference(const BnGeometry& g, std::span<const Real> x,
                              std::span<Real> mean, std::span<Real> var);
void bn_batch_stats(const BnGeometry& g, std::span<const Real> x,
                    std::span<Real> mean, std::span<Real> var);

// y = gamma * (x - mean) * inv_std + beta.
void bn_apply(const BnGeometry& g, std::span<const Real> x,
              std::span<const Real> mean, std::span<const Real> inv_std,
              std::span<const Real> gamma, std::span<const Real> beta,
              std::span<Real> y);

// Train-mode backward (statistics depend on x). Accumulates into dx,
// dgamma, dbeta.
void bn_backward_train(const BnGeometry& g, std::span<const Real> x,
                       std::span<const Real> mean, std::span<const Real> inv_std,
                       std::span<const Real> gamma, std::span<const Real> dy,
                       std::span<Real> dx, std::span<Real> dgamma,
                       std::span<Real> dbeta);
void bn_backward_train_reference(const BnGeometry& g, std::span<const Real> x,
                                 std::span<const Real> mean,
                                 std::span<const Real> inv_std,
                                 std::span<const Real> gamma,
                                 std::span<const Real> dy, std::span<Real> dx,
                                 std::span<Real> dgamma, std::span<Real> dbeta);

// Neighbourhood attention on (n, d, h, w) projected maps. `bias` is the
// (2*window-1)^2 relative-offset table. `probs` receives the post-softmax
// weights laid out (n, h, w, window^2) for the backward pass.
struct AttentionGeometry {
  int n = 1;
  int d = 1;
  int h = 1;
  int w = 1;
  int window = 3;

  int neighbours() const { return window * window; }
  int bias_side() const { return 2 * window - 1; }
};

// First row/col of the window that serves coordinate `i` on an axis of
// length `len`: centred, then clamped to stay in range.
inline int window_start(int i, int len, int window) {
  int s = i - window / 2;
  if (s < 0) s = 0;
  if (s + window > len) s = len - window;
  return s;
}

void neighborhood_attention_forward_reference(
    const AttentionGeometry& g, std::span<const Real> q, std::span<const Real> k,
    std::span<const Real> v, std::span<const Real> bias, std::span<Real> out,
    std::span<Real> probs);
void neighborhood_attention_forward(const AttentionGeometry& g,
                                    std::span<const Real> q,
                                    std::span<const Real> k,
                                    std::span<const Real> v,
                                    std::span<const Real> bias,
                                    std::span<Real> out, std::span<Real> probs);

// Accumulates into dq, dk, dv, dbias (any may be empty).
void neighborhood_attention_backward_reference(
    const AttentionGeometry& g, std::span<const Real> q, std::span<const Real> k,
    std::span<const Real> v, std::span<const Real> probs,
    std::span<const Real> dout, std::span<Real> dq, std::span<Real> dk,
    std::span<Real> dv, std::span<Real> dbias);
void neighborhood_attention_backward(
    const AttentionGeometry& g, std::span<const Real> q, std::span<const Real> k,
    std::span<const Real> v, std::span<const Real> probs,
    std::span<const Real> dout, std::span<Real> dq, std::span<Real> dk,
    std::span<Real> dv, std::span<Real> dbias);

// Numerically stable softmax of one row, in place.
void softmax_row(std::span<Real> row);

}  // namespace natseg::kernels

#endif  // NATSEG_KERNELS_H_
