#ifndef NATSEG_NAT_H_
#define NATSEG_NAT_H_

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "natseg/nn.h"

namespace natseg {

// Neighbourhood attention over a (n, D, h, w) feature map. Each pixel attends
// to a window x window square of neighbours (window = 3 gives 9). Border
// pixels use a window shifted inward so every pixel has the same number of
// neighbours. Single head.
struct NATConfig {
  int window = 3;
  int dim = 0;
  bool proj_out = true;
  bool proj_bias = true;
  // Adds the block input back onto its output. Off by default: the block
  // sits in series between bridge and decoder.
  bool residual = false;
};

struct NATParams {
  Conv2dParams proj_q;
  Conv2dParams proj_k;
  Conv2dParams proj_v;
  Tensor bias_table;  // (1, 1, 2*window-1, 2*window-1)
  std::optional<Conv2dParams> proj_out;

  // Projections and bias table drawn from a truncated normal, std 0.02;
  // projection biases zero.
  static NATParams make(const NATConfig& cfg, std::uint64_t seed);
  std::int64_t param_count() const;
  void collect(ParamList& out, const std::string& prefix) const;
};

void validate_nat_config(const NATConfig& cfg);

struct Neighbour {
  int row;
  int col;
};

// Neighbour coordinates per pixel, row-major over pixels; window^2 entries
// each, ordered row-major within the window.
struct NeighborhoodIndex {
  int height = 0;
  int width = 0;
  int window = 0;
  std::vector<Neighbour> entries;

  std::span<const Neighbour> at(int i, int j) const {
    const std::size_t m = static_cast<std::size_t>(window) * window;
    return std::span<const Neighbour>(entries).subspan(
        (static_cast<std::size_t>(i) * width + j) * m, m);
  }
};

NeighborhoodIndex build_neighborhood_index(int height, int width, int window);

// Raw logits q . k_j + bias_j (before scaling and softmax).
std::vector<Real> attention_weights(std::span<const Real> query,
                                    const std::vector<std::vector<Real>>& keys,
                                    std::span<const Real> bias);

// Differentiable core: softmax((q.k + B) / sqrt(D)) weighted sum of v over
// each pixel's neighbourhood. q, k, v share shape (n, D, h, w).
Tensor neighborhood_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                              const Tensor& bias_table, int window);

// Full block: projections, attention, optional output projection.
Tensor nat_forward(const Tensor& x, const NATParams& params, const NATConfig& cfg);

std::int64_t nat_param_count(const NATConfig& cfg);

}  // namespace natseg

#endif  // NATSEG_NAT_H_
