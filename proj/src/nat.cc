#include "natseg/nat.h"

#include "natseg/autograd.h"
#include "natseg/kernels.h"
#include "natseg/ops.h"
#include "natseg/rng.h"

namespace natseg {
namespace {

constexpr double kInitStd = 0.02;

Conv2dParams make_projection(int dim, bool with_bias, std::uint64_t seed) {
  Conv2dParams p;
  p.weight = Tensor::create(Shape{dim, dim, 1, 1}, fill::TruncatedNormal{seed, kInitStd}, true);
  if (with_bias) p.bias = Tensor::create(Shape{1, dim, 1, 1}, fill::Zeros{}, true);
  return p;
}

}  // namespace

void validate_nat_config(const NATConfig& cfg) {
  if (cfg.window < 1 || cfg.window % 2 == 0) {
    throw ConfigError("nat: window must be odd and >= 1, got " + std::to_string(cfg.window));
  }
  if (cfg.dim < 1) throw ConfigError("nat: dim must be >= 1");
}

NATParams NATParams::make(const NATConfig& cfg, std::uint64_t seed) {
  validate_nat_config(cfg);
  NATParams p;
  p.proj_q = make_projection(cfg.dim, cfg.proj_bias, mix_seed(seed, 21));
  p.proj_k = make_projection(cfg.dim, cfg.proj_bias, mix_seed(seed, 22));
  p.proj_v = make_projection(cfg.dim, cfg.proj_bias, mix_seed(seed, 23));
  const int side = 2 * cfg.window - 1;
  p.bias_table = Tensor::create(Shape{1, 1, side, side},
                                fill::TruncatedNormal{mix_seed(seed, 24), kInitStd}, true);
  if (cfg.proj_out) p.proj_out = make_projection(cfg.dim, cfg.proj_bias, mix_seed(seed, 25));
  return p;
}

std::int64_t NATParams::param_count() const {
  std::int64_t total = proj_q.param_count() + proj_k.param_count() +
                       proj_v.param_count() + bias_table.numel();
  if (proj_out) total += proj_out->param_count();
  return total;
}

void NATParams::collect(ParamList& out, const std::string& prefix) const {
  proj_q.collect(out, prefix + ".proj_q");
  proj_k.collect(out, prefix + ".proj_k");
  proj_v.collect(out, prefix + ".proj_v");
  out.push_back({prefix + ".bias_table", bias_table});
  if (proj_out) proj_out->collect(out, prefix + ".proj_out");
}

std::int64_t nat_param_count(const NATConfig& cfg) {
  const std::int64_t d = cfg.dim;
  const std::int64_t side = 2 * cfg.window - 1;
  std::int64_t total = 3 * d * d + side * side;
  if (cfg.proj_bias) total += 3 * d;
  if (cfg.proj_out) total += d * d + (cfg.proj_bias ? d : 0);
  return total;
}

NeighborhoodIndex build_neighborhood_index(int height, int width, int window) {
  if (window < 1 || window % 2 == 0) {
    throw ConfigError("neighbourhood: window must be odd and >= 1");
  }
  if (window > height || window > width) {
    throw ConfigError("neighbourhood: window " + std::to_string(window) +
                      " exceeds feature map " + std::to_string(height) + "x" +
                      std::to_string(width));
  }
  NeighborhoodIndex idx{height, width, window, {}};
  idx.entries.reserve(static_cast<std::size_t>(height) * width * window * window);
  for (int i = 0; i < height; ++i) {
    const int r0 = kernels::window_start(i, height, window);
    for (int j = 0; j < width; ++j) {
      const int c0 = kernels::window_start(j, width, window);
      for (int a = 0; a < window; ++a) {
        for (int b = 0; b < window; ++b) idx.entries.push_back({r0 + a, c0 + b});
      }
    }
  }
  return idx;
}

std::vector<Real> attention_weights(std::span<const Real> query,
                                    const std::vector<std::vector<Real>>& keys,
                                    std::span<const Real> bias) {
  if (keys.size() != bias.size()) {
    throw ShapeError("attention_weights: " + std::to_string(keys.size()) +
                     " keys but " + std::to_string(bias.size()) + " bias terms");
  }
  std::vector<Real> logits(keys.size());
  for (std::size_t j = 0; j < keys.size(); ++j) {
    if (keys[j].size() != query.size()) throw ShapeError("attention_weights: key width mismatch");
    Real dot = 0;
    for (std::size_t d = 0; d < query.size(); ++d) dot += query[d] * keys[j][d];
    logits[j] = dot + bias[j];
  }
  return logits;
}

Tensor neighborhood_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                              const Tensor& bias_table, int window) {
  const Shape& s = q.shape();
  if (k.shape() != s || v.shape() != s) {
    throw ShapeError("neighborhood_attention: q/k/v shapes differ");
  }
  const int side = 2 * window - 1;
  if (bias_table.numel() != static_cast<std::int64_t>(side) * side) {
    throw ShapeError("neighborhood_attention: bias table must hold " +
                     std::to_string(side * side) + " values");
  }
  if (window < 1 || window % 2 == 0 || window > s.h || window > s.w) {
    throw ConfigError("neighborhood_attention: window " + std::to_string(window) +
                      " invalid for map " + std::to_string(s.h) + "x" + std::to_string(s.w));
  }
  const kernels::AttentionGeometry g{s.n, s.c, s.h, s.w, window};
  const bool rec = should_record({&q, &k, &v, &bias_table});
  Tensor out = make_output(s, rec);
  std::vector<Real> probs(static_cast<std::size_t>(s.n) * s.h * s.w * g.neighbours());
  kernels::neighborhood_attention_forward(g, q.data(), k.data(), v.data(),
                                          bias_table.data(), out.mutable_data(), probs);
  if (rec) {
    Tensor qq = q, kk = k, vv = v, bt = bias_table;
    Tape::active()->record(
        {q, k, v, bias_table}, out,
        [g, qq, kk, vv, bt, out, probs = std::move(probs)]() mutable {
          auto grad_of = [](Tensor& t) {
            return t.requires_grad() ? t.mutable_grad() : std::span<Real>{};
          };
          kernels::neighborhood_attention_backward(g, qq.data(), kk.data(), vv.data(), probs,
                                                   out.grad(), grad_of(qq), grad_of(kk),
                                                   grad_of(vv), grad_of(bt));
        });
  }
  return out;
}

Tensor nat_forward(const Tensor& x, const NATParams& params, const NATConfig& cfg) {
  if (x.shape().c != cfg.dim) {
    throw ShapeError("nat: input has " + std::to_string(x.shape().c) +
                     " channels, block dim is " + std::to_string(cfg.dim));
  }
  Tensor q = conv2d(x, params.proj_q);
  Tensor k = conv2d(x, params.proj_k);
  Tensor v = conv2d(x, params.proj_v);
  Tensor out = neighborhood_attention(q, k, v, params.bias_table, cfg.window);
  if (params.proj_out) out = conv2d(out, *params.proj_out);
  if (cfg.residual) out = add(x, out);
  return out;
}

}  // namespace natseg
