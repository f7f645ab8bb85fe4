#include "natseg/nn.h"

#include <cmath>

#include "natseg/autograd.h"
#include "natseg/gradcheck.h"
#include "natseg/kernels.h"

namespace natseg {
namespace {

kernels::ConvGeometry geometry_for(const Tensor& x, const Conv2dParams& p) {
  const Shape& s = x.shape();
  const Shape& ws = p.weight.shape();
  if (p.groups < 1 || p.stride < 1 || p.padding < 0) {
    throw ConfigError("conv2d: groups and stride must be >= 1, padding >= 0");
  }
  if (ws.h != ws.w) throw ShapeError("conv2d: kernel must be square, got " + ws.str());
  if (ws.n % p.groups != 0) {
    throw ShapeError("conv2d: c_out=" + std::to_string(ws.n) +
                     " not divisible by groups=" + std::to_string(p.groups));
  }
  if (s.c != ws.c * p.groups) {
    throw ShapeError("conv2d: input has " + std::to_string(s.c) +
                     " channels, weight expects " + std::to_string(ws.c * p.groups) +
                     " (" + std::to_string(ws.c) + " x " + std::to_string(p.groups) +
                     " groups)");
  }
  if (p.bias.defined() && p.bias.numel() != ws.n) {
    throw ShapeError("conv2d: bias has " + std::to_string(p.bias.numel()) +
                     " values for " + std::to_string(ws.n) + " output channels");
  }
  kernels::ConvGeometry g{s.n, s.c, s.h, s.w, ws.n, ws.h, p.stride, p.padding, p.groups};
  if (s.h + 2 * p.padding < ws.h || s.w + 2 * p.padding < ws.w) {
    throw ShapeError("conv2d: input " + s.str() + " too small for kernel " +
                     std::to_string(ws.h) + " with padding " + std::to_string(p.padding));
  }
  return g;
}

}  // namespace

Conv2dParams Conv2dParams::make(int c_in, int c_out, int k, int stride,
                                int groups, bool with_bias, std::uint64_t seed) {
  if (groups < 1 || c_in % groups != 0 || c_out % groups != 0) {
    throw ConfigError("conv: c_in=" + std::to_string(c_in) + " and c_out=" +
                      std::to_string(c_out) + " must be divisible by groups=" +
                      std::to_string(groups));
  }
  if (k % 2 == 0) throw ConfigError("conv: kernel size must be odd");
  Conv2dParams p;
  const double fan_in = static_cast<double>(k) * k * (c_in / groups);
  p.weight = Tensor::create(Shape{c_out, c_in / groups, k, k},
                            fill::HeNormal{seed, fan_in}, true);
  if (with_bias) p.bias = Tensor::create(Shape{1, c_out, 1, 1}, fill::Zeros{}, true);
  p.stride = stride;
  p.padding = k / 2;
  p.groups = groups;
  return p;
}

std::int64_t Conv2dParams::param_count() const {
  return weight.numel() + (bias.defined() ? bias.numel() : 0);
}

void Conv2dParams::collect(ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + ".weight", weight});
  if (bias.defined()) out.push_back({prefix + ".bias", bias});
}

Tensor conv2d(const Tensor& x, const Conv2dParams& p) {
  const kernels::ConvGeometry g = geometry_for(x, p);
  if (g.out_h() < 1 || g.out_w() < 1) throw ShapeError("conv2d: empty output");
  const bool rec = should_record({&x, &p.weight, &p.bias});
  Tensor out = make_output(Shape{g.n, g.c_out, g.out_h(), g.out_w()}, rec);
  const std::span<const Real> bias =
      p.bias.defined() ? p.bias.data() : std::span<const Real>{};
  switch (kernels::conv_algorithm()) {
    case kernels::ConvAlgorithm::kReference:
      kernels::conv2d_forward_reference(g, x.data(), p.weight.data(), bias, out.mutable_data());
      break;
    case kernels::ConvAlgorithm::kDirect:
      kernels::conv2d_forward_direct(g, x.data(), p.weight.data(), bias, out.mutable_data());
      break;
    case kernels::ConvAlgorithm::kIm2col:
      kernels::conv2d_forward_im2col(g, x.data(), p.weight.data(), bias, out.mutable_data());
      break;
  }
  if (rec) {
    Tensor w = p.weight, b = p.bias;
    Tape::active()->record({x, w, b}, out, [g, x, w, b, out]() mutable {
      std::span<Real> dx = x.requires_grad() ? x.mutable_grad() : std::span<Real>{};
      std::span<Real> dw = w.requires_grad() ? w.mutable_grad() : std::span<Real>{};
      std::span<Real> db =
          b.defined() && b.requires_grad() ? b.mutable_grad() : std::span<Real>{};
      switch (kernels::conv_algorithm()) {
        case kernels::ConvAlgorithm::kReference:
          kernels::conv2d_backward_reference(g, x.data(), w.data(), out.grad(), dx, dw, db);
          break;
        case kernels::ConvAlgorithm::kDirect:
          kernels::conv2d_backward_direct(g, x.data(), w.data(), out.grad(), dx, dw, db);
          break;
        case kernels::ConvAlgorithm::kIm2col:
          kernels::conv2d_backward_im2col(g, x.data(), w.data(), out.grad(), dx, dw, db);
          break;
      }
    });
  }
  return out;
}

Tensor pointwise_conv(const Tensor& x, const Conv2dParams& p) {
  if (p.kernel() != 1 || p.groups != 1 || p.padding != 0 || p.stride != 1) {
    throw ConfigError("pointwise_conv: requires k=1, groups=1, pad=0, stride=1");
  }
  return conv2d(x, p);
}

BatchNormState BatchNormState::make(int channels) {
  BatchNormState s;
  s.gamma = Tensor::create(Shape{1, channels, 1, 1}, fill::Ones{}, true);
  s.beta = Tensor::create(Shape{1, channels, 1, 1}, fill::Zeros{}, true);
  s.running_mean.assign(static_cast<std::size_t>(channels), Real{0});
  s.running_var.assign(static_cast<std::size_t>(channels), Real{1});
  return s;
}

void BatchNormState::collect(ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + ".gamma", gamma});
  out.push_back({prefix + ".beta", beta});
}

void BatchNormState::collect_buffers(BufferList& out, const std::string& prefix) {
  out.push_back({prefix + ".running_mean", &running_mean});
  out.push_back({prefix + ".running_var", &running_var});
}

Tensor batch_norm(const Tensor& x, BatchNormState& s) {
  const Shape& xs = x.shape();
  if (xs.c != s.channels()) {
    throw ShapeError("batch_norm: input has " + std::to_string(xs.c) +
                     " channels, state has " + std::to_string(s.channels()));
  }
  const kernels::BnGeometry g{xs.n, xs.c, static_cast<int>(xs.plane())};
  const bool rec = should_record({&x, &s.gamma, &s.beta});
  Tensor out = make_output(xs, rec);
  std::vector<Real> mean(static_cast<std::size_t>(xs.c));
  std::vector<Real> inv_std(static_cast<std::size_t>(xs.c));

  if (s.mode == NormMode::kTrain) {
    if (static_cast<std::int64_t>(xs.n) * xs.plane() < 2) {
      throw NumericError("batch_norm: batch statistics undefined for a single value per channel " +
                         xs.str());
    }
    std::vector<Real> var(static_cast<std::size_t>(xs.c));
    kernels::bn_batch_stats(g, x.data(), mean, var);
    for (int c = 0; c < xs.c; ++c) {
      inv_std[c] = static_cast<Real>(1.0 / std::sqrt(static_cast<double>(var[c]) + s.epsilon));
      s.running_mean[c] = (Real{1} - s.momentum) * s.running_mean[c] + s.momentum * mean[c];
      s.running_var[c] = (Real{1} - s.momentum) * s.running_var[c] + s.momentum * var[c];
    }
  } else {
    for (int c = 0; c < xs.c; ++c) {
      mean[c] = s.running_mean[c];
      inv_std[c] = static_cast<Real>(
          1.0 / std::sqrt(static_cast<double>(s.running_var[c]) + s.epsilon));
    }
  }
  kernels::bn_apply(g, x.data(), mean, inv_std, s.gamma.data(), s.beta.data(),
                    out.mutable_data());

  if (rec) {
    Tensor gamma = s.gamma, beta = s.beta;
    const bool train = s.mode == NormMode::kTrain;
    Tape::active()->record(
        {x, gamma, beta}, out,
        [g, x, gamma, beta, out, mean = std::move(mean), inv_std = std::move(inv_std),
         train]() mutable {
          std::span<Real> dx = x.requires_grad() ? x.mutable_grad() : std::span<Real>{};
          std::span<Real> dg = gamma.requires_grad() ? gamma.mutable_grad() : std::span<Real>{};
          std::span<Real> db = beta.requires_grad() ? beta.mutable_grad() : std::span<Real>{};
          auto dy = out.grad();
          if (train) {
            kernels::bn_backward_train(g, x.data(), mean, inv_std, gamma.data(), dy, dx, dg, db);
            return;
          }
          // Eval: a fixed per-channel affine map.
          for (int n = 0; n < g.n; ++n) {
            for (int c = 0; c < g.c; ++c) {
              const std::int64_t off = (static_cast<std::int64_t>(n) * g.c + c) * g.plane;
              const Real scale = gamma.data()[c] * inv_std[c];
              Real sdy = 0, sdyx = 0;
              for (int j = 0; j < g.plane; ++j) {
                const Real d = dy[off + j];
                sdy += d;
                sdyx += d * (x.data()[off + j] - mean[c]) * inv_std[c];
                if (!dx.empty()) dx[off + j] += d * scale;
              }
              if (!db.empty()) db[c] += sdy;
              if (!dg.empty()) dg[c] += sdyx;
            }
          }
        });
  }
  return out;
}

Tensor relu(const Tensor& x) {
  const std::uint8_t* gates = nullptr;
  if (KinkMonitor* m = KinkMonitor::active()) gates = m->observe(x.data());
  const bool rec = should_record({&x});
  Tensor out = make_output(x.shape(), rec);
  auto o = out.mutable_data();
  auto in = x.data();
  const std::int64_t n = x.numel();
  if (gates) {
    // Gradient checking: follow the recorded activation pattern.
    for (std::int64_t i = 0; i < n; ++i) o[i] = (gates[i] & 1) ? in[i] : Real{0};
  } else {
#pragma omp parallel for schedule(static) if (n > 65536)
    for (std::int64_t i = 0; i < n; ++i) o[i] = in[i] > 0 ? in[i] : Real{0};
  }
  if (rec) {
    Tape::active()->record({x}, out, [x, out]() mutable {
      auto g = out.grad();
      auto dx = x.mutable_grad();
      auto in = x.data();
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (in[i] > 0) dx[i] += g[i];
      }
    });
  }
  return out;
}

Tensor sigmoid(const Tensor& x) {
  const bool rec = should_record({&x});
  Tensor out = make_output(x.shape(), rec);
  auto o = out.mutable_data();
  for (std::int64_t i = 0; i < x.numel(); ++i) o[i] = stable_sigmoid(x.data()[i]);
  if (rec) {
    Tape::active()->record({x}, out, [x, out]() mutable {
      auto g = out.grad();
      auto y = out.data();
      auto dx = x.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * y[i] * (Real{1} - y[i]);
    });
  }
  return out;
}

Tensor softmax_lastdim(const Tensor& x) {
  const bool rec = should_record({&x});
  Tensor out = make_output(x.shape(), rec);
  const int m = x.shape().w;
  const std::int64_t rows = x.numel() / m;
  auto o = out.mutable_data();
  std::copy(x.data().begin(), x.data().end(), o.begin());
  for (std::int64_t r = 0; r < rows; ++r) {
    kernels::softmax_row(o.subspan(static_cast<std::size_t>(r * m), static_cast<std::size_t>(m)));
  }
  if (rec) {
    Tape::active()->record({x}, out, [x, out, m, rows]() mutable {
      auto g = out.grad();
      auto y = out.data();
      auto dx = x.mutable_grad();
      for (std::int64_t r = 0; r < rows; ++r) {
        const std::int64_t off = r * m;
        Real dot = 0;
        for (int j = 0; j < m; ++j) dot += g[off + j] * y[off + j];
        for (int j = 0; j < m; ++j) dx[off + j] += y[off + j] * (g[off + j] - dot);
      }
    });
  }
  return out;
}

Tensor upsample_nearest2x(const Tensor& x) {
  const Shape& s = x.shape();
  const Shape os{s.n, s.c, 2 * s.h, 2 * s.w};
  const bool rec = should_record({&x});
  Tensor out = make_output(os, rec);
  auto o = out.mutable_data();
  auto in = x.data();
  const int planes = s.n * s.c;
#pragma omp parallel for schedule(static)
  for (int p = 0; p < planes; ++p) {
    const Real* src = in.data() + static_cast<std::int64_t>(p) * s.plane();
    Real* dst = o.data() + static_cast<std::int64_t>(p) * os.plane();
    for (int y = 0; y < os.h; ++y) {
      for (int xx = 0; xx < os.w; ++xx) dst[y * os.w + xx] = src[(y / 2) * s.w + xx / 2];
    }
  }
  if (rec) {
    Tape::active()->record({x}, out, [x, out, planes]() mutable {
      const Shape& s = x.shape();
      const Shape& os = out.shape();
      auto g = out.grad();
      auto dx = x.mutable_grad();
#pragma omp parallel for schedule(static)
      for (int p = 0; p < planes; ++p) {
        const Real* src = g.data() + static_cast<std::int64_t>(p) * os.plane();
        Real* dst = dx.data() + static_cast<std::int64_t>(p) * s.plane();
        for (int y = 0; y < s.h; ++y) {
          for (int xx = 0; xx < s.w; ++xx) {
            const Real* b = src + (2 * y) * os.w + 2 * xx;
            dst[y * s.w + xx] += b[0] + b[1] + b[os.w] + b[os.w + 1];
          }
        }
      }
    });
  }
  return out;
}

}  // namespace natseg
