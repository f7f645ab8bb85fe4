#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "natseg/kernels.h"

namespace natseg::kernels {
namespace {

using Index = std::int64_t;

struct Window {
  int row0;
  int col0;
};

inline Window window_of(const AttentionGeometry& g, int i, int j) {
  return {window_start(i, g.h, g.window), window_start(j, g.w, g.window)};
}

// Index into the bias table for the neighbour at (row, col) of query (i, j).
inline int bias_index(const AttentionGeometry& g, int i, int j, int row, int col) {
  return (row - i + g.window - 1) * g.bias_side() + (col - j + g.window - 1);
}

// Logits, softmax and weighted sum for one query pixel.
void attend_pixel(const AttentionGeometry& g, std::span<const Real> q,
                  std::span<const Real> k, std::span<const Real> v,
                  std::span<const Real> bias, std::span<Real> out,
                  std::span<Real> probs, int n, int i, int j, Real* logits) {
  const Index plane = static_cast<Index>(g.h) * g.w;
  const Index base = static_cast<Index>(n) * g.d * plane;
  const Index pix = static_cast<Index>(i) * g.w + j;
  const Real scale = static_cast<Real>(1.0 / std::sqrt(static_cast<double>(g.d)));
  const Window win = window_of(g, i, j);
  int slot = 0;
  for (int a = 0; a < g.window; ++a) {
    for (int b = 0; b < g.window; ++b, ++slot) {
      const int row = win.row0 + a, col = win.col0 + b;
      const Index nb = static_cast<Index>(row) * g.w + col;
      Real dot = 0;
      for (int d = 0; d < g.d; ++d) {
        dot += q[base + d * plane + pix] * k[base + d * plane + nb];
      }
      logits[slot] = (dot + bias[bias_index(g, i, j, row, col)]) * scale;
    }
  }
  const int m = g.neighbours();
  softmax_row(std::span<Real>(logits, static_cast<std::size_t>(m)));
  Real* p = probs.data() + ((static_cast<Index>(n) * g.h + i) * g.w + j) * m;
  std::copy(logits, logits + m, p);
  for (int d = 0; d < g.d; ++d) {
    Real acc = 0;
    slot = 0;
    for (int a = 0; a < g.window; ++a) {
      for (int b = 0; b < g.window; ++b, ++slot) {
        const Index nb = static_cast<Index>(win.row0 + a) * g.w + (win.col0 + b);
        acc += p[slot] * v[base + d * plane + nb];
      }
    }
    out[base + d * plane + pix] = acc;
  }
}

}  // namespace

void softmax_row(std::span<Real> row) {
  if (row.empty()) return;
  const Real mx = *std::max_element(row.begin(), row.end());
  double sum = 0.0;
  for (auto& x : row) {
    x = static_cast<Real>(std::exp(static_cast<double>(x - mx)));
    sum += x;
  }
  const double inv = 1.0 / sum;
  for (auto& x : row) x = static_cast<Real>(x * inv);
}

void neighborhood_attention_forward_reference(
    const AttentionGeometry& g, std::span<const Real> q, std::span<const Real> k,
    std::span<const Real> v, std::span<const Real> bias, std::span<Real> out,
    std::span<Real> probs) {
  std::vector<Real> logits(static_cast<std::size_t>(g.neighbours()));
  for (int n = 0; n < g.n; ++n) {
    for (int i = 0; i < g.h; ++i) {
      for (int j = 0; j < g.w; ++j) {
        attend_pixel(g, q, k, v, bias, out, probs, n, i, j, logits.data());
      }
    }
  }
}

void neighborhood_attention_forward(const AttentionGeometry& g,
                                    std::span<const Real> q,
                                    std::span<const Real> k,
                                    std::span<const Real> v,
                                    std::span<const Real> bias,
                                    std::span<Real> out, std::span<Real> probs) {
  const int pixels = g.n * g.h * g.w;
#pragma omp parallel
  {
    std::vector<Real> logits(static_cast<std::size_t>(g.neighbours()));
#pragma omp for schedule(static)
    for (int p = 0; p < pixels; ++p) {
      const int n = p / (g.h * g.w);
      const int i = (p / g.w) % g.h;
      const int j = p % g.w;
      attend_pixel(g, q, k, v, bias, out, probs, n, i, j, logits.data());
    }
  }
}

void neighborhood_attention_backward_reference(
    const AttentionGeometry& g, std::span<const Real> q, std::span<const Real> k,
    std::span<const Real> v, std::span<const Real> probs,
    std::span<const Real> dout, std::span<Real> dq, std::span<Real> dk,
    std::span<Real> dv, std::span<Real> dbias) {
  const Index plane = static_cast<Index>(g.h) * g.w;
  const int m = g.neighbours();
  const Real scale = static_cast<Real>(1.0 / std::sqrt(static_cast<double>(g.d)));
  std::vector<Real> dp(static_cast<std::size_t>(m));
  for (int n = 0; n < g.n; ++n) {
    const Index base = static_cast<Index>(n) * g.d * plane;
    for (int i = 0; i < g.h; ++i) {
      for (int j = 0; j < g.w; ++j) {
        const Index pix = static_cast<Index>(i) * g.w + j;
        const Real* p = probs.data() + ((static_cast<Index>(n) * g.h + i) * g.w + j) * m;
        const Window win = window_of(g, i, j);
        Real s = 0;
        for (int slot = 0; slot < m; ++slot) {
          const Index nb = static_cast<Index>(win.row0 + slot / g.window) * g.w +
                           (win.col0 + slot % g.window);
          Real acc = 0;
          for (int d = 0; d < g.d; ++d) {
            acc += dout[base + d * plane + pix] * v[base + d * plane + nb];
          }
          dp[slot] = acc;
          s += p[slot] * acc;
        }
        for (int slot = 0; slot < m; ++slot) {
          const int row = win.row0 + slot / g.window;
          const int col = win.col0 + slot % g.window;
          const Index nb = static_cast<Index>(row) * g.w + col;
          const Real ds = p[slot] * (dp[slot] - s) * scale;
          for (int d = 0; d < g.d; ++d) {
            if (!dq.empty()) dq[base + d * plane + pix] += ds * k[base + d * plane + nb];
            if (!dk.empty()) dk[base + d * plane + nb] += ds * q[base + d * plane + pix];
            if (!dv.empty()) dv[base + d * plane + nb] += p[slot] * dout[base + d * plane + pix];
          }
          if (!dbias.empty()) dbias[bias_index(g, i, j, row, col)] += ds;
        }
      }
    }
  }
}

void neighborhood_attention_backward(
    const AttentionGeometry& g, std::span<const Real> q, std::span<const Real> k,
    std::span<const Real> v, std::span<const Real> probs,
    std::span<const Real> dout, std::span<Real> dq, std::span<Real> dk,
    std::span<Real> dv, std::span<Real> dbias) {
  const Index plane = static_cast<Index>(g.h) * g.w;
  const int m = g.neighbours();
  const int pixels = g.n * g.h * g.w;
  const Real scale = static_cast<Real>(1.0 / std::sqrt(static_cast<double>(g.d)));
  // Gradient w.r.t. the raw (pre-scale) logits, laid out like probs.
  std::vector<Real> dlogit(static_cast<std::size_t>(pixels) * m);

  // Pass 1: per query pixel. Owns dq at that pixel.
#pragma omp parallel
  {
    std::vector<Real> dp(static_cast<std::size_t>(m));
#pragma omp for schedule(static)
    for (int px = 0; px < pixels; ++px) {
      const int n = px / (g.h * g.w);
      const int i = (px / g.w) % g.h;
      const int j = px % g.w;
      const Index base = static_cast<Index>(n) * g.d * plane;
      const Index pix = static_cast<Index>(i) * g.w + j;
      const Real* p = probs.data() + static_cast<Index>(px) * m;
      Real* ds = dlogit.data() + static_cast<Index>(px) * m;
      const Window win = window_of(g, i, j);
      Real s = 0;
      for (int slot = 0; slot < m; ++slot) {
        const Index nb = static_cast<Index>(win.row0 + slot / g.window) * g.w +
                         (win.col0 + slot % g.window);
        Real acc = 0;
        for (int d = 0; d < g.d; ++d) {
          acc += dout[base + d * plane + pix] * v[base + d * plane + nb];
        }
        dp[slot] = acc;
        s += p[slot] * acc;
      }
      for (int slot = 0; slot < m; ++slot) ds[slot] = p[slot] * (dp[slot] - s) * scale;
      if (dq.empty()) continue;
      for (int d = 0; d < g.d; ++d) {
        Real acc = 0;
        for (int slot = 0; slot < m; ++slot) {
          const Index nb = static_cast<Index>(win.row0 + slot / g.window) * g.w +
                           (win.col0 + slot % g.window);
          acc += ds[slot] * k[base + d * plane + nb];
        }
        dq[base + d * plane + pix] += acc;
      }
    }
  }

  // Pass 2: scatter into keys/values, one (image, channel) plane per
  // iteration so each accumulator has a single writer.
  if (!dk.empty() || !dv.empty()) {
    const int planes = g.n * g.d;
#pragma omp parallel for schedule(static)
    for (int pd = 0; pd < planes; ++pd) {
      const int n = pd / g.d;
      const Index off = static_cast<Index>(pd) * plane;
      for (int i = 0; i < g.h; ++i) {
        for (int j = 0; j < g.w; ++j) {
          const Index pix = static_cast<Index>(i) * g.w + j;
          const Index px = (static_cast<Index>(n) * g.h + i) * g.w + j;
          const Real* p = probs.data() + px * m;
          const Real* ds = dlogit.data() + px * m;
          const Real qv = q[off + pix];
          const Real go = dout[off + pix];
          const Window win = window_of(g, i, j);
          for (int slot = 0; slot < m; ++slot) {
            const Index nb = static_cast<Index>(win.row0 + slot / g.window) * g.w +
                             (win.col0 + slot % g.window);
            if (!dk.empty()) dk[off + nb] += ds[slot] * qv;
            if (!dv.empty()) dv[off + nb] += p[slot] * go;
          }
        }
      }
    }
  }

  // Pass 3: bias table, fixed sequential order.
  if (!dbias.empty()) {
    for (int px = 0; px < pixels; ++px) {
      const int i = (px / g.w) % g.h;
      const int j = px % g.w;
      const Window win = window_of(g, i, j);
      const Real* ds = dlogit.data() + static_cast<Index>(px) * m;
      for (int slot = 0; slot < m; ++slot) {
        dbias[bias_index(g, i, j, win.row0 + slot / g.window,
                         win.col0 + slot % g.window)] += ds[slot];
      }
    }
  }
}

}  // namespace natseg::kernels
