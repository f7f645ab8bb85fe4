#include <algorithm>
#include <cstdint>
#include <vector>

#include "natseg/kernels.h"

namespace natseg::kernels {
namespace {

ConvAlgorithm g_algorithm = ConvAlgorithm::kIm2col;

using Index = std::int64_t;

// Output columns [lo, hi) whose input column ox*stride - pad + kx is inside
// [0, w).
inline void valid_range(int kx, int pad, int stride, int w, int out_w, int& lo,
                        int& hi) {
  // ox*stride >= pad - kx  and  ox*stride <= w - 1 + pad - kx
  const int a = pad - kx;
  lo = a <= 0 ? 0 : (a + stride - 1) / stride;
  const int b = w - 1 + pad - kx;
  hi = b < 0 ? 0 : std::min(out_w, b / stride + 1);
  if (lo > hi) lo = hi;
}

// Unfolds one (image, group) slice of x into a (cin_g*k*k, oh*ow) matrix.
void im2col(const ConvGeometry& g, const Real* x_group, Real* col) {
  const int oh = g.out_h(), ow = g.out_w();
  const int kk = g.k * g.k;
  const int rows = g.cin_per_group() * kk;
  const Index plane = static_cast<Index>(g.h) * g.w;
#pragma omp parallel for schedule(static)
  for (int r = 0; r < rows; ++r) {
    const int ci = r / kk;
    const int ky = (r % kk) / g.k;
    const int kx = r % g.k;
    const Real* src = x_group + ci * plane;
    Real* dst = col + static_cast<Index>(r) * oh * ow;
    int lo, hi;
    valid_range(kx, g.pad, g.stride, g.w, ow, lo, hi);
    for (int oy = 0; oy < oh; ++oy) {
      Real* row = dst + static_cast<Index>(oy) * ow;
      const int iy = oy * g.stride - g.pad + ky;
      if (iy < 0 || iy >= g.h) {
        std::fill(row, row + ow, Real{0});
        continue;
      }
      std::fill(row, row + lo, Real{0});
      const Real* srow = src + static_cast<Index>(iy) * g.w;
      for (int ox = lo; ox < hi; ++ox) {
        row[ox] = srow[ox * g.stride - g.pad + kx];
      }
      std::fill(row + hi, row + ow, Real{0});
    }
  }
}

// Folds a column-gradient matrix back into dx (accumulating). Each input
// channel is owned by one iteration.
void col2im(const ConvGeometry& g, const Real* dcol, Real* dx_group) {
  const int oh = g.out_h(), ow = g.out_w();
  const int kk = g.k * g.k;
  const Index plane = static_cast<Index>(g.h) * g.w;
#pragma omp parallel for schedule(static)
  for (int ci = 0; ci < g.cin_per_group(); ++ci) {
    Real* dst = dx_group + ci * plane;
    for (int kidx = 0; kidx < kk; ++kidx) {
      const int ky = kidx / g.k;
      const int kx = kidx % g.k;
      const Real* src = dcol + static_cast<Index>(ci * kk + kidx) * oh * ow;
      int lo, hi;
      valid_range(kx, g.pad, g.stride, g.w, ow, lo, hi);
      for (int oy = 0; oy < oh; ++oy) {
        const int iy = oy * g.stride - g.pad + ky;
        if (iy < 0 || iy >= g.h) continue;
        Real* drow = dst + static_cast<Index>(iy) * g.w;
        const Real* srow = src + static_cast<Index>(oy) * ow;
        for (int ox = lo; ox < hi; ++ox) {
          drow[ox * g.stride - g.pad + kx] += srow[ox];
        }
      }
    }
  }
}

bool is_plain_pointwise(const ConvGeometry& g) {
  return g.k == 1 && g.stride == 1 && g.pad == 0;
}

}  // namespace

void set_conv_algorithm(ConvAlgorithm algo) { g_algorithm = algo; }
ConvAlgorithm conv_algorithm() { return g_algorithm; }

void conv2d_forward_reference(const ConvGeometry& g, std::span<const Real> x,
                              std::span<const Real> weight,
                              std::span<const Real> bias, std::span<Real> out) {
  const int oh = g.out_h(), ow = g.out_w();
  const int cig = g.cin_per_group(), cog = g.cout_per_group();
  for (int n = 0; n < g.n; ++n) {
    for (int co = 0; co < g.c_out; ++co) {
      const int grp = co / cog;
      for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
          Real acc = bias.empty() ? Real{0} : bias[co];
          for (int ci = 0; ci < cig; ++ci) {
            const int cin = grp * cig + ci;
            for (int ky = 0; ky < g.k; ++ky) {
              const int iy = oy * g.stride - g.pad + ky;
              if (iy < 0 || iy >= g.h) continue;
              for (int kx = 0; kx < g.k; ++kx) {
                const int ix = ox * g.stride - g.pad + kx;
                if (ix < 0 || ix >= g.w) continue;
                acc += x[((static_cast<Index>(n) * g.c_in + cin) * g.h + iy) * g.w + ix] *
                       weight[((static_cast<Index>(co) * cig + ci) * g.k + ky) * g.k + kx];
              }
            }
          }
          out[((static_cast<Index>(n) * g.c_out + co) * oh + oy) * ow + ox] = acc;
        }
      }
    }
  }
}

void conv2d_forward_direct(const ConvGeometry& g, std::span<const Real> x,
                           std::span<const Real> weight,
                           std::span<const Real> bias, std::span<Real> out) {
  const int oh = g.out_h(), ow = g.out_w();
  const int cig = g.cin_per_group(), cog = g.cout_per_group();
  const Index in_plane = static_cast<Index>(g.h) * g.w;
  const Index out_plane = static_cast<Index>(oh) * ow;
  const int planes = g.n * g.c_out;
#pragma omp parallel for schedule(static)
  for (int p = 0; p < planes; ++p) {
    const int n = p / g.c_out;
    const int co = p % g.c_out;
    const int grp = co / cog;
    Real* dst = out.data() + static_cast<Index>(p) * out_plane;
    std::fill(dst, dst + out_plane, bias.empty() ? Real{0} : bias[co]);
    for (int ci = 0; ci < cig; ++ci) {
      const Real* src =
          x.data() + (static_cast<Index>(n) * g.c_in + grp * cig + ci) * in_plane;
      const Real* wk = weight.data() + (static_cast<Index>(co) * cig + ci) * g.k * g.k;
      for (int ky = 0; ky < g.k; ++ky) {
        for (int kx = 0; kx < g.k; ++kx) {
          const Real wv = wk[ky * g.k + kx];
          int lo, hi;
          valid_range(kx, g.pad, g.stride, g.w, ow, lo, hi);
          for (int oy = 0; oy < oh; ++oy) {
            const int iy = oy * g.stride - g.pad + ky;
            if (iy < 0 || iy >= g.h) continue;
            const Real* srow = src + static_cast<Index>(iy) * g.w;
            Real* drow = dst + static_cast<Index>(oy) * ow;
            const int shift = kx - g.pad;
            for (int ox = lo; ox < hi; ++ox) drow[ox] += wv * srow[ox * g.stride + shift];
          }
        }
      }
    }
  }
}

void conv2d_forward_im2col(const ConvGeometry& g, std::span<const Real> x,
                           std::span<const Real> weight,
                           std::span<const Real> bias, std::span<Real> out) {
  const int oh = g.out_h(), ow = g.out_w();
  const int cig = g.cin_per_group(), cog = g.cout_per_group();
  const int rows = cig * g.k * g.k;
  const Index cols = static_cast<Index>(oh) * ow;
  const Index in_plane = static_cast<Index>(g.h) * g.w;
  const bool direct_col = is_plain_pointwise(g);
  std::vector<Real> col(direct_col ? 0 : static_cast<std::size_t>(rows * cols));
  for (int n = 0; n < g.n; ++n) {
    for (int grp = 0; grp < g.groups; ++grp) {
      const Real* x_group =
          x.data() + (static_cast<Index>(n) * g.c_in + grp * cig) * in_plane;
      const Real* cm = x_group;
      if (!direct_col) {
        im2col(g, x_group, col.data());
        cm = col.data();
      }
      Real* out_group =
          out.data() + (static_cast<Index>(n) * g.c_out + grp * cog) * cols;
#pragma omp parallel for schedule(static)
      for (int co = 0; co < cog; ++co) {
        Real* dst = out_group + static_cast<Index>(co) * cols;
        std::fill(dst, dst + cols, bias.empty() ? Real{0} : bias[grp * cog + co]);
        const Real* wrow = weight.data() + static_cast<Index>(grp * cog + co) * rows;
        for (int r = 0; r < rows; ++r) {
          const Real wv = wrow[r];
          const Real* src = cm + static_cast<Index>(r) * cols;
          for (Index j = 0; j < cols; ++j) dst[j] += wv * src[j];
        }
      }
    }
  }
}

void conv2d_backward_reference(const ConvGeometry& g, std::span<const Real> x,
                               std::span<const Real> weight,
                               std::span<const Real> dout, std::span<Real> dx,
                               std::span<Real> dweight, std::span<Real> dbias) {
  const int oh = g.out_h(), ow = g.out_w();
  const int cig = g.cin_per_group(), cog = g.cout_per_group();
  for (int n = 0; n < g.n; ++n) {
    for (int co = 0; co < g.c_out; ++co) {
      const int grp = co / cog;
      for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
          const Real go = dout[((static_cast<Index>(n) * g.c_out + co) * oh + oy) * ow + ox];
          if (!dbias.empty()) dbias[co] += go;
          for (int ci = 0; ci < cig; ++ci) {
            const int cin = grp * cig + ci;
            for (int ky = 0; ky < g.k; ++ky) {
              const int iy = oy * g.stride - g.pad + ky;
              if (iy < 0 || iy >= g.h) continue;
              for (int kx = 0; kx < g.k; ++kx) {
                const int ix = ox * g.stride - g.pad + kx;
                if (ix < 0 || ix >= g.w) continue;
                const Index xi = ((static_cast<Index>(n) * g.c_in + cin) * g.h + iy) * g.w + ix;
                const Index wi = ((static_cast<Index>(co) * cig + ci) * g.k + ky) * g.k + kx;
                if (!dweight.empty()) dweight[wi] += go * x[xi];
                if (!dx.empty()) dx[xi] += go * weight[wi];
              }
            }
          }
        }
      }
    }
  }
}

void conv2d_backward_direct(const ConvGeometry& g, std::span<const Real> x,
                            std::span<const Real> weight,
                            std::span<const Real> dout, std::span<Real> dx,
                            std::span<Real> dweight, std::span<Real> dbias) {
  const int oh = g.out_h(), ow = g.out_w();
  const int cig = g.cin_per_group(), cog = g.cout_per_group();
  const Index in_plane = static_cast<Index>(g.h) * g.w;
  const Index out_plane = static_cast<Index>(oh) * ow;

  if (!dx.empty()) {
    const int planes = g.n * g.c_in;
#pragma omp parallel for schedule(static)
    for (int p = 0; p < planes; ++p) {
      const int n = p / g.c_in;
      const int cin = p % g.c_in;
      const int grp = cin / cig;
      const int ci = cin % cig;
      Real* dst = dx.data() + static_cast<Index>(p) * in_plane;
      for (int co = grp * cog; co < (grp + 1) * cog; ++co) {
        const Real* go = dout.data() + (static_cast<Index>(n) * g.c_out + co) * out_plane;
        const Real* wk = weight.data() + (static_cast<Index>(co) * cig + ci) * g.k * g.k;
        for (int ky = 0; ky < g.k; ++ky) {
          for (int kx = 0; kx < g.k; ++kx) {
            const Real wv = wk[ky * g.k + kx];
            int lo, hi;
            valid_range(kx, g.pad, g.stride, g.w, ow, lo, hi);
            for (int oy = 0; oy < oh; ++oy) {
              const int iy = oy * g.stride - g.pad + ky;
              if (iy < 0 || iy >= g.h) continue;
              Real* drow = dst + static_cast<Index>(iy) * g.w;
              const Real* grow = go + static_cast<Index>(oy) * ow;
              const int shift = kx - g.pad;
              for (int ox = lo; ox < hi; ++ox) drow[ox * g.stride + shift] += wv * grow[ox];
            }
          }
        }
      }
    }
  }

  if (!dweight.empty() || !dbias.empty()) {
#pragma omp parallel for schedule(static)
    for (int co = 0; co < g.c_out; ++co) {
      const int grp = co / cog;
      for (int n = 0; n < g.n; ++n) {
        const Real* go = dout.data() + (static_cast<Index>(n) * g.c_out + co) * out_plane;
        if (!dbias.empty()) {
          Real s = 0;
          for (Index j = 0; j < out_plane; ++j) s += go[j];
          dbias[co] += s;
        }
        if (dweight.empty()) continue;
        for (int ci = 0; ci < cig; ++ci) {
          const Real* src =
              x.data() + (static_cast<Index>(n) * g.c_in + grp * cig + ci) * in_plane;
          Real* dwk = dweight.data() + (static_cast<Index>(co) * cig + ci) * g.k * g.k;
          for (int ky = 0; ky < g.k; ++ky) {
            for (int kx = 0; kx < g.k; ++kx) {
              int lo, hi;
              valid_range(kx, g.pad, g.stride, g.w, ow, lo, hi);
              Real s = 0;
              for (int oy = 0; oy < oh; ++oy) {
                const int iy = oy * g.stride - g.pad + ky;
                if (iy < 0 || iy >= g.h) continue;
                const Real* srow = src + static_cast<Index>(iy) * g.w;
                const Real* grow = go + static_cast<Index>(oy) * ow;
                const int shift = kx - g.pad;
                for (int ox = lo; ox < hi; ++ox) s += grow[ox] * srow[ox * g.stride + shift];
              }
              dwk[ky * g.k + kx] += s;
            }
          }
        }
      }
    }
  }
}

void conv2d_backward_im2col(const ConvGeometry& g, std::span<const Real> x,
                            std::span<const Real> weight,
                            std::span<const Real> dout, std::span<Real> dx,
                            std::span<Real> dweight, std::span<Real> dbias) {
  const int oh = g.out_h(), ow = g.out_w();
  const int cig = g.cin_per_group(), cog = g.cout_per_group();
  const int rows = cig * g.k * g.k;
  const Index cols = static_cast<Index>(oh) * ow;
  const Index in_plane = static_cast<Index>(g.h) * g.w;
  const bool direct_col = is_plain_pointwise(g);
  std::vector<Real> col(direct_col || dweight.empty() ? 0 : static_cast<std::size_t>(rows * cols));
  std::vector<Real> dcol(dx.empty() ? 0 : static_cast<std::size_t>(rows * cols));

  for (int n = 0; n < g.n; ++n) {
    for (int grp = 0; grp < g.groups; ++grp) {
      const Real* x_group =
          x.data() + (static_cast<Index>(n) * g.c_in + grp * cig) * in_plane;
      const Real* go_group =
          dout.data() + (static_cast<Index>(n) * g.c_out + grp * cog) * cols;

      if (!dweight.empty() || !dbias.empty()) {
        const Real* cm = x_group;
        if (!dweight.empty() && !direct_col) {
          im2col(g, x_group, col.data());
          cm = col.data();
        }
#pragma omp parallel for schedule(static)
        for (int co = 0; co < cog; ++co) {
          const Real* go = go_group + static_cast<Index>(co) * cols;
          if (!dbias.empty()) {
            Real s = 0;
            for (Index j = 0; j < cols; ++j) s += go[j];
            dbias[grp * cog + co] += s;
          }
          if (dweight.empty()) continue;
          Real* dw = dweight.data() + static_cast<Index>(grp * cog + co) * rows;
          for (int r = 0; r < rows; ++r) {
            const Real* src = cm + static_cast<Index>(r) * cols;
            Real s = 0;
            for (Index j = 0; j < cols; ++j) s += go[j] * src[j];
            dw[r] += s;
          }
        }
      }

      if (!dx.empty()) {
        Real* dx_group =
            dx.data() + (static_cast<Index>(n) * g.c_in + grp * cig) * in_plane;
        // dcol = W^T * dout, one row of dcol per iteration.
        Real* dcol_target = direct_col ? nullptr : dcol.data();
#pragma omp parallel for schedule(static)
        for (int r = 0; r < rows; ++r) {
          Real* dst = direct_col ? dx_group + static_cast<Index>(r) * cols
                                 : dcol_target + static_cast<Index>(r) * cols;
          if (!direct_col) std::fill(dst, dst + cols, Real{0});
          for (int co = 0; co < cog; ++co) {
            const Real wv = weight[static_cast<Index>(grp * cog + co) * rows + r];
            const Real* go = go_group + static_cast<Index>(co) * cols;
            for (Index j = 0; j < cols; ++j) dst[j] += wv * go[j];
          }
        }
        if (!direct_col) col2im(g, dcol.data(), dx_group);
      }
    }
  }
}

}  // namespace natseg::kernels
