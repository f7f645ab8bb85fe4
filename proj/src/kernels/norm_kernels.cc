#include <cstdint>

#include "natseg/kernels.h"

namespace natseg::kernels {
namespace {

using Index = std::int64_t;

inline const Real* channel_ptr(const BnGeometry& g, std::span<const Real> x,
                               int n, int c) {
  return x.data() + (static_cast<Index>(n) * g.c + c) * g.plane;
}

void channel_stats(const BnGeometry& g, std::span<const Real> x, int c,
                   Real& mean_out, Real& var_out) {
  const double count = static_cast<double>(g.n) * g.plane;
  double sum = 0.0;
  for (int n = 0; n < g.n; ++n) {
    const Real* p = channel_ptr(g, x, n, c);
    for (int j = 0; j < g.plane; ++j) sum += p[j];
  }
  const double mean = sum / count;
  double sq = 0.0;
  for (int n = 0; n < g.n; ++n) {
    const Real* p = channel_ptr(g, x, n, c);
    for (int j = 0; j < g.plane; ++j) {
      const double d = p[j] - mean;
      sq += d * d;
    }
  }
  mean_out = static_cast<Real>(mean);
  var_out = static_cast<Real>(sq / count);
}

void channel_backward(const BnGeometry& g, std::span<const Real> x,
                      std::span<const Real> mean, std::span<const Real> inv_std,
                      std::span<const Real> gamma, std::span<const Real> dy,
                      std::span<Real> dx, std::span<Real> dgamma,
                      std::span<Real> dbeta, int c) {
  const double count = static_cast<double>(g.n) * g.plane;
  const double mu = mean[c];
  const double is = inv_std[c];
  double sum_dy = 0.0, sum_dy_xhat = 0.0;
  for (int n = 0; n < g.n; ++n) {
    const Real* xp = channel_ptr(g, x, n, c);
    const Real* gp = channel_ptr(g, dy, n, c);
    for (int j = 0; j < g.plane; ++j) {
      sum_dy += gp[j];
      sum_dy_xhat += gp[j] * (xp[j] - mu) * is;
    }
  }
  if (!dbeta.empty()) dbeta[c] += static_cast<Real>(sum_dy);
  if (!dgamma.empty()) dgamma[c] += static_cast<Real>(sum_dy_xhat);
  if (dx.empty()) return;
  const double k = gamma[c] * is / count;
  for (int n = 0; n < g.n; ++n) {
    const Real* xp = channel_ptr(g, x, n, c);
    const Real* gp = channel_ptr(g, dy, n, c);
    Real* dp = dx.data() + (static_cast<Index>(n) * g.c + c) * g.plane;
    for (int j = 0; j < g.plane; ++j) {
      const double xhat = (xp[j] - mu) * is;
      dp[j] += static_cast<Real>(k * (count * gp[j] - sum_dy - xhat * sum_dy_xhat));
    }
  }
}

}  // namespace

void bn_batch_stats_reference(const BnGeometry& g, std::span<const Real> x,
                              std::span<Real> mean, std::span<Real> var) {
  for (int c = 0; c < g.c; ++c) channel_stats(g, x, c, mean[c], var[c]);
}

void bn_batch_stats(const BnGeometry& g, std::span<const Real> x,
                    std::span<Real> mean, std::span<Real> var) {
#pragma omp parallel for schedule(static)
  for (int c = 0; c < g.c; ++c) channel_stats(g, x, c, mean[c], var[c]);
}

void bn_apply(const BnGeometry& g, std::span<const Real> x,
              std::span<const Real> mean, std::span<const Real> inv_std,
              std::span<const Real> gamma, std::span<const Real> beta,
              std::span<Real> y) {
  const int planes = g.n * g.c;
#pragma omp parallel for schedule(static)
  for (int p = 0; p < planes; ++p) {
    const int c = p % g.c;
    const Real scale = gamma[c] * inv_std[c];
    const Real shift = beta[c] - mean[c] * scale;
    const Real* xp = x.data() + static_cast<Index>(p) * g.plane;
    Real* yp = y.data() + static_cast<Index>(p) * g.plane;
    for (int j = 0; j < g.plane; ++j) yp[j] = xp[j] * scale + shift;
  }
}

void bn_backward_train_reference(const BnGeometry& g, std::span<const Real> x,
                                 std::span<const Real> mean,
                                 std::span<const Real> inv_std,
                                 std::span<const Real> gamma,
                                 std::span<const Real> dy, std::span<Real> dx,
                                 std::span<Real> dgamma, std::span<Real> dbeta) {
  for (int c = 0; c < g.c; ++c) {
    channel_backward(g, x, mean, inv_std, gamma, dy, dx, dgamma, dbeta, c);
  }
}

void bn_backward_train(const BnGeometry& g, std::span<const Real> x,
                       std::span<const Real> mean, std::span<const Real> inv_std,
                       std::span<const Real> gamma, std::span<const Real> dy,
                       std::span<Real> dx, std::span<Real> dgamma,
                       std::span<Real> dbeta) {
#pragma omp parallel for schedule(static)
  for (int c = 0; c < g.c; ++c) {
    channel_backward(g, x, mean, inv_std, gamma, dy, dx, dgamma, dbeta, c);
  }
}

}  // namespace natseg::kernels
