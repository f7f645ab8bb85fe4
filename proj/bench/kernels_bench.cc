// Serial reference kernels against their OpenMP counterparts on desk- and
// bridge-sized feature maps. Thread count follows NATSEG_THREADS / OpenMP.

#include <benchmark/benchmark.h>

#include <vector>

#include "natseg/kernels.h"
#include "natseg/rng.h"

using namespace natseg;
using namespace natseg::kernels;

namespace {

std::vector<Real> noise(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Real> v(n);
  for (Real& x : v) x = static_cast<Real>(rng.uniform(-1.0, 1.0));
  return v;
}

// state.range(0): spatial size, range(1): channels, range(2): groups.
ConvGeometry conv_geometry(const benchmark::State& state) {
  ConvGeometry g;
  g.n = 2;
  g.h = g.w = static_cast<int>(state.range(0));
  g.c_in = g.c_out = static_cast<int>(state.range(1));
  g.groups = static_cast<int>(state.range(2));
  g.k = 3;
  g.pad = 1;
  return g;
}

template <auto Kernel>
void BM_ConvForward(benchmark::State& state) {
  const ConvGeometry g = conv_geometry(state);
  const auto x = noise(static_cast<std::size_t>(g.n) * g.c_in * g.h * g.w, 1);
  const auto w = noise(static_cast<std::size_t>(g.c_out) * g.cin_per_group() * g.k * g.k, 2);
  const auto b = noise(static_cast<std::size_t>(g.c_out), 3);
  std::vector<Real> out(static_cast<std::size_t>(g.n) * g.c_out * g.out_h() * g.out_w());
  for (auto _ : state) {
    Kernel(g, x, w, b, out);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(out.size()) * g.cin_per_group() * g.k * g.k);
}

template <auto Kernel>
void BM_ConvBackward(benchmark::State& state) {
  const ConvGeometry g = conv_geometry(state);
  const auto x = noise(static_cast<std::size_t>(g.n) * g.c_in * g.h * g.w, 1);
  const auto w = noise(static_cast<std::size_t>(g.c_out) * g.cin_per_group() * g.k * g.k, 2);
  const auto dout = noise(static_cast<std::size_t>(g.n) * g.c_out * g.out_h() * g.out_w(), 4);
  std::vector<Real> dx(x.size()), dw(w.size()), db(static_cast<std::size_t>(g.c_out));
  for (auto _ : state) {
    Kernel(g, x, w, dout, dx, dw, db);
    benchmark::DoNotOptimize(dx.data());
  }
}

void conv_args(benchmark::internal::Benchmark* b) {
  b->Args({48, 12, 1})->Args({48, 12, 3})->Args({24, 48, 1})->Args({6, 96, 1})->Args({96, 24, 3});
}

BENCHMARK(BM_ConvForward<conv2d_forward_reference>)->Apply(conv_args);
BENCHMARK(BM_ConvForward<conv2d_forward_direct>)->Apply(conv_args);
BENCHMARK(BM_ConvForward<conv2d_forward_im2col>)->Apply(conv_args);
BENCHMARK(BM_ConvBackward<conv2d_backward_reference>)->Apply(conv_args);
BENCHMARK(BM_ConvBackward<conv2d_backward_direct>)->Apply(conv_args);
BENCHMARK(BM_ConvBackward<conv2d_backward_im2col>)->Apply(conv_args);

template <auto Kernel>
void BM_BnStats(benchmark::State& state) {
  BnGeometry g{4, static_cast<int>(state.range(1)), static_cast<int>(state.range(0) * state.range(0))};
  const auto x = noise(static_cast<std::size_t>(g.n) * g.c * g.plane, 5);
  std::vector<Real> mean(static_cast<std::size_t>(g.c)), var(static_cast<std::size_t>(g.c));
  for (auto _ : state) {
    Kernel(g, x, mean, var);
    benchmark::DoNotOptimize(var.data());
  }
  state.SetBytesProcessed(state.iterations() * static_cast<std::int64_t>(x.size() * sizeof(Real)));
}

template <auto Kernel>
void BM_BnBackward(benchmark::State& state) {
  BnGeometry g{4, static_cast<int>(state.range(1)), static_cast<int>(state.range(0) * state.range(0))};
  const std::size_t n = static_cast<std::size_t>(g.n) * g.c * g.plane, c = static_cast<std::size_t>(g.c);
  const auto x = noise(n, 6), dy = noise(n, 7), mean = noise(c, 8), gamma = noise(c, 9);
  std::vector<Real> inv_std(c, Real(1.5)), dx(n), dgamma(c), dbeta(c);
  for (auto _ : state) {
    Kernel(g, x, mean, inv_std, gamma, dy, dx, dgamma, dbeta);
    benchmark::DoNotOptimize(dx.data());
  }
}

BENCHMARK(BM_BnStats<bn_batch_stats_reference>)->Args({48, 12})->Args({96, 64});
BENCHMARK(BM_BnStats<bn_batch_stats>)->Args({48, 12})->Args({96, 64});
BENCHMARK(BM_BnBackward<bn_backward_train_reference>)->Args({48, 12})->Args({96, 64});
BENCHMARK(BM_BnBackward<bn_backward_train>)->Args({48, 12})->Args({96, 64});

// state.range(0): spatial size, range(1): channels.
AttentionGeometry attention_geometry(const benchmark::State& state) {
  AttentionGeometry g;
  g.n = 2;
  g.h = g.w = static_cast<int>(state.range(0));
  g.d = static_cast<int>(state.range(1));
  g.window = 3;
  return g;
}

template <auto Kernel>
void BM_AttentionForward(benchmark::State& state) {
  const AttentionGeometry g = attention_geometry(state);
  const std::size_t n = static_cast<std::size_t>(g.n) * g.d * g.h * g.w;
  const auto q = noise(n, 10), k = noise(n, 11), v = noise(n, 12);
  const auto bias = noise(static_cast<std::size_t>(g.bias_side() * g.bias_side()), 13);
  std::vector<Real> out(n), probs(static_cast<std::size_t>(g.n) * g.h * g.w * g.neighbours());
  for (auto _ : state) {
    Kernel(g, q, k, v, bias, out, probs);
    benchmark::DoNotOptimize(out.data());
  }
}

template <auto Kernel>
void BM_AttentionBackward(benchmark::State& state) {
  const AttentionGeometry g = attention_geometry(state);
  const std::size_t n = static_cast<std::size_t>(g.n) * g.d * g.h * g.w;
  const auto q = noise(n, 10), k = noise(n, 11), v = noise(n, 12), dout = noise(n, 14);
  const auto bias = noise(static_cast<std::size_t>(g.bias_side() * g.bias_side()), 13);
  std::vector<Real> out(n), probs(static_cast<std::size_t>(g.n) * g.h * g.w * g.neighbours());
  neighborhood_attention_forward_reference(g, q, k, v, bias, out, probs);
  std::vector<Real> dq(n), dk(n), dv(n), dbias(bias.size());
  for (auto _ : state) {
    Kernel(g, q, k, v, probs, dout, dq, dk, dv, dbias);
    benchmark::DoNotOptimize(dq.data());
  }
}

BENCHMARK(BM_AttentionForward<neighborhood_attention_forward_reference>)->Args({6, 96})->Args({48, 512});
BENCHMARK(BM_AttentionForward<neighborhood_attention_forward>)->Args({6, 96})->Args({48, 512});
BENCHMARK(BM_AttentionBackward<neighborhood_attention_backward_reference>)->Args({6, 96})->Args({48, 512});
BENCHMARK(BM_AttentionBackward<neighborhood_attention_backward>)->Args({6, 96})->Args({48, 512});

}  // namespace

BENCHMARK_MAIN();
