// Serial reference kernels vs the OpenMP/GEMM kernels on tiny_teacher-sized
// shapes. Run with --benchmark_filter=conv to narrow.

#include <benchmark/benchmark.h>

#include <random>

#include "dynkd/kernels.hpp"

using namespace dynkd;
namespace k = dynkd::kernels;

namespace {

Tensor random_tensor(Shape s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<real> dist(0.0, 1.0);
  Tensor t(s);
  for (auto& v : t.values()) v = dist(rng);
  return t;
}

struct ConvCase {
  Tensor x, w, dy;
  k::ConvGeometry g;
};

ConvCase conv_case(const benchmark::State& state) {
  const int batch = static_cast<int>(state.range(0));
  const int cin = static_cast<int>(state.range(1));
  const int cout = static_cast<int>(state.range(2));
  const int hw = static_cast<int>(state.range(3));
  const int groups = static_cast<int>(state.range(4));
  ConvCase c;
  c.g = {3, 1, 1, groups};
  c.x = random_tensor({batch, cin, hw, hw}, 1);
  c.w = random_tensor({cout, cin / groups, 3, 3}, 2);
  c.dy = random_tensor(k::conv_output_shape(c.x.shape(), cout, c.g), 3);
  return c;
}

void conv_args(benchmark::internal::Benchmark* b) {
  b->Args({64, 3, 24, 32, 1})->Args({64, 24, 48, 16, 1})->Args({64, 48, 96, 8, 1})
      ->Args({64, 64, 64, 4, 64});
  b->Unit(benchmark::kMillisecond);
}

template <bool Parallel>
void BM_conv_forward(benchmark::State& state) {
  ConvCase c = conv_case(state);
  Tensor y;
  for (auto _ : state) {
    if constexpr (Parallel) {
      k::parallel::conv2d_forward(c.x, c.w, c.g, y);
    } else {
      k::reference::conv2d_forward(c.x, c.w, c.g, y);
    }
    benchmark::DoNotOptimize(y.data());
  }
}

template <bool Parallel>
void BM_conv_backward(benchmark::State& state) {
  ConvCase c = conv_case(state);
  Tensor dx, dw;
  for (auto _ : state) {
    if constexpr (Parallel) {
      k::parallel::conv2d_backward(c.x, c.w, c.dy, c.g, dx, dw);
    } else {
      k::reference::conv2d_backward(c.x, c.w, c.dy, c.g, dx, dw);
    }
    benchmark::DoNotOptimize(dx.data());
  }
}

template <bool Parallel>
void BM_linear(benchmark::State& state) {
  const int batch = static_cast<int>(state.range(0));
  const Tensor x = random_tensor({batch, 112, 1, 1}, 4);
  const Tensor w = random_tensor({10, 112, 1, 1}, 5);
  const Tensor bias = random_tensor({10, 1, 1, 1}, 6);
  const Tensor dy = random_tensor({batch, 10, 1, 1}, 7);
  Tensor y, dx, dw, db;
  for (auto _ : state) {
    if constexpr (Parallel) {
      k::parallel::linear_forward(x, w, bias, y);
      k::parallel::linear_backward(x, w, dy, dx, dw, db);
    } else {
      k::reference::linear_forward(x, w, bias, y);
      k::reference::linear_backward(x, w, dy, dx, dw, db);
    }
    benchmark::DoNotOptimize(dx.data());
  }
}

template <bool Parallel>
void BM_batchnorm(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0));
  const int hw = static_cast<int>(state.range(1));
  const Tensor x = random_tensor({64, c, hw, hw}, 8);
  const Tensor gamma = random_tensor({c, 1, 1, 1}, 9);
  const Tensor beta = random_tensor({c, 1, 1, 1}, 10);
  const Tensor dy = random_tensor(x.shape(), 11);
  Tensor y, dx, dg, dbeta;
  k::BatchNormCache cache;
  for (auto _ : state) {
    if constexpr (Parallel) {
      k::parallel::batchnorm_forward_train(x, gamma, beta, 1e-5, y, cache);
      k::parallel::batchnorm_backward(x, gamma, cache, dy, dx, dg, dbeta);
    } else {
      k::reference::batchnorm_forward_train(x, gamma, beta, 1e-5, y, cache);
      k::reference::batchnorm_backward(x, gamma, cache, dy, dx, dg, dbeta);
    }
    benchmark::DoNotOptimize(dx.data());
  }
}

}  // namespace

BENCHMARK(BM_conv_forward<false>)->Name("conv_forward/reference")->Apply(conv_args);
BENCHMARK(BM_conv_forward<true>)->Name("conv_forward/parallel")->Apply(conv_args);
BENCHMARK(BM_conv_backward<false>)->Name("conv_backward/reference")->Apply(conv_args);
BENCHMARK(BM_conv_backward<true>)->Name("conv_backward/parallel")->Apply(conv_args);
BENCHMARK(BM_linear<false>)->Name("linear/reference")->Arg(64)->Arg(256);
BENCHMARK(BM_linear<true>)->Name("linear/parallel")->Arg(64)->Arg(256);
BENCHMARK(BM_batchnorm<false>)->Name("batchnorm/reference")->Args({24, 32})->Args({96, 8})
    ->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_batchnorm<true>)->Name("batchnorm/parallel")->Args({24, 32})->Args({96, 8})
    ->Unit(benchmark::kMicrosecond);

BENCHMARK_MAIN();
