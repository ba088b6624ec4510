#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "protovae/kernels.hpp"

using namespace protovae::kernels;

namespace {

// Layer shapes of the toy configuration at batch 32: the first encoder block,
// the last encoder block and the first decoder block seen as its adjoint conv.
ConvGeometry geometry(int which) {
  switch (which) {
    case 0: return {32, 1, 32, 32, 16, 4, 2, 1};
    case 1: return {32, 32, 4, 4, 32, 4, 2, 1};
    default: return transposed_as_conv(32, 32, 2, 2, 32, 4, 2, 1);
  }
}

struct Buffers {
  explicit Buffers(const ConvGeometry& g) : x(g.in_size()), w(g.weight_size()), b(g.out_channels), y(g.out_size()) {
    std::mt19937 rng(1);
    std::uniform_real_distribution<float> u(-1, 1);
    for (auto* v : {&x, &w, &b, &y})
      for (auto& e : *v) e = u(rng);
  }
  std::vector<float> x, w, b, y;
};

template <bool Parallel>
void BM_ConvForward(benchmark::State& state) {
  const ConvGeometry g = geometry(static_cast<int>(state.range(0)));
  Buffers buf(g);
  for (auto _ : state) {
    if constexpr (Parallel) parallel::conv2d_forward<float>(g, buf.x, buf.w, buf.b, buf.y);
    else serial::conv2d_forward<float>(g, buf.x, buf.w, buf.b, buf.y);
    benchmark::DoNotOptimize(buf.y.data());
  }
}

template <bool Parallel>
void BM_ConvBackward(benchmark::State& state) {
  const ConvGeometry g = geometry(static_cast<int>(state.range(0)));
  Buffers buf(g);
  std::vector<float> dx(g.in_size()), dw(g.weight_size());
  for (auto _ : state) {
    if constexpr (Parallel) {
      parallel::conv2d_backward_input<float>(g, buf.y, buf.w, dx);
      parallel::conv2d_backward_weight<float>(g, buf.x, buf.y, dw);
    } else {
      serial::conv2d_backward_input<float>(g, buf.y, buf.w, dx);
      serial::conv2d_backward_weight<float>(g, buf.x, buf.y, dw);
    }
    benchmark::DoNotOptimize(dx.data());
    benchmark::DoNotOptimize(dw.data());
  }
}

template <bool Parallel>
void BM_Dense(benchmark::State& state) {
  const int rows = 32 * 6, in = static_cast<int>(state.range(0)), out = 64;
  std::vector<float> x(rows * in, 0.5f), w(out * in, 0.1f), b(out, 0.f), y(rows * out);
  for (auto _ : state) {
    if constexpr (Parallel) parallel::dense_forward<float>(rows, in, out, x, w, b, y);
    else serial::dense_forward<float>(rows, in, out, x, w, b, y);
    benchmark::DoNotOptimize(y.data());
  }
}

}  // namespace

BENCHMARK(BM_ConvForward<false>)->Name("conv_forward/serial")->DenseRange(0, 2);
BENCHMARK(BM_ConvForward<true>)->Name("conv_forward/parallel")->DenseRange(0, 2);
BENCHMARK(BM_ConvBackward<false>)->Name("conv_backward/serial")->DenseRange(0, 2);
BENCHMARK(BM_ConvBackward<true>)->Name("conv_backward/parallel")->DenseRange(0, 2);
BENCHMARK(BM_Dense<false>)->Name("dense_forward/serial")->Arg(128)->Arg(512);
BENCHMARK(BM_Dense<true>)->Name("dense_forward/parallel")->Arg(128)->Arg(512);

BENCHMARK_MAIN();
