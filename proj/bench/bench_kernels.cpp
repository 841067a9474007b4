// Serial reference kernels against the im2col + GEMM kernels that run on the
// OpenMP pool. The thread count is the second benchmark argument; threaded
// runs report wall-clock time.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "attngan/kernels.hpp"
#include "attngan/parallel.hpp"

namespace {

using attngan::kernels::ConvGeometry;

// Layer shapes from the default 32 px model: stem, downsampling, residual.
const ConvGeometry kShapes[] = {
    {1, 3, 32, 32, 16, 7, 1, 3},
    {1, 16, 32, 32, 32, 3, 2, 1},
    {1, 64, 8, 8, 64, 3, 1, 1},
};

struct Buffers {
  std::vector<float> x, w, b, y, dy, dx, dw;
  explicit Buffers(const ConvGeometry& g) {
    std::mt19937 rng(1);
    std::uniform_real_distribution<float> u(-1.0f, 1.0f);
    auto fill = [&](std::vector<float>& v, std::int64_t n) {
      v.resize(static_cast<std::size_t>(n));
      for (auto& e : v) e = u(rng);
    };
    const auto out = g.batch * g.out_channels * g.out_h() * g.out_w();
    fill(x, g.batch * g.in_channels * g.in_h * g.in_w);
    fill(w, g.out_channels * g.patch());
    fill(b, g.out_channels);
    fill(dy, out);
    y.assign(static_cast<std::size_t>(out), 0.0f);
    dx.assign(x.size(), 0.0f);
    dw.assign(w.size(), 0.0f);
  }
};

double conv_flops(const ConvGeometry& g) {
  return 2.0 * g.batch * g.out_channels * g.out_h() * g.out_w() * g.patch();
}

void BM_ConvForwardReference(benchmark::State& state) {
  const auto& g = kShapes[state.range(0)];
  Buffers buf(g);
  for (auto _ : state) {
    attngan::kernels::reference::conv2d_forward(g, buf.x.data(), buf.w.data(), buf.b.data(), buf.y.data());
    benchmark::DoNotOptimize(buf.y.data());
  }
  state.counters["FLOP/s"] = benchmark::Counter(conv_flops(g), benchmark::Counter::kIsIterationInvariantRate);
}

void BM_ConvForward(benchmark::State& state) {
  const auto& g = kShapes[state.range(0)];
  attngan::set_num_threads(static_cast<int>(state.range(1)));
  Buffers buf(g);
  for (auto _ : state) {
    attngan::kernels::conv2d_forward(g, buf.x.data(), buf.w.data(), buf.b.data(), buf.y.data());
    benchmark::DoNotOptimize(buf.y.data());
  }
  state.counters["FLOP/s"] = benchmark::Counter(conv_flops(g), benchmark::Counter::kIsIterationInvariantRate);
}

void BM_ConvBackwardReference(benchmark::State& state) {
  const auto& g = kShapes[state.range(0)];
  Buffers buf(g);
  for (auto _ : state) {
    attngan::kernels::reference::conv2d_backward_input(g, buf.dy.data(), buf.w.data(), buf.dx.data());
    attngan::kernels::reference::conv2d_backward_weight(g, buf.x.data(), buf.dy.data(), buf.dw.data());
    benchmark::DoNotOptimize(buf.dw.data());
  }
  state.counters["FLOP/s"] = benchmark::Counter(2.0 * conv_flops(g), benchmark::Counter::kIsIterationInvariantRate);
}

void BM_ConvBackward(benchmark::State& state) {
  const auto& g = kShapes[state.range(0)];
  attngan::set_num_threads(static_cast<int>(state.range(1)));
  Buffers buf(g);
  for (auto _ : state) {
    attngan::kernels::conv2d_backward_input(g, buf.dy.data(), buf.w.data(), buf.dx.data());
    attngan::kernels::conv2d_backward_weight(g, buf.x.data(), buf.dy.data(), buf.dw.data());
    benchmark::DoNotOptimize(buf.dw.data());
  }
  state.counters["FLOP/s"] = benchmark::Counter(2.0 * conv_flops(g), benchmark::Counter::kIsIterationInvariantRate);
}

void BM_GemmReference(benchmark::State& state) {
  const auto n = state.range(0);
  std::vector<float> a(n * n, 0.5f), b(n * n, 0.25f), c(n * n);
  for (auto _ : state) {
    attngan::kernels::reference::gemm<float>(n, n, n, a.data(), b.data(), c.data());
    benchmark::DoNotOptimize(c.data());
  }
  state.counters["FLOP/s"] = benchmark::Counter(2.0 * n * n * n, benchmark::Counter::kIsIterationInvariantRate);
}

void BM_Gemm(benchmark::State& state) {
  const auto n = state.range(0);
  attngan::set_num_threads(static_cast<int>(state.range(1)));
  std::vector<float> a(n * n, 0.5f), b(n * n, 0.25f), c(n * n);
  for (auto _ : state) {
    attngan::kernels::gemm<float>(n, n, n, a.data(), b.data(), c.data());
    benchmark::DoNotOptimize(c.data());
  }
  state.counters["FLOP/s"] = benchmark::Counter(2.0 * n * n * n, benchmark::Counter::kIsIterationInvariantRate);
}

void thread_sweep(benchmark::internal::Benchmark* b) {
  for (int shape = 0; shape < 3; ++shape) {
    for (int threads : {1, 2, 4}) {
      b->Args({shape, threads});
    }
  }
}

}  // namespace

BENCHMARK(BM_ConvForwardReference)->DenseRange(0, 2)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_ConvForward)->Apply(thread_sweep)->UseRealTime()->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_ConvBackwardReference)->DenseRange(0, 2)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_ConvBackward)->Apply(thread_sweep)->UseRealTime()->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_GemmReference)->Arg(64)->Arg(256)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_Gemm)->Args({64, 1})->Args({256, 1})->Args({256, 4})->UseRealTime()->Unit(benchmark::kMicrosecond);

BENCHMARK_MAIN();
