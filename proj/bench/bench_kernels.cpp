// OpenMP kernels vs the serial reference versions, at toy-model sizes.
// Thread count follows OMP_NUM_THREADS.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "vipt/kernels.hpp"

namespace k = vipt::kernels;

namespace {

std::vector<double> noise(std::size_t n, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(-1, 1);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

// tokens x dim -> dim x 4
void BM_Linear(benchmark::State& st, bool reference) {
  const std::size_t n = st.range(0), kk = 64, m = 256;
  const auto x = noise(n * kk, 1), w = noise(kk * m, 2), b = noise(m, 3);
  std::vector<double> out(n * m);
  for (auto _ : st) {
    if (reference)
      k::reference::linear_forward(x, w, b, out, n, kk, m);
    else
      k::linear_forward(x, w, b, out, n, kk, m);
    benchmark::DoNotOptimize(out.data());
  }
  st.SetItemsProcessed(st.iterations() * n * kk * m);
}

void BM_Attention(benchmark::State& st, bool reference) {
  const std::size_t n = st.range(0), d = 64, heads = 4;
  const auto qkv = noise(n * 3 * d, 4);
  std::vector<double> out(n * d), probs(heads * n * n);
  for (auto _ : st) {
    if (reference)
      k::reference::attention_forward(qkv, out, n, d, heads);
    else
      k::attention_forward(qkv, out, probs, n, d, heads);
    benchmark::DoNotOptimize(out.data());
  }
}

void BM_Conv3x3(benchmark::State& st, bool reference) {
  const std::size_t side = st.range(0), cin = 64, cout = 32;
  const auto x = noise(cin * side * side, 5), w = noise(cout * cin * 9, 6), b = noise(cout, 7);
  std::vector<double> out(cout * side * side);
  for (auto _ : st) {
    if (reference)
      k::reference::conv3x3_forward(x, w, b, out, cin, cout, side, side);
    else
      k::conv3x3_forward(x, w, b, out, cin, cout, side, side);
    benchmark::DoNotOptimize(out.data());
  }
}

void BM_LayerNorm(benchmark::State& st, bool reference) {
  const std::size_t n = st.range(0), d = 64;
  const auto x = noise(n * d, 8), g = noise(d, 9), b = noise(d, 10);
  std::vector<double> out(n * d), mean(n), rstd(n);
  for (auto _ : st) {
    if (reference)
      k::reference::layer_norm_forward(x, g, b, 1e-6, out, n, d);
    else
      k::layer_norm_forward(x, g, b, 1e-6, out, mean, rstd, n, d);
    benchmark::DoNotOptimize(out.data());
  }
}

}  // namespace

BENCHMARK_CAPTURE(BM_Linear, omp, false)->Arg(80)->Arg(320);
BENCHMARK_CAPTURE(BM_Linear, reference, true)->Arg(80)->Arg(320);
BENCHMARK_CAPTURE(BM_Attention, omp, false)->Arg(80)->Arg(320);
BENCHMARK_CAPTURE(BM_Attention, reference, true)->Arg(80)->Arg(320);
BENCHMARK_CAPTURE(BM_Conv3x3, omp, false)->Arg(8)->Arg(16);
BENCHMARK_CAPTURE(BM_Conv3x3, reference, true)->Arg(8)->Arg(16);
BENCHMARK_CAPTURE(BM_LayerNorm, omp, false)->Arg(320);
BENCHMARK_CAPTURE(BM_LayerNorm, reference, true)->Arg(320);

BENCHMARK_MAIN();
