#include <benchmark/benchmark.h>

#include <random>

#include "reasonlens/tensor.hpp"

using namespace reasonlens;

namespace {

Tensor random_matrix(std::size_t rows, std::size_t cols, unsigned seed) {
  std::mt19937 rng(seed);
  std::normal_distribution<float> n(0.0f, 1.0f);
  std::vector<float> v(rows * cols);
  for (auto& x : v) x = n(rng);
  return Tensor({rows, cols}, std::move(v));
}

void BM_Matmul(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  const auto k = static_cast<std::size_t>(state.range(1));
  const auto n = static_cast<std::size_t>(state.range(2));
  const Tensor a = random_matrix(m, k, 1), b = random_matrix(k, n, 2);
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
  state.counters["GFLOP"] =
      benchmark::Counter(2e-9 * double(m) * double(k) * double(n), benchmark::Counter::kIsIterationInvariantRate);
}

// Attention/MLP shapes of GPT-2 Small for a 32-token prompt, plus the
// single-row unembedding product.
BENCHMARK(BM_Matmul)
    ->Args({32, 768, 768})
    ->Args({32, 768, 2304})
    ->Args({32, 768, 3072})
    ->Args({32, 3072, 768})
    ->Args({1, 768, 50257})
    ->Args({8, 768, 50257})
    ->Unit(benchmark::kMicrosecond);

void BM_Softmax(benchmark::State& state) {
  Tensor logits = random_matrix(1, 50257, 3);
  for (auto _ : state) {
    Tensor t = logits;
    kernels::softmax_row(t.row(0));
    benchmark::DoNotOptimize(t);
  }
}
BENCHMARK(BM_Softmax)->Unit(benchmark::kMicrosecond);

}  // namespace
