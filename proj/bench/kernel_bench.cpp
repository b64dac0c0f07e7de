// Serial reference kernels against their OpenMP counterparts.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "mice/kernels.hpp"

namespace {

std::vector<float> random_vec(std::size_t n, unsigned seed) {
  std::mt19937 rng(seed);
  std::normal_distribution<float> dist;
  std::vector<float> v(n);
  for (auto& x : v) x = dist(rng);
  return v;
}

void gemm_args(benchmark::internal::Benchmark* b) {
  for (int s : {64, 128, 256}) b->Args({s, 384});
}

void BM_GemmSerial(benchmark::State& state) {
  const auto r = static_cast<std::size_t>(state.range(0));
  const auto d = static_cast<std::size_t>(state.range(1));
  auto a = random_vec(r * d, 1), w = random_vec(d * d, 2);
  std::vector<float> c(r * d);
  for (auto _ : state) {
    mice::kernels::serial::gemm_nn(a.data(), w.data(), c.data(), r, d, d);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(2 * r * d * d));
}
BENCHMARK(BM_GemmSerial)->Apply(gemm_args);

void BM_GemmParallel(benchmark::State& state) {
  const auto r = static_cast<std::size_t>(state.range(0));
  const auto d = static_cast<std::size_t>(state.range(1));
  auto a = random_vec(r * d, 1), w = random_vec(d * d, 2);
  std::vector<float> c(r * d);
  for (auto _ : state) {
    mice::kernels::gemm_nn(a.data(), w.data(), c.data(), r, d, d);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(2 * r * d * d));
}
BENCHMARK(BM_GemmParallel)->Apply(gemm_args);

void attention_args(benchmark::internal::Benchmark* b) {
  for (int s : {128, 256, 531}) b->Args({s, 384, 12});
}

template <bool Parallel>
void run_attention(benchmark::State& state) {
  const auto s = static_cast<std::size_t>(state.range(0));
  const auto d = static_cast<std::size_t>(state.range(1));
  const auto h = static_cast<std::size_t>(state.range(2));
  auto q = random_vec(s * d, 3), k = random_vec(s * d, 4), v = random_vec(s * d, 5);
  std::vector<std::uint8_t> allow(s * s, 1);
  std::vector<float> probs(h * s * s), out(s * d);
  for (auto _ : state) {
    if constexpr (Parallel) {
      mice::kernels::attention_forward(q.data(), k.data(), v.data(), allow.data(), s, s, d, h,
                                       probs.data(), out.data());
    } else {
      mice::kernels::serial::attention_forward(q.data(), k.data(), v.data(), allow.data(), s, s, d, h,
                                               probs.data(), out.data());
    }
    benchmark::DoNotOptimize(out.data());
  }
}

void BM_AttentionSerial(benchmark::State& state) { run_attention<false>(state); }
void BM_AttentionParallel(benchmark::State& state) { run_attention<true>(state); }
BENCHMARK(BM_AttentionSerial)->Apply(attention_args);
BENCHMARK(BM_AttentionParallel)->Apply(attention_args);

}  // namespace

BENCHMARK_MAIN();
