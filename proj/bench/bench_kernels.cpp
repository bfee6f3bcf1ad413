// Serial reference kernels next to their OpenMP counterparts.

#include <benchmark/benchmark.h>

#include <vector>

#include "tgq/kernels.hpp"
#include "tgq/rng.hpp"

namespace {

using namespace tgq;

std::vector<double> random_vec(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal();
  return v;
}

template <auto Gemm>
void BM_Gemm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const kernels::GemmShape s{n, 128, 128};
  const auto a = random_vec(s.m * s.k, 1), b = random_vec(s.k * s.n, 2);
  std::vector<double> c(s.m * s.n);
  for (auto _ : state) {
    Gemm(kernels::Trans::kNo, kernels::Trans::kNo, s, a, b, c, false);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<long>(s.m * s.n * s.k));
}

template <auto Rbf>
void BM_RbfSum(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto x = random_vec(n * 2, 3), y = random_vec(n * 2, 4);
  for (auto _ : state) benchmark::DoNotOptimize(Rbf(x, n, y, n, 2, 0.5, false));
  state.SetItemsProcessed(state.iterations() * static_cast<long>(n * n));
}

template <auto Fq>
void BM_FakeQuantize(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto x = random_vec(n, 5);
  std::vector<double> out(n);
  for (auto _ : state) {
    Fq(x, out, 0.02, -128, 127);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<long>(n));
}

}  // namespace

BENCHMARK(BM_Gemm<&kernels::serial::gemm>)->Name("gemm/serial")->Arg(64)->Arg(256);
BENCHMARK(BM_Gemm<&kernels::parallel::gemm>)->Name("gemm/parallel")->Arg(64)->Arg(256);
BENCHMARK(BM_RbfSum<&kernels::serial::rbf_sum>)->Name("rbf_sum/serial")->Arg(500)->Arg(2000);
BENCHMARK(BM_RbfSum<&kernels::parallel::rbf_sum>)->Name("rbf_sum/parallel")->Arg(500)->Arg(2000);
BENCHMARK(BM_FakeQuantize<&kernels::serial::fake_quantize>)->Name("fake_quantize/serial")->Arg(1 << 16);
BENCHMARK(BM_FakeQuantize<&kernels::parallel::fake_quantize>)->Name("fake_quantize/parallel")->Arg(1 << 16);

BENCHMARK_MAIN();
