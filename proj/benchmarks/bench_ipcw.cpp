#include <random>
#include <vector>

#include <benchmark/benchmark.h>

#include "crgrf/ipcw.hpp"

namespace {

void BM_ProductLimit(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(1);
  std::exponential_distribution<double> e(1.0);
  std::uniform_int_distribution<int> code(0, 2);
  std::vector<double> times(n);
  std::vector<int> statuses(n);
  for (std::size_t i = 0; i < n; ++i) {
    times[i] = e(rng);
    statuses[i] = code(rng);
  }
  for (auto _ : state) {
    auto curve = crgrf::fit_product_limit(times, statuses, crgrf::CurveTarget::kCensoring);
    benchmark::DoNotOptimize(curve.values.data());
  }
  state.SetComplexityN(static_cast<benchmark::IterationCount>(n));
}
BENCHMARK(BM_ProductLimit)->Range(1 << 8, 1 << 16)->Complexity(benchmark::oNLogN);

}  // namespace

BENCHMARK_MAIN();
