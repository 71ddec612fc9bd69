#include <benchmark/benchmark.h>

#include "crgrf/effects.hpp"
#include "crgrf/forest.hpp"
#include "crgrf/simbench.hpp"

namespace {

crgrf::ForestData forest_input(std::size_t n) {
  const auto data = crgrf::simulate_dataset(crgrf::default_design(), n, 17);
  const auto strata = crgrf::resolve_strata(data, {"@treatment"}, 0);
  const auto g = crgrf::fit_reverse_km(data, strata);
  const auto y = crgrf::build_crude_outcomes(data, g, 0.5, 0.01);
  return crgrf::forest_data_for(data, y, 0, {"X1bin"});
}

void BM_GrowForest(benchmark::State& state) {
  const auto input = forest_input(static_cast<std::size_t>(state.range(0)));
  crgrf::ForestOptions options;
  options.trees = 200;
  options.threads = 1;
  for (auto _ : state) {
    auto model = crgrf::grow_forest(input, options);
    benchmark::DoNotOptimize(model.trees().data());
  }
  state.SetItemsProcessed(state.iterations() * 200);
}
BENCHMARK(BM_GrowForest)->Arg(500)->Arg(2000)->Unit(benchmark::kMillisecond);

void BM_AverageEffect(benchmark::State& state) {
  crgrf::ForestOptions options;
  options.trees = 200;
  options.threads = 1;
  const auto model =
      crgrf::grow_forest(forest_input(static_cast<std::size_t>(state.range(0))), options);
  for (auto _ : state) {
    auto effect = crgrf::average_effect(model);
    benchmark::DoNotOptimize(effect.ate);
  }
}
BENCHMARK(BM_AverageEffect)->Arg(500)->Arg(2000)->Unit(benchmark::kMillisecond);

void BM_TwoStep(benchmark::State& state) {
  const auto data = crgrf::simulate_dataset(crgrf::default_design(), 500, 3);
  crgrf::AnalysisConfig config;
  config.horizon = 0.5;
  config.strata_columns = crgrf::scheme_strata('a');
  config.forest_exclude = {"X1bin"};
  config.threads = 1;
  for (auto _ : state) {
    auto e = crgrf::run_two_step(data, 0, crgrf::Scale::kNet, config);
    benchmark::DoNotOptimize(e.ate);
  }
}
BENCHMARK(BM_TwoStep)->Unit(benchmark::kMillisecond);

}  // namespace
