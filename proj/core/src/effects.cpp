#include "crgrf/effects.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "crgrf/error.hpp"
#include "parallel.hpp"
#include "random.hpp"

namespace crgrf {

std::string_view to_string(Direction direction) {
  switch (direction) {
    case Direction::kProtective: return "protective";
    case Direction::kHarmful: return "harmful";
    case Direction::kNeutral: return "neutral";
  }
  return "?";
}

Direction classify(double ci_low, double ci_high) {
  if (ci_high < 0.0) return Direction::kProtective;
  if (ci_low > 0.0) return Direction::kHarmful;
  return Direction::kNeutral;
}

double normal_quantile(double level) {
  if (!(level > 0.0 && level < 1.0)) throw DomainError("confidence level must lie in (0, 1)");
  const double p = 0.5 + level / 2.0;
  // Newton iterations on the normal CDF starting from a logistic guess.
  double z = std::log(p / (1.0 - p)) / 1.702;
  for (int it = 0; it < 50; ++it) {
    const double cdf = 0.5 * std::erfc(-z / std::numbers::sqrt2);
    const double pdf = std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
    const double step = (cdf - p) / pdf;
    z -= step;
    if (std::abs(step) < 1e-15) break;
  }
  return z;
}

namespace {

void check_scale(Scale scale) {
  if (scale == Scale::kBoth) throw ConfigError("a single estimate needs scale crude or net");
}

void check_grove_setup(const AnalysisConfig& config) {
  if (config.group_size < 2 || config.trees < 2 * config.group_size) {
    throw ConfigError("standard errors need at least two groves of two or more trees");
  }
}

AnalysisConfig single_threaded(AnalysisConfig config) {
  config.threads = 1;
  return config;
}

struct Step1 {
  StratifiedCurves censoring;
  std::optional<StratifiedCurves> competing;
};

Step1 fit_weights(const Dataset& data, std::size_t k, bool need_competing,
                  const AnalysisConfig& config) {
  const auto strata = resolve_strata(data, config.strata_columns, k);
  Step1 s{fit_reverse_km(data, strata), std::nullopt};
  if (need_competing) s.competing = fit_competing_km(data, strata);
  return s;
}

TwoStepResult step2(const Dataset& data, std::size_t k, Scale scale, const AnalysisConfig& config,
                    const Step1& weights) {
  auto outcomes = scale == Scale::kCrude
                      ? build_crude_outcomes(data, weights.censoring, config.horizon,
                                             config.weight_floor)
                      : build_net_outcomes(data, weights.censoring, *weights.competing,
                                           config.horizon, config.weight_floor);
  auto options = ForestOptions::from(config);
  // Crude and net forests for treatment k share a seed.
  options.seed = detail::derive_seed(config.seed, detail::kTreatmentStream, k);
  auto model = grow_forest(forest_data_for(data, outcomes, k, config.forest_exclude), options);
  model.treatment_index = k;
  model.scale = scale;

  const auto effect = average_effect(model);
  if (!effect.se) throw EstimationError("grove variance unavailable for " + data.treatment_names()[k]);
  const double z = normal_quantile(config.ci_level);

  EffectEstimate e;
  e.treatment = data.treatment_names()[k];
  e.treatment_index = k;
  e.scale = scale;
  e.ate = effect.ate;
  e.se = *effect.se;
  e.ci_low = e.ate - z * e.se;
  e.ci_high = e.ate + z * e.se;
  e.horizon = config.horizon;
  e.floored_weights = count_floored(outcomes);
  return TwoStepResult{std::move(e), weights.censoring, weights.competing, std::move(outcomes),
                       std::move(model)};
}

}  // namespace

TwoStepResult run_two_step_detailed(const Dataset& data, std::size_t k, Scale scale,
                                    const AnalysisConfig& config) {
  config.validate();
  check_scale(scale);
  check_grove_setup(config);
  if (k >= data.num_treatments()) throw ConfigError("treatment index out of range");
  if (data.is_degenerate(k)) {
    throw DegenerateError("treatment " + data.treatment_names()[k] + " takes a single value");
  }
  const auto weights = fit_weights(data, k, scale == Scale::kNet, config);
  return step2(data, k, scale, config, weights);
}

EffectEstimate run_two_step(const Dataset& data, std::size_t k, Scale scale,
                            const AnalysisConfig& config) {
  return run_two_step_detailed(data, k, scale, config).estimate;
}

std::vector<EffectEstimate> estimate_effects(const Dataset& data,
                                             const std::vector<std::size_t>& treatments,
                                             const std::vector<Scale>& scales,
                                             const AnalysisConfig& config) {
  config.validate();
  check_grove_setup(config);
  bool need_competing = false;
  for (auto s : scales) {
    check_scale(s);
    need_competing = need_competing || s == Scale::kNet;
  }
  std::vector<std::size_t> usable;
  for (auto k : treatments) {
    if (k >= data.num_treatments()) throw ConfigError("treatment index out of range");
    if (!data.is_degenerate(k)) usable.push_back(k);
  }

  // Ascending scale order: crude before net.
  std::vector<Scale> ordered(scales);
  std::sort(ordered.begin(), ordered.end());
  ordered.erase(std::unique(ordered.begin(), ordered.end()), ordered.end());

  const std::size_t jobs = usable.size();
  const unsigned workers = detail::resolve_threads(config.threads);
  const auto inner = jobs > 1 && workers > 1 ? single_threaded(config) : config;
  std::vector<std::vector<EffectEstimate>> results(jobs);
  detail::parallel_for(jobs, workers, [&](std::size_t j) {
    const auto k = usable[j];
    const auto weights = fit_weights(data, k, need_competing, inner);
    for (auto s : ordered) results[j].push_back(step2(data, k, s, inner, weights).estimate);
  });
  std::vector<EffectEstimate> out;
  for (auto& r : results) {
    for (auto& e : r) out.push_back(std::move(e));
  }
  return out;
}

RankingTable make_ranking(std::vector<EffectEstimate> entries, Scale scale, double horizon,
                          std::vector<std::string> skipped) {
  RankingTable table;
  table.scale = scale;
  table.horizon = horizon;
  std::stable_sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
    if (a.ate != b.ate) return a.ate < b.ate;
    return a.treatment_index < b.treatment_index;
  });
  table.entries = std::move(entries);
  table.skipped = std::move(skipped);
  return table;
}

RankingTable rank_treatments(const Dataset& data, const std::vector<std::size_t>& treatments,
                             Scale scale, const AnalysisConfig& config) {
  check_scale(scale);
  std::vector<std::string> skipped;
  std::vector<std::size_t> usable;
  for (auto k : treatments) {
    if (k >= data.num_treatments()) throw ConfigError("treatment index out of range");
    if (data.is_degenerate(k)) {
      skipped.push_back(data.treatment_names()[k]);
    } else {
      usable.push_back(k);
    }
  }
  if (usable.empty()) throw ConfigError("no non-degenerate treatment to rank");
  auto entries = estimate_effects(data, usable, {scale}, config);
  return make_ranking(std::move(entries), scale, config.horizon, std::move(skipped));
}

double ranking_fraction(const std::vector<std::vector<double>>& estimates, std::size_t k) {
  if (estimates.empty()) throw ConfigError("ranking fraction needs at least one replicate");
  std::size_t top = 0;
  for (const auto& row : estimates) {
    if (k >= row.size()) throw ConfigError("treatment column out of range");
    const bool best = std::all_of(row.begin(), row.end(), [&](double v) { return row[k] <= v; });
    if (best) ++top;
  }
  return static_cast<double>(top) / static_cast<double>(estimates.size());
}

}  // namespace crgrf
