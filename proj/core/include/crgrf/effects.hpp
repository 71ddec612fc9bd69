#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "crgrf/dataset.hpp"
#include "crgrf/forest.hpp"
#include "crgrf/ipcw.hpp"

namespace crgrf {

enum class Direction { kProtective, kHarmful, kNeutral };

std::string_view to_string(Direction direction);

// protective: ci_high < 0; harmful: ci_low > 0; neutral otherwise.
Direction classify(double ci_low, double ci_high);

// Two-sided standard normal quantile, e.g. 1.959964 for level 0.95.
double normal_quantile(double level);

struct EffectEstimate {
  std::string treatment;
  std::size_t treatment_index = 0;
  Scale scale = Scale::kNet;
  double ate = 0.0;
  double se = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  double horizon = 0.0;
  std::size_t floored_weights = 0;

  Direction direction() const { return classify(ci_low, ci_high); }
};

// Everything produced along the way, for diagnostics and dumps.
struct TwoStepResult {
  EffectEstimate estimate;
  StratifiedCurves censoring;
  std::optional<StratifiedCurves> competing;
  std::vector<WeightedOutcome> outcomes;
  ForestModel model;
};

// Step 1 builds the weighted outcome for the scale (crude or net) with strata
// taken from config.strata_columns; step 2 fits the forest on X plus the other
// treatments and averages out-of-bag theta(X_i).
TwoStepResult run_two_step_detailed(const Dataset& data, std::size_t k, Scale scale,
                                    const AnalysisConfig& config);
EffectEstimate run_two_step(const Dataset& data, std::size_t k, Scale scale,
                            const AnalysisConfig& config);

struct RankingTable {
  Scale scale = Scale::kNet;
  double horizon = 0.0;
  std::vector<EffectEstimate> entries;  // ascending ATE, most protective first
  std::vector<std::string> skipped;     // degenerate treatments
};

// One forest per treatment; degenerate treatments are listed as skipped.
// ConfigError when nothing is left to rank.
RankingTable rank_treatments(const Dataset& data, const std::vector<std::size_t>& treatments,
                             Scale scale, const AnalysisConfig& config);

// Estimates for several treatments and scales from one dataset pass; rows are
// ordered by treatment, then crude before net. Degenerate treatments yield
// no rows.
std::vector<EffectEstimate> estimate_effects(const Dataset& data,
                                             const std::vector<std::size_t>& treatments,
                                             const std::vector<Scale>& scales,
                                             const AnalysisConfig& config);

RankingTable make_ranking(std::vector<EffectEstimate> entries, Scale scale, double horizon,
                          std::vector<std::string> skipped = {});

// Share of rows where column k is <= every other column.
double ranking_fraction(const std::vector<std::vector<double>>& estimates, std::size_t k);

// Report files: columns treatment,scale,ate,se,ci_low,ci_high,direction.
void write_ranking_csv(std::ostream& out, const RankingTable& table);
void write_ranking_json(std::ostream& out, const RankingTable& table);
// Point and interval per treatment, in ranking order, for plotting.
void write_plot_data(std::ostream& out, const RankingTable& table);
void write_estimate_json(std::ostream& out, const EffectEstimate& estimate);

}  // namespace crgrf
