#pragma once

#include <iosfwd>
#include <map>
#include <span>
#include <vector>

#include "crgrf/dataset.hpp"

namespace crgrf {

/// Right-continuous, non-increasing step function starting at 1.
/// values[k] is the curve on [jump_times[k], jump_times[k+1]).
struct SurvivalCurve {
  std::vector<double> jump_times;
  std::vector<double> values;
  StratumKey stratum;

  // Value at t (right-continuous).
  double at(double t) const;
};

// Product of the factors at jump times strictly below t.
double eval_left_limit(const SurvivalCurve& curve, double t);

// Which status counts as the "event" of a product-limit fit.
enum class CurveTarget {
  kCensoring,  // status 0; risk set excludes same-time events of status > 0
  kCompeting,  // status 2; risk set excludes same-time records of status != 2
};

// Product-limit estimate over a single group of (time, status) pairs.
SurvivalCurve fit_product_limit(std::span<const double> times, std::span<const int> statuses,
                                CurveTarget target, StratumKey stratum = {});

struct StratifiedCurves {
  StrataSpec strata;
  std::map<StratumKey, SurvivalCurve> curves;

  // Curve of the stratum the record belongs to; EstimationError if missing.
  const SurvivalCurve& for_record(const ObservedRecord& record) const;
};

StratifiedCurves fit_reverse_km(const Dataset& data, const StrataSpec& strata);
StratifiedCurves fit_competing_km(const Dataset& data, const StrataSpec& strata);

struct WeightedOutcome {
  double value = 0.0;
  double denominator = 1.0;
  bool floored = false;
};

// Y~ = 1{T <= horizon, status = 1} / max(G(T-|z), floor).
std::vector<WeightedOutcome> build_crude_outcomes(const Dataset& data,
                                                  const StratifiedCurves& censoring,
                                                  double horizon, double floor);

// Y~' = 1{T <= horizon, status = 1} / max(G(T-|z) G2(T-|z), floor).
std::vector<WeightedOutcome> build_net_outcomes(const Dataset& data,
                                                const StratifiedCurves& censoring,
                                                const StratifiedCurves& competing,
                                                double horizon, double floor);

std::size_t count_floored(std::span<const WeightedOutcome> outcomes);
std::vector<double> outcome_values(std::span<const WeightedOutcome> outcomes);

// Diagnostic dumps: "stratum,time,value" and "id,value,denominator,floored".
void write_curves_csv(std::ostream& out, const StratifiedCurves& curves);
void write_weights_csv(std::ostream& out, const Dataset& data,
                       std::span<const WeightedOutcome> outcomes);

}  // namespace crgrf
