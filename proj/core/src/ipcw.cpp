#include "crgrf/ipcw.hpp"

#include <algorithm>
#include <numeric>
#include <ostream>

#include "crgrf/error.hpp"
#include "format.hpp"

namespace crgrf {

double SurvivalCurve::at(double t) const {
  // First jump strictly after t; the value just before it applies.
  auto it = std::upper_bound(jump_times.begin(), jump_times.end(), t);
  if (it == jump_times.begin()) return 1.0;
  return values[static_cast<std::size_t>(it - jump_times.begin()) - 1];
}

double eval_left_limit(const SurvivalCurve& curve, double t) {
  auto it = std::lower_bound(curve.jump_times.begin(), curve.jump_times.end(), t);
  if (it == curve.jump_times.begin()) return 1.0;
  return curve.values[static_cast<std::size_t>(it - curve.jump_times.begin()) - 1];
}

SurvivalCurve fit_product_limit(std::span<const double> times, std::span<const int> statuses,
                                CurveTarget target, StratumKey stratum) {
  if (times.empty()) {
    throw EstimationError("cannot fit a survival curve on empty stratum " + to_string(stratum));
  }
  if (times.size() != statuses.size()) {
    throw EstimationError("times and statuses differ in length");
  }
  std::vector<std::size_t> order(times.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return times[a] < times[b]; });

  const int event_code = target == CurveTarget::kCensoring ? kCensored : kCompetingEvent;
  SurvivalCurve curve;
  curve.stratum = std::move(stratum);
  double value = 1.0;
  std::size_t at_risk = times.size();
  for (std::size_t pos = 0; pos < order.size();) {
    const double t = times[order[pos]];
    std::size_t targets = 0, others = 0, end = pos;
    for (; end < order.size() && times[order[end]] == t; ++end) {
      if (statuses[order[end]] == event_code) {
        ++targets;
      } else {
        ++others;
      }
    }
    if (targets > 0) {
      // Tied records with other codes leave the risk set first.
      const double denom = static_cast<double>(at_risk - others);
      value *= 1.0 - static_cast<double>(targets) / denom;
      curve.jump_times.push_back(t);
      curve.values.push_back(value);
    }
    at_risk -= end - pos;
    pos = end;
  }
  return curve;
}

const SurvivalCurve& StratifiedCurves::for_record(const ObservedRecord& record) const {
  const auto key = stratum_key(record, strata);
  auto it = curves.find(key);
  if (it == curves.end()) {
    throw EstimationError("no fitted curve for stratum " + to_string(key));
  }
  return it->second;
}

namespace {

StratifiedCurves fit_stratified(const Dataset& data, const StrataSpec& strata,
                                CurveTarget target) {
  StratifiedCurves out;
  out.strata = strata;
  for (auto& [key, rows] : stratify(data, strata)) {
    std::vector<double> t(rows.size());
    std::vector<int> s(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      t[i] = data[rows[i]].time;
      s[i] = data[rows[i]].status;
    }
    out.curves.emplace(key, fit_product_limit(t, s, target, key));
  }
  return out;
}

WeightedOutcome weigh(bool indicator, double survival, double floor) {
  WeightedOutcome w;
  w.floored = survival < floor;
  w.denominator = std::max(survival, floor);
  if (indicator) {
    if (w.denominator <= 0.0) {
      throw PositivityError("inverse weight denominator is zero for an observed event");
    }
    w.value = 1.0 / w.denominator;
  }
  return w;
}

bool counts(const ObservedRecord& r, double horizon) {
  return r.status == kEventOfInterest && r.time <= horizon;
}

}  // namespace

StratifiedCurves fit_reverse_km(const Dataset& data, const StrataSpec& strata) {
  return fit_stratified(data, strata, CurveTarget::kCensoring);
}

StratifiedCurves fit_competing_km(const Dataset& data, const StrataSpec& strata) {
  return fit_stratified(data, strata, CurveTarget::kCompeting);
}

std::vector<WeightedOutcome> build_crude_outcomes(const Dataset& data,
                                                  const StratifiedCurves& censoring,
                                                  double horizon, double floor) {
  std::vector<WeightedOutcome> out;
  out.reserve(data.size());
  for (const auto& r : data.records()) {
    const double g = eval_left_limit(censoring.for_record(r), r.time);
    out.push_back(weigh(counts(r, horizon), g, floor));
  }
  return out;
}

std::vector<WeightedOutcome> build_net_outcomes(const Dataset& data,
                                                const StratifiedCurves& censoring,
                                                const StratifiedCurves& competing,
                                                double horizon, double floor) {
  std::vector<WeightedOutcome> out;
  out.reserve(data.size());
  for (const auto& r : data.records()) {
    const double g = eval_left_limit(censoring.for_record(r), r.time);
    const double g2 = eval_left_limit(competing.for_record(r), r.time);
    out.push_back(weigh(counts(r, horizon), g * g2, floor));
  }
  return out;
}

std::size_t count_floored(std::span<const WeightedOutcome> outcomes) {
  return static_cast<std::size_t>(
      std::count_if(outcomes.begin(), outcomes.end(), [](const auto& w) { return w.floored; }));
}

std::vector<double> outcome_values(std::span<const WeightedOutcome> outcomes) {
  std::vector<double> v(outcomes.size());
  for (std::size_t i = 0; i < outcomes.size(); ++i) v[i] = outcomes[i].value;
  return v;
}

void write_curves_csv(std::ostream& out, const StratifiedCurves& curves) {
  out << "stratum,time,value\n";
  for (const auto& [key, curve] : curves.curves) {
    const auto name = to_string(key);
    out << name << ",0,1\n";
    for (std::size_t k = 0; k < curve.jump_times.size(); ++k) {
      out << name << ',' << detail::exact(curve.jump_times[k]) << ','
          << detail::exact(curve.values[k]) << '\n';
    }
  }
}

void write_weights_csv(std::ostream& out, const Dataset& data,
                       std::span<const WeightedOutcome> outcomes) {
  out << "id,value,denominator,floored\n";
  for (std::size_t i = 0; i < outcomes.size(); ++i) {
    out << data[i].id << ',' << detail::exact(outcomes[i].value) << ','
        << detail::exact(outcomes[i].denominator) << ',' << (outcomes[i].floored ? 1 : 0) << '\n';
  }
}

}  // namespace crgrf
