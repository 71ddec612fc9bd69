#include <ostream>
#include <string>

#include "crgrf/effects.hpp"
#include "crgrf/simbench.hpp"
#include "format.hpp"
#include "json.hpp"

namespace crgrf {

namespace {

using nlohmann::json;
using detail::num;

json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json estimate_json(const EffectEstimate& e) {
  return {{"treatment", e.treatment},
          {"scale", std::string(to_string(e.scale))},
          {"horizon", e.horizon},
          {"ate", finite_or_null(e.ate)},
          {"se", finite_or_null(e.se)},
          {"ci_low", finite_or_null(e.ci_low)},
          {"ci_high", finite_or_null(e.ci_high)},
          {"direction", std::string(to_string(e.direction()))},
          {"floored_weights", e.floored_weights}};
}

}  // namespace

void write_ranking_csv(std::ostream& out, const RankingTable& table) {
  out << "rank,treatment,scale,ate,se,ci_low,ci_high,direction\n";
  std::size_t rank = 1;
  for (const auto& e : table.entries) {
    out << rank++ << ',' << e.treatment << ',' << to_string(e.scale) << ',' << num(e.ate) << ','
        << num(e.se) << ',' << num(e.ci_low) << ',' << num(e.ci_high) << ','
        << to_string(e.direction()) << '\n';
  }
}

void write_ranking_json(std::ostream& out, const RankingTable& table) {
  json j;
  j["scale"] = std::string(to_string(table.scale));
  j["horizon"] = table.horizon;
  j["ranking"] = json::array();
  for (const auto& e : table.entries) j["ranking"].push_back(estimate_json(e));
  j["skipped"] = table.skipped;
  out << j.dump(2) << '\n';
}

void write_plot_data(std::ostream& out, const RankingTable& table) {
  out << "position,treatment,ate,ci_low,ci_high\n";
  std::size_t pos = 1;
  for (const auto& e : table.entries) {
    out << pos++ << ',' << e.treatment << ',' << num(e.ate) << ',' << num(e.ci_low) << ','
        << num(e.ci_high) << '\n';
  }
}

void write_estimate_json(std::ostream& out, const EffectEstimate& estimate) {
  out << estimate_json(estimate).dump(2) << '\n';
}

void write_coverage_csv(std::ostream& out, const CoverageReport& report) {
  out << "n,scheme,treatment,scale,truth,mean_estimate,empirical_sd,mean_se,coverage,replicates\n";
  for (const auto& r : report.rows) {
    out << report.n << ',' << r.scheme << ',' << r.treatment << ',' << to_string(r.scale) << ','
        << num(r.truth) << ',' << num(r.mean_estimate) << ',' << num(r.empirical_sd) << ','
        << num(r.mean_se) << ',' << num(r.coverage) << ',' << r.replicates << '\n';
  }
}

void write_coverage_json(std::ostream& out, const CoverageReport& report) {
  json j;
  j["n"] = report.n;
  j["rows"] = json::array();
  for (const auto& r : report.rows) {
    j["rows"].push_back({{"scheme", std::string(1, r.scheme)},
                         {"treatment", r.treatment},
                         {"scale", std::string(to_string(r.scale))},
                         {"truth", finite_or_null(r.truth)},
                         {"mean_estimate", finite_or_null(r.mean_estimate)},
                         {"empirical_sd", finite_or_null(r.empirical_sd)},
                         {"mean_se", finite_or_null(r.mean_se)},
                         {"coverage", finite_or_null(r.coverage)},
                         {"replicates", r.replicates}});
  }
  out << j.dump(2) << '\n';
}

void write_ranking_report_csv(std::ostream& out, const RankingReport& report) {
  out << "n,scheme,treatment,scale,fraction,replicates\n";
  for (const auto& r : report.rows) {
    out << r.n << ',' << r.scheme << ',' << r.treatment << ',' << to_string(r.scale) << ','
        << num(r.fraction) << ',' << report.replicates << '\n';
  }
}

void write_ranking_report_json(std::ostream& out, const RankingReport& report) {
  json j;
  j["replicates"] = report.replicates;
  j["rows"] = json::array();
  for (const auto& r : report.rows) {
    j["rows"].push_back({{"n", r.n},
                         {"scheme", std::string(1, r.scheme)},
                         {"treatment", r.treatment},
                         {"scale", std::string(to_string(r.scale))},
                         {"fraction", r.fraction}});
  }
  out << j.dump(2) << '\n';
}

}  // namespace crgrf
