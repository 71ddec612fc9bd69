#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "crgrf/dataset.hpp"
#include "crgrf/effects.hpp"

namespace crgrf {

struct CovariateSpec {
  enum class Kind { kUniform, kCategorical };

  std::string name;
  Kind kind = Kind::kUniform;
  // Categorical levels 0..L-1; empty probabilities mean equal weights.
  std::size_t levels = 0;
  std::vector<double> probabilities;

  std::vector<double> level_probabilities() const;

  bool operator==(const CovariateSpec&) const = default;
};

/// Proportional-hazards Weibull latent time:
///   S(t | x, a) = exp(-rate * exp(lp) * t^shape),
///   lp = covariate_coefs . x + treatment_coefs . a.
/// rate == 0 means the event never happens (time = +inf).
struct WeibullModel {
  double rate = 1.0;
  double shape = 1.0;
  std::vector<double> covariate_coefs;
  std::vector<double> treatment_coefs;

  double linear_predictor(const std::vector<double>& x, const std::vector<double>& a) const;
  double cumulative_hazard(double t, double lp) const;
  double survival(double t, double lp) const { return std::exp(-cumulative_hazard(t, lp)); }

  bool operator==(const WeibullModel&) const = default;
};

// P(A_k = 1 | X) = expit(intercept + slope * X_driver); driver < 0 means none.
struct PropensityModel {
  double intercept = 0.0;
  double slope = 0.0;
  int driver = -1;

  bool operator==(const PropensityModel&) const = default;
};

// Extra categorical column floor(bins * X_source) clamped to [0, bins-1],
// for covariates on (0,1) that must serve as strata.
struct BinnedColumn {
  std::string name;
  std::size_t source = 0;
  std::size_t bins = 5;

  bool operator==(const BinnedColumn&) const = default;
};

struct SimDesign {
  std::string name = "custom";
  std::size_t n = 500;
  double horizon = 0.5;
  std::vector<CovariateSpec> covariates;
  std::vector<std::string> treatment_names;
  std::vector<PropensityModel> propensities;
  WeibullModel event;
  WeibullModel competing;
  WeibullModel censoring;
  // Administrative end of follow-up.
  double max_followup = std::numeric_limits<double>::infinity();
  std::vector<BinnedColumn> binned;

  std::size_t num_covariates() const { return covariates.size(); }
  std::size_t num_treatments() const { return treatment_names.size(); }

  // Throws ConfigError on inconsistent sizes, non-positive shapes or rates,
  // or propensities touching 0 or 1 over the covariate range.
  void validate() const;

  bool operator==(const SimDesign&) const = default;
};

// K = 10 treatments, X1..X6 with X2 (3 levels) and X3 (4 levels) ordered
// categorical; T1 ~ A1 + X1 + X3, T2 ~ A2 + X1 + X2, C ~ 1; horizon 0.5.
// Coefficients are calibrated so the oracle truths approximate the reported
// effects (net A1 -0.113, crude A1 -0.083, crude A2 -0.047).
SimDesign default_design();

// Constant hazards lambda1 = exp(-0.2 a1 - 0.2 a2), lambda2 = exp(-0.2 a1),
// A1, A2 ~ Bernoulli(0.5), exponential censoring giving the requested
// overall censored fraction. No baseline covariates.
SimDesign example1_design(double censoring_fraction = 0.2, std::size_t n = 4000);

// Censoring rate c solving mean over arms of c / (c + lambda1 + lambda2) = fraction.
double example1_censoring_rate(double fraction);

// Registry-shaped smoke design: sex, 9 age groups, 9 comorbidity flags,
// 10 drug indicators, five-year administrative follow-up.
SimDesign registry_design(std::size_t n = 2000);

struct ObservedOutcome {
  double time = 0.0;
  int status = kCensored;
};

struct LatentDraw {
  double t1 = 0.0;
  double t2 = 0.0;
  double c = 0.0;

  // Minimum of the three with ties broken event 1, then event 2, then censoring.
  ObservedOutcome observe() const;
};

Dataset simulate_dataset(const SimDesign& design, std::uint64_t seed);
Dataset simulate_dataset(const SimDesign& design, std::size_t n, std::uint64_t seed);

// F1(t | a1, a2) of the constant-hazard example.
double cif_closed_form(double t, int a1, int a2);

// Averaged contrasts E[F1(t|1,A2) - F1(t|0,A2)] and E[F1(t|A1,1) - F1(t|A1,0)].
std::pair<double, double> example1_contrasts(double t);

struct ArmRisks {
  double treated = 0.0;
  double control = 0.0;

  double effect() const { return treated - control; }
};

// Population risks under A_k := 1 and A_k := 0 by quadrature over the
// covariate law (Gauss-Legendre on uniform covariates, exact sums on
// categorical levels and on the other treatments that matter). Net risk is
// the Weibull CDF of T1; crude risk is the cumulative incidence
// int_0^t0 f1(s) S2(s) ds.
ArmRisks oracle_arm_risks(const SimDesign& design, std::size_t k, Scale scale, double horizon);
double oracle_true_ate(const SimDesign& design, std::size_t k, Scale scale, double horizon);

// Weight adjustment schemes: a = {A2, X1bin, X2}, b = {A2}, c = unadjusted.
std::vector<std::string> scheme_strata(char scheme);

struct ExperimentConfig {
  AnalysisConfig analysis;  // horizon is taken from the design
  std::size_t replicates = 100;
  std::uint64_t seed = 1;
  std::vector<char> schemes{'a'};
  std::vector<std::size_t> treatments{0, 1, 2};
  unsigned threads = 0;
};

struct CoverageRow {
  char scheme = 'a';
  std::string treatment;
  Scale scale = Scale::kNet;
  double truth = 0.0;
  double mean_estimate = 0.0;
  double empirical_sd = 0.0;
  double mean_se = 0.0;
  double coverage = 0.0;
  std::size_t replicates = 0;
};

struct CoverageReport {
  std::size_t n = 0;
  std::vector<CoverageRow> rows;

  const CoverageRow& find(char scheme, std::string_view treatment, Scale scale) const;
};

CoverageReport run_coverage_experiment(const SimDesign& design, const ExperimentConfig& config);

struct RankingRow {
  std::size_t n = 0;
  char scheme = 'b';
  std::string treatment;
  Scale scale = Scale::kNet;
  double fraction = 0.0;
};

struct RankingReport {
  std::size_t replicates = 0;
  std::vector<RankingRow> rows;

  double fraction(std::size_t n, char scheme, std::string_view treatment, Scale scale) const;
};

// For every n, scheme and replicate, estimates all K treatments on both
// scales and reports ranking_fraction per treatment.
RankingReport run_ranking_experiment(const SimDesign& design, const std::vector<std::size_t>& n_grid,
                                     const ExperimentConfig& config);

void write_coverage_csv(std::ostream& out, const CoverageReport& report);
void write_coverage_json(std::ostream& out, const CoverageReport& report);
void write_ranking_report_csv(std::ostream& out, const RankingReport& report);
void write_ranking_report_json(std::ostream& out, const RankingReport& report);

// Human-editable JSON design files.
void save_design(std::ostream& out, const SimDesign& design);
void save_design(const std::string& path, const SimDesign& design);
SimDesign load_design(std::istream& in);
SimDesign load_design(const std::string& path);

}  // namespace crgrf
