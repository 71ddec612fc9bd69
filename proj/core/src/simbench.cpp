#include "crgrf/simbench.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <limits>
#include <numeric>
#include <optional>
#include <random>

#include "crgrf/error.hpp"
#include "parallel.hpp"
#include "random.hpp"

namespace crgrf {

namespace {

double expit(double v) { return 1.0 / (1.0 + std::exp(-v)); }

double dot(const std::vector<double>& coefs, const std::vector<double>& values) {
  double s = 0.0;
  for (std::size_t i = 0; i < coefs.size(); ++i) {
    if (coefs[i] != 0.0) s += coefs[i] * values[i];
  }
  return s;
}

struct Quadrature {
  std::vector<double> nodes;
  std::vector<double> weights;
};

// Gauss-Legendre rule on (0, 1).
Quadrature gauss_legendre(std::size_t order) {
  Quadrature q;
  q.nodes.resize(order);
  q.weights.resize(order);
  const double n = static_cast<double>(order);
  for (std::size_t i = 0; i < order; ++i) {
    double z = std::cos(std::numbers::pi * (static_cast<double>(i) + 0.75) / (n + 0.5));
    double dp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = 0.0;
      for (std::size_t j = 1; j <= order; ++j) {
        const double p2 = p1;
        p1 = p0;
        const double jd = static_cast<double>(j);
        p0 = ((2.0 * jd - 1.0) * z * p1 - (jd - 1.0) * p2) / jd;
      }
      dp = n * (z * p0 - p1) / (z * z - 1.0);
      const double step = p0 / dp;
      z -= step;
      if (std::abs(step) < 1e-15) break;
    }
    q.nodes[i] = (1.0 - z) / 2.0;
    q.weights[i] = 1.0 / ((1.0 - z * z) * dp * dp);
  }
  return q;
}

const Quadrature& covariate_rule() {
  static const Quadrature rule = gauss_legendre(48);
  return rule;
}

const Quadrature& panel_rule() {
  static const Quadrature rule = gauss_legendre(12);
  return rule;
}

double covariate_min(const CovariateSpec&) { return 0.0; }
double covariate_max(const CovariateSpec& c) {
  return c.kind == CovariateSpec::Kind::kUniform ? 1.0 : static_cast<double>(c.levels - 1);
}

void check_model(const WeibullModel& m, const SimDesign& d, const char* what, bool allow_zero) {
  if (!(m.shape > 0.0)) throw ConfigError(std::string(what) + ": Weibull shape must be positive");
  if (!(allow_zero ? m.rate >= 0.0 : m.rate > 0.0) || !std::isfinite(m.rate)) {
    throw ConfigError(std::string(what) + ": Weibull rate must be positive");
  }
  if (m.covariate_coefs.size() != d.num_covariates()) {
    throw ConfigError(std::string(what) + ": needs one coefficient per covariate");
  }
  if (m.treatment_coefs.size() != d.num_treatments()) {
    throw ConfigError(std::string(what) + ": needs one coefficient per treatment");
  }
}

}  // namespace

std::vector<double> CovariateSpec::level_probabilities() const {
  if (kind != Kind::kCategorical) return {};
  if (probabilities.empty()) return std::vector<double>(levels, 1.0 / static_cast<double>(levels));
  const double total = std::accumulate(probabilities.begin(), probabilities.end(), 0.0);
  std::vector<double> p(probabilities);
  for (auto& v : p) v /= total;
  return p;
}

double WeibullModel::linear_predictor(const std::vector<double>& x,
                                      const std::vector<double>& a) const {
  return dot(covariate_coefs, x) + dot(treatment_coefs, a);
}

double WeibullModel::cumulative_hazard(double t, double lp) const {
  if (rate == 0.0 || t <= 0.0) return 0.0;
  return rate * std::exp(lp) * std::pow(t, shape);
}

void SimDesign::validate() const {
  if (n == 0) throw ConfigError("design sample size must be positive");
  if (!(horizon > 0.0)) throw ConfigError("design horizon must be positive");
  if (treatment_names.empty()) throw ConfigError("design needs at least one treatment");
  if (propensities.size() != treatment_names.size()) {
    throw ConfigError("design needs one propensity model per treatment");
  }
  for (const auto& c : covariates) {
    if (c.kind == CovariateSpec::Kind::kCategorical) {
      if (c.levels < 1) throw ConfigError("categorical covariate " + c.name + " needs levels");
      if (!c.probabilities.empty() && c.probabilities.size() != c.levels) {
        throw ConfigError("categorical covariate " + c.name + " has wrong probability count");
      }
    }
  }
  check_model(event, *this, "event", false);
  check_model(competing, *this, "competing", true);
  check_model(censoring, *this, "censoring", true);
  if (!(max_followup > 0.0)) throw ConfigError("max_followup must be positive");
  for (std::size_t k = 0; k < propensities.size(); ++k) {
    const auto& pm = propensities[k];
    double lo = pm.intercept, hi = pm.intercept;
    if (pm.driver >= 0) {
      if (static_cast<std::size_t>(pm.driver) >= covariates.size()) {
        throw ConfigError("propensity driver out of range for " + treatment_names[k]);
      }
      const auto& c = covariates[static_cast<std::size_t>(pm.driver)];
      const double a = pm.intercept + pm.slope * covariate_min(c);
      const double b = pm.intercept + pm.slope * covariate_max(c);
      lo = std::min(a, b);
      hi = std::max(a, b);
    }
    const double plo = expit(lo), phi = expit(hi);
    if (!(plo > 0.0 && phi < 1.0)) {
      throw ConfigError("propensity of " + treatment_names[k] + " reaches 0 or 1");
    }
  }
  for (const auto& b : binned) {
    if (b.source >= covariates.size() ||
        covariates[b.source].kind != CovariateSpec::Kind::kUniform || b.bins < 1) {
      throw ConfigError("binned column " + b.name + " must bin a uniform covariate");
    }
  }
}

// ---------------------------------------------------------------------------
// Designs

SimDesign default_design() {
  SimDesign d;
  d.name = "default";
  d.n = 500;
  d.horizon = 0.5;
  using Kind = CovariateSpec::Kind;
  d.covariates = {{"X1", Kind::kUniform, 0, {}},     {"X2", Kind::kCategorical, 3, {}},
                  {"X3", Kind::kCategorical, 4, {}}, {"X4", Kind::kUniform, 0, {}},
                  {"X5", Kind::kUniform, 0, {}},     {"X6", Kind::kUniform, 0, {}}};
  for (int k = 1; k <= 10; ++k) d.treatment_names.push_back("A" + std::to_string(k));
  // Each treatment depends on one covariate (drivers cycle through X1..X6).
  d.propensities = {{-0.5, 1.0, 0},  {-0.5, 0.5, 1}, {-0.6, 0.2, 2}, {-0.5, 1.0, 3},
                    {0.0, -1.0, 4},  {-1.0, 1.0, 5}, {0.5, -1.0, 0},  {0.0, -0.5, 1},
                    {-1.0, 0.25, 2}, {-0.25, 0.5, 3}};
  const std::vector<double> no_treatment(10, 0.0);

  d.event.rate = 0.8547;
  d.event.shape = 1.2;
  d.event.covariate_coefs = {0.5, 0.0, 0.15, 0.0, 0.0, 0.0};
  d.event.treatment_coefs = no_treatment;
  d.event.treatment_coefs[0] = -0.3773;

  d.competing.rate = 0.7698;
  d.competing.shape = 1.0;
  d.competing.covariate_coefs = {0.3, 0.2, 0.0, 0.0, 0.0, 0.0};
  d.competing.treatment_coefs = no_treatment;
  d.competing.treatment_coefs[1] = 0.5219;

  d.censoring.rate = 0.5;
  d.censoring.shape = 1.0;
  d.censoring.covariate_coefs.assign(6, 0.0);
  d.censoring.treatment_coefs = no_treatment;

  d.binned = {{"X1bin", 0, 5}};
  return d;
}

double example1_censoring_rate(double fraction) {
  if (!(fraction >= 0.0 && fraction < 1.0)) {
    throw ConfigError("censoring fraction must lie in [0, 1)");
  }
  auto censored = [](double c) {
    double s = 0.0;
    for (int a1 = 0; a1 <= 1; ++a1) {
      for (int a2 = 0; a2 <= 1; ++a2) {
        const double total = std::exp(-0.2 * a1 - 0.2 * a2) + std::exp(-0.2 * a1);
        s += c / (c + total);
      }
    }
    return s / 4.0;
  };
  double lo = 0.0, hi = 1.0;
  while (censored(hi) < fraction) hi *= 2.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    (censored(mid) < fraction ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

SimDesign example1_design(double censoring_fraction, std::size_t n) {
  SimDesign d;
  d.name = "example1";
  d.n = n;
  d.horizon = 1.0;
  d.treatment_names = {"A1", "A2"};
  d.propensities = {{0.0, 0.0, -1}, {0.0, 0.0, -1}};
  d.event = {1.0, 1.0, {}, {-0.2, -0.2}};
  d.competing = {1.0, 1.0, {}, {-0.2, 0.0}};
  d.censoring = {example1_censoring_rate(censoring_fraction), 1.0, {}, {0.0, 0.0}};
  return d;
}

SimDesign registry_design(std::size_t n) {
  SimDesign d;
  d.name = "registry";
  d.n = n;
  d.horizon = 1.0;
  d.max_followup = 5.0;
  using Kind = CovariateSpec::Kind;
  d.covariates.push_back({"sex", Kind::kCategorical, 2, {0.365, 0.635}});
  // Age groups (0,18], (18,25], (25,30], (30,40], ..., (70,80], >80.
  d.covariates.push_back(
      {"agegroup", Kind::kCategorical, 9, {8.3, 13.9, 8.3, 16.7, 16.0, 12.3, 7.8, 8.1, 8.7}});
  const double prevalence[9] = {0.26, 0.17, 0.03, 0.23, 0.33, 0.24, 0.07, 0.29, 0.32};
  for (int c = 0; c < 9; ++c) {
    d.covariates.push_back({"comorb" + std::to_string(c + 1), Kind::kCategorical, 2,
                            {1.0 - prevalence[c], prevalence[c]}});
  }
  const std::size_t p = d.covariates.size();
  for (int k = 1; k <= 10; ++k) {
    d.treatment_names.push_back("drug" + std::to_string(k));
    // Prescribing depends on age group or sex.
    d.propensities.push_back({-1.5 + 0.05 * k, k % 2 == 0 ? 0.15 : 0.3, k % 3 == 0 ? 0 : 1});
  }
  d.event.rate = 0.25;
  d.event.shape = 0.8;
  d.event.covariate_coefs.assign(p, 0.0);
  d.event.covariate_coefs[0] = 0.2;
  d.event.covariate_coefs[1] = -0.05;
  d.event.covariate_coefs[5] = 0.3;
  d.event.treatment_coefs.assign(10, 0.0);
  d.event.treatment_coefs[0] = -0.5;
  d.event.treatment_coefs[3] = 0.3;

  d.competing.rate = 0.01;
  d.competing.shape = 1.0;
  d.competing.covariate_coefs.assign(p, 0.0);
  d.competing.covariate_coefs[1] = 0.45;
  d.competing.covariate_coefs[6] = 0.5;
  d.competing.treatment_coefs.assign(10, 0.0);
  d.competing.treatment_coefs[1] = 0.6;

  d.censoring.rate = 0.05;
  d.censoring.shape = 1.0;
  d.censoring.covariate_coefs.assign(p, 0.0);
  d.censoring.treatment_coefs.assign(10, 0.0);
  return d;
}

// ---------------------------------------------------------------------------
// Simulation

ObservedOutcome LatentDraw::observe() const {
  if (t1 <= t2 && t1 <= c) return {t1, kEventOfInterest};
  if (t2 <= c) return {t2, kCompetingEvent};
  return {c, kCensored};
}

namespace {

double draw_weibull(const WeibullModel& m, double lp, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double e = -std::log1p(-unif(rng));
  if (m.rate == 0.0) return std::numeric_limits<double>::infinity();
  return std::pow(e / (m.rate * std::exp(lp)), 1.0 / m.shape);
}

}  // namespace

Dataset simulate_dataset(const SimDesign& design, std::uint64_t seed) {
  return simulate_dataset(design, design.n, seed);
}

Dataset simulate_dataset(const SimDesign& design, std::size_t n, std::uint64_t seed) {
  design.validate();
  if (n == 0) throw ConfigError("sample size must be positive");
  const std::size_t p = design.num_covariates();
  const std::size_t k = design.num_treatments();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  std::vector<std::vector<double>> level_probs(p);
  for (std::size_t j = 0; j < p; ++j) level_probs[j] = design.covariates[j].level_probabilities();

  std::vector<ObservedRecord> records;
  records.reserve(n);
  std::vector<double> x(p), a(k);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < p; ++j) {
      const auto& c = design.covariates[j];
      const double u = unif(rng);
      if (c.kind == CovariateSpec::Kind::kUniform) {
        x[j] = u;
      } else {
        double cum = 0.0;
        std::size_t level = c.levels - 1;
        for (std::size_t l = 0; l < c.levels; ++l) {
          cum += level_probs[j][l];
          if (u < cum) {
            level = l;
            break;
          }
        }
        x[j] = static_cast<double>(level);
      }
    }
    for (std::size_t t = 0; t < k; ++t) {
      const auto& pm = design.propensities[t];
      const double driver = pm.driver >= 0 ? x[static_cast<std::size_t>(pm.driver)] : 0.0;
      a[t] = unif(rng) < expit(pm.intercept + pm.slope * driver) ? 1.0 : 0.0;
    }
    LatentDraw latent;
    latent.t1 = draw_weibull(design.event, design.event.linear_predictor(x, a), rng);
    latent.t2 = draw_weibull(design.competing, design.competing.linear_predictor(x, a), rng);
    latent.c = std::min(draw_weibull(design.censoring, design.censoring.linear_predictor(x, a), rng),
                        design.max_followup);
    const auto obs = latent.observe();

    ObservedRecord r;
    r.id = std::to_string(i + 1);
    r.time = obs.time;
    r.status = obs.status;
    for (double v : a) r.treatments.push_back(static_cast<std::uint8_t>(v));
    r.covariates = x;
    for (const auto& b : design.binned) {
      const double bins = static_cast<double>(b.bins);
      r.covariates.push_back(std::clamp(std::floor(bins * x[b.source]), 0.0, bins - 1.0));
    }
    records.push_back(std::move(r));
  }

  std::vector<std::string> names;
  std::vector<bool> categorical;
  for (const auto& c : design.covariates) {
    names.push_back(c.name);
    categorical.push_back(c.kind == CovariateSpec::Kind::kCategorical);
  }
  for (const auto& b : design.binned) {
    names.push_back(b.name);
    categorical.push_back(true);
  }
  return Dataset(std::move(records), design.treatment_names, std::move(names),
                 std::move(categorical));
}

// ---------------------------------------------------------------------------
// Truth oracles

double cif_closed_form(double t, int a1, int a2) {
  if (t < 0.0) throw DomainError("time must be non-negative");
  if ((a1 != 0 && a1 != 1) || (a2 != 0 && a2 != 1)) throw DomainError("arms must be 0 or 1");
  const double l1 = std::exp(-0.2 * a1 - 0.2 * a2);
  const double l2 = std::exp(-0.2 * a1);
  return l1 / (l1 + l2) * (1.0 - std::exp(-(l1 + l2) * t));
}

std::pair<double, double> example1_contrasts(double t) {
  double first = 0.0, second = 0.0;
  for (int other = 0; other <= 1; ++other) {
    first += 0.5 * (cif_closed_form(t, 1, other) - cif_closed_form(t, 0, other));
    second += 0.5 * (cif_closed_form(t, other, 1) - cif_closed_form(t, other, 0));
  }
  return {first, second};
}

namespace {

// Risk of event 1 by the horizon for one covariate/treatment profile.
double profile_risk(const SimDesign& d, const std::vector<double>& x, const std::vector<double>& a,
                    bool crude, double horizon) {
  const double lp1 = d.event.linear_predictor(x, a);
  const double h1 = d.event.cumulative_hazard(horizon, lp1);
  if (!crude || d.competing.rate == 0.0) return -std::expm1(-h1);
  // Substituting v = H1(s): int_0^{H1(t0)} exp(-v) S2(H1^{-1}(v)) dv.
  const double lp2 = d.competing.linear_predictor(x, a);
  const double scale1 = d.event.rate * std::exp(lp1);
  const auto& rule = panel_rule();
  constexpr int kPanels = 24;
  double total = 0.0;
  for (int panel = 0; panel < kPanels; ++panel) {
    // Panels refine geometrically towards v = 0 where S2 o H1^{-1} is least smooth.
    const double lo = h1 * std::pow(static_cast<double>(panel) / kPanels, 2.0);
    const double hi = h1 * std::pow(static_cast<double>(panel + 1) / kPanels, 2.0);
    for (std::size_t q = 0; q < rule.nodes.size(); ++q) {
      const double v = lo + (hi - lo) * rule.nodes[q];
      const double s = std::pow(v / scale1, 1.0 / d.event.shape);
      total += (hi - lo) * rule.weights[q] * std::exp(-v) * d.competing.survival(s, lp2);
    }
  }
  return total;
}

}  // namespace

ArmRisks oracle_arm_risks(const SimDesign& design, std::size_t k, Scale scale, double horizon) {
  design.validate();
  if (scale == Scale::kBoth) throw ConfigError("oracle needs scale crude or net");
  if (k >= design.num_treatments()) throw ConfigError("treatment index out of range");
  if (!(horizon > 0.0)) throw ConfigError("horizon must be positive");
  const bool crude = scale == Scale::kCrude && design.competing.rate > 0.0;
  const std::size_t p = design.num_covariates();

  std::vector<std::size_t> others;
  for (std::size_t t = 0; t < design.num_treatments(); ++t) {
    if (t == k) continue;
    if (design.event.treatment_coefs[t] != 0.0 ||
        (crude && design.competing.treatment_coefs[t] != 0.0)) {
      others.push_back(t);
    }
  }
  std::vector<bool> relevant(p, false);
  for (std::size_t j = 0; j < p; ++j) {
    relevant[j] = design.event.covariate_coefs[j] != 0.0 ||
                  (crude && design.competing.covariate_coefs[j] != 0.0);
  }
  for (auto t : others) {
    const int drv = design.propensities[t].driver;
    if (drv >= 0) relevant[static_cast<std::size_t>(drv)] = true;
  }

  // Per-covariate integration nodes.
  std::vector<std::vector<double>> values(p), weights(p);
  for (std::size_t j = 0; j < p; ++j) {
    const auto& c = design.covariates[j];
    if (!relevant[j]) {
      values[j] = {0.0};
      weights[j] = {1.0};
    } else if (c.kind == CovariateSpec::Kind::kUniform) {
      values[j] = covariate_rule().nodes;
      weights[j] = covariate_rule().weights;
    } else {
      weights[j] = c.level_probabilities();
      for (std::size_t l = 0; l < c.levels; ++l) values[j].push_back(static_cast<double>(l));
    }
  }

  ArmRisks risks;
  std::vector<std::size_t> idx(p, 0);
  std::vector<double> x(p), a(design.num_treatments(), 0.0);
  for (;;) {
    double w = 1.0;
    for (std::size_t j = 0; j < p; ++j) {
      x[j] = values[j][idx[j]];
      w *= weights[j][idx[j]];
    }
    const std::size_t combos = std::size_t{1} << others.size();
    for (std::size_t mask = 0; mask < combos; ++mask) {
      double prob = 1.0;
      for (std::size_t o = 0; o < others.size(); ++o) {
        const auto& pm = design.propensities[others[o]];
        const double drv = pm.driver >= 0 ? x[static_cast<std::size_t>(pm.driver)] : 0.0;
        const double pi = expit(pm.intercept + pm.slope * drv);
        const bool on = (mask >> o) & 1U;
        a[others[o]] = on ? 1.0 : 0.0;
        prob *= on ? pi : 1.0 - pi;
      }
      a[k] = 1.0;
      risks.treated += w * prob * profile_risk(design, x, a, crude, horizon);
      a[k] = 0.0;
      risks.control += w * prob * profile_risk(design, x, a, crude, horizon);
    }
    std::size_t j = 0;
    while (j < p && ++idx[j] == values[j].size()) idx[j++] = 0;
    if (j == p) break;
  }
  return risks;
}

double oracle_true_ate(const SimDesign& design, std::size_t k, Scale scale, double horizon) {
  return oracle_arm_risks(design, k, scale, horizon).effect();
}

// ---------------------------------------------------------------------------
// Experiments

std::vector<std::string> scheme_strata(char scheme) {
  switch (scheme) {
    case 'a': return {"A2", "X1bin", "X2"};
    case 'b': return {"A2"};
    case 'c': return {};
    default: throw ConfigError(std::string("unknown adjustment scheme '") + scheme + "'");
  }
}

namespace {

AnalysisConfig scheme_config(const SimDesign& design, const ExperimentConfig& config, char scheme,
                             std::uint64_t seed) {
  AnalysisConfig cfg = config.analysis;
  cfg.horizon = design.horizon;
  cfg.strata_columns = scheme_strata(scheme);
  for (const auto& b : design.binned) {
    if (std::find(cfg.forest_exclude.begin(), cfg.forest_exclude.end(), b.name) ==
        cfg.forest_exclude.end()) {
      cfg.forest_exclude.push_back(b.name);
    }
  }
  cfg.seed = seed;
  cfg.threads = 1;
  return cfg;
}

void check_experiment(const SimDesign& design, const ExperimentConfig& config) {
  design.validate();
  if (config.replicates == 0) throw ConfigError("need at least one replicate");
  if (config.schemes.empty()) throw ConfigError("need at least one adjustment scheme");
  for (char s : config.schemes) scheme_strata(s);
  for (auto k : config.treatments) {
    if (k >= design.num_treatments()) throw ConfigError("treatment index out of range");
  }
}

}  // namespace

const CoverageRow& CoverageReport::find(char scheme, std::string_view treatment,
                                        Scale scale) const {
  for (const auto& r : rows) {
    if (r.scheme == scheme && r.treatment == treatment && r.scale == scale) return r;
  }
  throw ConfigError("coverage report has no row for " + std::string(treatment));
}

CoverageReport run_coverage_experiment(const SimDesign& design, const ExperimentConfig& config) {
  check_experiment(design, config);
  const std::vector<Scale> scales{Scale::kCrude, Scale::kNet};
  const std::size_t ns = config.schemes.size(), nt = config.treatments.size();

  // estimates[m][scheme][treatment * 2 + scale]
  using Cell = std::vector<std::optional<EffectEstimate>>;
  std::vector<std::vector<Cell>> estimates(config.replicates,
                                           std::vector<Cell>(ns, Cell(nt * 2)));
  detail::parallel_for(config.replicates, config.threads, [&](std::size_t m) {
    const auto seed = detail::derive_seed(config.seed, detail::kReplicateStream, m);
    const auto data = simulate_dataset(design, seed);
    for (std::size_t s = 0; s < ns; ++s) {
      const auto cfg = scheme_config(design, config, config.schemes[s], seed);
      for (auto& e : estimate_effects(data, config.treatments, scales, cfg)) {
        const auto pos = static_cast<std::size_t>(
            std::find(config.treatments.begin(), config.treatments.end(), e.treatment_index) -
            config.treatments.begin());
        estimates[m][s][pos * 2 + (e.scale == Scale::kNet ? 1 : 0)] = e;
      }
    }
  });

  CoverageReport report;
  report.n = design.n;
  const double z = normal_quantile(config.analysis.ci_level);
  for (std::size_t s = 0; s < ns; ++s) {
    for (std::size_t t = 0; t < nt; ++t) {
      for (std::size_t sc = 0; sc < 2; ++sc) {
        CoverageRow row;
        row.scheme = config.schemes[s];
        row.treatment = design.treatment_names[config.treatments[t]];
        row.scale = scales[sc];
        row.truth = oracle_true_ate(design, config.treatments[t], scales[sc], design.horizon);
        std::vector<double> est;
        double se_sum = 0.0;
        std::size_t covered = 0;
        for (std::size_t m = 0; m < config.replicates; ++m) {
          const auto& e = estimates[m][s][t * 2 + sc];
          if (!e) continue;
          est.push_back(e->ate);
          se_sum += e->se;
          if (std::abs(e->ate - row.truth) <= z * e->se) ++covered;
        }
        row.replicates = est.size();
        if (!est.empty()) {
          const double cnt = static_cast<double>(est.size());
          row.mean_estimate = std::accumulate(est.begin(), est.end(), 0.0) / cnt;
          double ss = 0.0;
          for (double v : est) ss += (v - row.mean_estimate) * (v - row.mean_estimate);
          row.empirical_sd = est.size() > 1 ? std::sqrt(ss / (cnt - 1.0)) : 0.0;
          row.mean_se = se_sum / cnt;
          row.coverage = static_cast<double>(covered) / cnt;
        }
        report.rows.push_back(std::move(row));
      }
    }
  }
  return report;
}

double RankingReport::fraction(std::size_t n, char scheme, std::string_view treatment,
                               Scale scale) const {
  for (const auto& r : rows) {
    if (r.n == n && r.scheme == scheme && r.treatment == treatment && r.scale == scale) {
      return r.fraction;
    }
  }
  throw ConfigError("ranking report has no row for " + std::string(treatment));
}

RankingReport run_ranking_experiment(const SimDesign& design, const std::vector<std::size_t>& n_grid,
                                     const ExperimentConfig& config) {
  check_experiment(design, config);
  if (n_grid.empty()) throw ConfigError("ranking experiment needs at least one sample size");
  const std::size_t K = design.num_treatments();
  const std::size_t ns = config.schemes.size();
  std::vector<std::size_t> all(K);
  std::iota(all.begin(), all.end(), std::size_t{0});
  const std::vector<Scale> scales{Scale::kCrude, Scale::kNet};

  RankingReport report;
  report.replicates = config.replicates;
  for (auto n : n_grid) {
    // matrix[scheme][scale][m][k]; missing (degenerate) estimates never rank first.
    const double missing = std::numeric_limits<double>::infinity();
    std::vector<std::vector<std::vector<std::vector<double>>>> matrix(
        ns, std::vector<std::vector<std::vector<double>>>(
                2, std::vector<std::vector<double>>(config.replicates,
                                                    std::vector<double>(K, missing))));
    detail::parallel_for(config.replicates, config.threads, [&](std::size_t m) {
      const auto seed =
          detail::derive_seed(config.seed ^ detail::splitmix64(n), detail::kReplicateStream, m);
      const auto data = simulate_dataset(design, n, seed);
      for (std::size_t s = 0; s < ns; ++s) {
        const auto cfg = scheme_config(design, config, config.schemes[s], seed);
        for (const auto& e : estimate_effects(data, all, scales, cfg)) {
          matrix[s][e.scale == Scale::kNet ? 1 : 0][m][e.treatment_index] = e.ate;
        }
      }
    });
    for (std::size_t s = 0; s < ns; ++s) {
      for (std::size_t k = 0; k < K; ++k) {
        for (std::size_t sc = 0; sc < 2; ++sc) {
          report.rows.push_back(RankingRow{n, config.schemes[s], design.treatment_names[k],
                                           scales[sc], ranking_fraction(matrix[s][sc], k)});
        }
      }
    }
  }
  return report;
}

}  // namespace crgrf
