#include <cmath>
#include <sstream>

#include "crgrf/error.hpp"
#include "crgrf/simbench.hpp"
#include "doctest.h"

using namespace crgrf;

namespace {

// Crude risk of one covariate-free profile by a fine trapezoid rule on
// h1(s) S1(s) S2(s).
double trapezoid_crude(const WeibullModel& e, const WeibullModel& c, double lp1, double lp2,
                       double t0) {
  const int steps = 200000;
  const double h = t0 / steps;
  auto f = [&](double s) {
    if (s <= 0.0) return e.shape == 1.0 ? e.rate * std::exp(lp1) : 0.0;
    const double hz = e.rate * std::exp(lp1) * e.shape * std::pow(s, e.shape - 1.0);
    return hz * e.survival(s, lp1) * c.survival(s, lp2);
  };
  double total = 0.5 * (f(0.0) + f(t0));
  for (int i = 1; i < steps; ++i) total += f(i * h);
  return total * h;
}

}  // namespace

TEST_SUITE("simbench") {
  TEST_CASE("closed-form example contrasts") {
    const auto [a, b] = example1_contrasts(1.0);
    CHECK(a == doctest::Approx(-0.029045).epsilon(1e-4));
    CHECK(b == doctest::Approx(-0.054673).epsilon(1e-4));
    const auto [c, d] = example1_contrasts(0.1);
    CHECK(c == doctest::Approx(-0.013846).epsilon(1e-4));
    CHECK(d == doctest::Approx(-0.014508).epsilon(1e-4));
    CHECK(cif_closed_form(0.0, 1, 1) == 0.0);
    CHECK_THROWS_AS(cif_closed_form(-1.0, 0, 0), DomainError);
    CHECK_THROWS_AS(cif_closed_form(1.0, 2, 0), DomainError);
  }

  TEST_CASE("quadrature oracle reproduces the closed form") {
    const auto d = example1_design();
    for (double t : {0.1, 0.5, 1.0, 3.0}) {
      const auto [a, b] = example1_contrasts(t);
      CHECK(oracle_true_ate(d, 0, Scale::kCrude, t) == doctest::Approx(a).epsilon(1e-9));
      CHECK(oracle_true_ate(d, 1, Scale::kCrude, t) == doctest::Approx(b).epsilon(1e-9));
      // Net risk: 1 - exp(-lambda1 t) averaged over the other treatment.
      double net = 0.0;
      for (int other = 0; other <= 1; ++other) {
        net += 0.5 * (std::exp(-std::exp(-0.2 * other) * t) -
                      std::exp(-std::exp(-0.2 - 0.2 * other) * t));
      }
      CHECK(oracle_true_ate(d, 0, Scale::kNet, t) == doctest::Approx(net).epsilon(1e-9));
    }
  }

  TEST_CASE("crude oracle matches direct integration for Weibull shapes") {
    SimDesign d;
    d.treatment_names = {"A"};
    d.propensities = {{0.0, 0.0, -1}};
    d.event = {0.9, 1.3, {}, {-0.4}};
    d.competing = {0.7, 0.8, {}, {0.3}};
    d.censoring = {0.5, 1.0, {}, {0.0}};
    const auto r = oracle_arm_risks(d, 0, Scale::kCrude, 0.7);
    CHECK(r.treated == doctest::Approx(trapezoid_crude(d.event, d.competing, -0.4, 0.3, 0.7))
                           .epsilon(1e-7));
    CHECK(r.control ==
          doctest::Approx(trapezoid_crude(d.event, d.competing, 0.0, 0.0, 0.7)).epsilon(1e-7));
    const auto net = oracle_arm_risks(d, 0, Scale::kNet, 0.7);
    CHECK(net.treated == doctest::Approx(1.0 - d.event.survival(0.7, -0.4)));
  }

  TEST_CASE("default design truths have the calibrated signs") {
    const auto d = default_design();
    CHECK(oracle_true_ate(d, 0, Scale::kNet, 0.5) == doctest::Approx(-0.113).epsilon(0.01));
    CHECK(oracle_true_ate(d, 0, Scale::kCrude, 0.5) == doctest::Approx(-0.083).epsilon(0.01));
    CHECK(std::abs(oracle_true_ate(d, 1, Scale::kNet, 0.5)) < 1e-12);
    CHECK(oracle_true_ate(d, 1, Scale::kCrude, 0.5) < 0.0);
    CHECK(std::abs(oracle_true_ate(d, 2, Scale::kCrude, 0.5)) < 1e-12);
    CHECK_THROWS_AS(oracle_true_ate(d, 0, Scale::kBoth, 0.5), ConfigError);
    CHECK_THROWS_AS(oracle_true_ate(d, 10, Scale::kNet, 0.5), ConfigError);
  }

  TEST_CASE("latent minimum and tie convention") {
    CHECK(LatentDraw{1.0, 2.0, 3.0}.observe().status == kEventOfInterest);
    CHECK(LatentDraw{2.0, 1.0, 3.0}.observe().status == kCompetingEvent);
    CHECK(LatentDraw{2.0, 3.0, 1.0}.observe().status == kCensored);
    CHECK(LatentDraw{1.0, 1.0, 1.0}.observe().status == kEventOfInterest);
    CHECK(LatentDraw{2.0, 1.0, 1.0}.observe().status == kCompetingEvent);
    CHECK(LatentDraw{2.0, 1.0, 1.0}.observe().time == 1.0);
  }

  TEST_CASE("simulation is deterministic and well formed") {
    const auto d = default_design();
    const auto a = simulate_dataset(d, 5);
    const auto b = simulate_dataset(d, 5);
    const auto c = simulate_dataset(d, 6);
    REQUIRE(a.size() == 500);
    CHECK(a.num_treatments() == 10);
    CHECK(a.covariate_names().back() == "X1bin");
    bool differs = false;
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].time == b[i].time);
      CHECK(a[i].treatments == b[i].treatments);
      differs = differs || a[i].time != c[i].time;
      CHECK(a[i].covariates[6] == std::floor(5.0 * a[i].covariates[0]));
      CHECK(a[i].covariates[1] <= 2.0);
      CHECK(a[i].covariates[2] <= 3.0);
    }
    CHECK(differs);
    CHECK(a[0].id == "1");
    const auto counts = a.event_counts();
    CHECK(counts[0] > 0);
    CHECK(counts[1] > 0);
    CHECK(counts[2] > 0);
  }

  TEST_CASE("example censoring rate hits the requested fraction") {
    const double rate = example1_censoring_rate(0.2);
    const auto data = simulate_dataset(example1_design(0.2, 20000), 8);
    const double share = static_cast<double>(data.event_counts()[0]) / 20000.0;
    CHECK(share == doctest::Approx(0.2).epsilon(0.05));
    CHECK(rate > 0.0);
    CHECK(example1_censoring_rate(0.0) == doctest::Approx(0.0).epsilon(1e-9));
    CHECK_THROWS_AS(example1_censoring_rate(1.0), ConfigError);
  }

  TEST_CASE("design validation") {
    auto d = default_design();
    CHECK_NOTHROW(d.validate());
    d.event.shape = 0.0;
    CHECK_THROWS_AS(d.validate(), ConfigError);
    d = default_design();
    d.propensities[0].intercept = 1000.0;
    CHECK_THROWS_AS(d.validate(), ConfigError);
    d = default_design();
    d.event.covariate_coefs.pop_back();
    CHECK_THROWS_AS(d.validate(), ConfigError);
    d = default_design();
    d.binned[0].source = 1;
    CHECK_THROWS_AS(d.validate(), ConfigError);
  }

  TEST_CASE("design files round trip") {
    for (const auto& d : {default_design(), example1_design(), registry_design()}) {
      std::stringstream io;
      save_design(io, d);
      const auto back = load_design(io);
      CHECK(back == d);
    }
    std::istringstream bad("{\"n\": 3}");
    CHECK_THROWS_AS(load_design(bad), ConfigError);
  }

  TEST_CASE("adjustment schemes") {
    CHECK(scheme_strata('a') == std::vector<std::string>{"A2", "X1bin", "X2"});
    CHECK(scheme_strata('b') == std::vector<std::string>{"A2"});
    CHECK(scheme_strata('c').empty());
    CHECK_THROWS_AS(scheme_strata('d'), ConfigError);
  }

  TEST_CASE("small experiments run end to end") {
    ExperimentConfig ec;
    ec.replicates = 3;
    ec.analysis.trees = 16;
    ec.schemes = {'a', 'c'};
    ec.treatments = {0, 1};
    ec.threads = 1;
    auto d = default_design();
    d.n = 200;
    const auto cov = run_coverage_experiment(d, ec);
    CHECK(cov.rows.size() == 8);
    const auto& row = cov.find('a', "A1", Scale::kNet);
    CHECK(row.replicates == 3);
    CHECK(row.coverage >= 0.0);
    CHECK(row.coverage <= 1.0);
    CHECK(row.truth == doctest::Approx(oracle_true_ate(d, 0, Scale::kNet, 0.5)));

    ec.schemes = {'b'};
    const auto rank = run_ranking_experiment(d, {100, 150}, ec);
    CHECK(rank.rows.size() == 2 * 10 * 2);
    double total = 0.0;
    for (const auto& r : rank.rows) {
      if (r.n == 100 && r.scale == Scale::kNet) total += r.fraction;
    }
    CHECK(total >= 1.0);  // ties may credit several treatments
    std::ostringstream csv;
    write_coverage_csv(csv, cov);
    CHECK(csv.str().rfind("n,scheme,treatment,scale,truth", 0) == 0);
  }
}
