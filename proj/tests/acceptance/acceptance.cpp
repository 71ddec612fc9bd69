// Acceptance suite: one PASS/FAIL line per criterion.
//
//   crgrf_acceptance            run all criteria
//   crgrf_acceptance 1 6 7      run a subset
//
// Wall-clock budgets quoted for four cores are scaled by 4 / hardware threads
// when fewer cores are available.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "../support/oracles.hpp"
#include "cli.hpp"
#include "crgrf/effects.hpp"
#include "crgrf/forest.hpp"
#include "crgrf/ipcw.hpp"
#include "crgrf/simbench.hpp"

using namespace crgrf;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* pattern, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, pattern, a);
  return buf;
}

std::string num(double v) { return fmt("%.4f", v); }

double core_scale() {
  const unsigned hw = std::max(1U, std::thread::hardware_concurrency());
  return std::max(1.0, 4.0 / static_cast<double>(hw));
}

// -- 1 ----------------------------------------------------------------------

Outcome example1_oracle() {
  const char* argv[] = {"crgrf", "oracle", "--example1", "--t", "0.1,1"};
  std::ostringstream out, err;
  const int code = cli::run(5, argv, out, err);
  if (code != 0) return {false, "oracle exited with " + std::to_string(code)};
  std::istringstream in(out.str());
  std::string line;
  std::getline(in, line);  // header
  std::map<double, std::pair<double, double>> got;
  while (std::getline(in, line)) {
    double t = 0, a = 0, b = 0;
    if (std::sscanf(line.c_str(), "%lf,%lf,%lf", &t, &a, &b) == 3) got[t] = {a, b};
  }
  const std::map<double, std::pair<double, double>> reported{{0.1, {-0.0138, -0.0145}},
                                                             {1.0, {-0.0290, -0.0547}}};
  double worst = 0.0;
  for (const auto& [t, ab] : reported) {
    if (!got.count(t)) return {false, "missing t=" + num(t)};
    worst = std::max({worst, std::abs(got[t].first - ab.first), std::abs(got[t].second - ab.second)});
  }
  return {worst <= 5e-4, "max |cli - reported| = " + fmt("%.2e", worst)};
}

// -- 2 ----------------------------------------------------------------------

Outcome example1_forest() {
  std::vector<double> est;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto data = simulate_dataset(example1_design(0.2, 4000), 1000 + seed);
    AnalysisConfig cfg;
    cfg.horizon = 1.0;
    cfg.trees = 200;
    cfg.seed = seed;
    est.push_back(run_two_step(data, 0, Scale::kCrude, cfg).ate);
  }
  std::sort(est.begin(), est.end());
  const double median = 0.5 * (est[4] + est[5]);
  const double target = example1_contrasts(1.0).first;
  return {std::abs(median - target) <= 0.012,
          "median crude A1 = " + num(median) + " vs " + num(target) + " (tolerance 0.012)"};
}

// -- 3, 4 -------------------------------------------------------------------

std::optional<CoverageReport> coverage_cache;

const CoverageReport& coverage_report() {
  if (!coverage_cache) {
    ExperimentConfig ec;
    ec.replicates = 100;
    ec.seed = 20240601;
    ec.schemes = {'a', 'c'};
    ec.treatments = {0, 1, 2};
    ec.analysis.trees = 1000;
    coverage_cache = run_coverage_experiment(default_design(), ec);
  }
  return *coverage_cache;
}

Outcome coverage_scheme_a() {
  const auto& report = coverage_report();
  bool ok = true;
  std::string detail;
  for (const char* t : {"A1", "A2", "A3"}) {
    for (Scale s : {Scale::kNet, Scale::kCrude}) {
      const auto& row = report.find('a', t, s);
      ok = ok && row.coverage >= 0.90 && row.coverage <= 0.99;
      detail += std::string(t) + "/" + std::string(to_string(s)) + "=" + fmt("%.2f", row.coverage) + " ";
    }
  }
  return {ok, detail + "(required [0.90, 0.99])"};
}

Outcome bias_scheme_c() {
  const auto& row = coverage_report().find('c', "A2", Scale::kNet);
  return {row.mean_estimate < -0.02 && row.coverage < 0.80,
          "net A2 mean = " + num(row.mean_estimate) + ", coverage = " + fmt("%.2f", row.coverage) +
              " (required < -0.02 and < 0.80)"};
}

// -- 5 ----------------------------------------------------------------------

Outcome ranking() {
  ExperimentConfig ec;
  ec.replicates = 100;
  ec.seed = 20240602;
  ec.schemes = {'b'};
  const std::vector<std::size_t> grid{200, 500, 1000, 1500};
  const auto report = run_ranking_experiment(default_design(), grid, ec);
  auto r = [&](std::size_t n, const char* t, Scale s) { return report.fraction(n, 'b', t, s); };
  const double gain = r(1500, "A1", Scale::kNet) - r(200, "A1", Scale::kNet);
  bool ok = gain >= 0.2;
  double worst_a2 = 0.0, worst_a3 = 0.0;
  for (auto n : grid) {
    worst_a2 = std::max(worst_a2, r(n, "A2", Scale::kNet));
    worst_a3 = std::max(worst_a3, r(n, "A3", Scale::kNet));
  }
  ok = ok && worst_a2 < 0.1 && worst_a3 < 0.1;
  const double crude_a2 = r(1000, "A2", Scale::kCrude), net_a2 = r(1000, "A2", Scale::kNet);
  ok = ok && crude_a2 > net_a2;
  std::string detail = "R_net(A1) n=200 " + fmt("%.2f", r(200, "A1", Scale::kNet)) + " -> n=1500 " +
                       fmt("%.2f", r(1500, "A1", Scale::kNet)) + "; max R_net(A2) " +
                       fmt("%.2f", worst_a2) + ", max R_net(A3) " + fmt("%.2f", worst_a3) +
                       "; n=1000 R_crude(A2) " + fmt("%.2f", crude_a2) + " vs R_net(A2) " +
                       fmt("%.2f", net_a2);
  return {ok, detail};
}

// -- 6 ----------------------------------------------------------------------

Outcome table2_truths() {
  const auto d = default_design();
  const double t0 = d.horizon;
  const double net1 = oracle_true_ate(d, 0, Scale::kNet, t0);
  const double crude1 = oracle_true_ate(d, 0, Scale::kCrude, t0);
  const double net2 = oracle_true_ate(d, 1, Scale::kNet, t0);
  const double crude2 = oracle_true_ate(d, 1, Scale::kCrude, t0);
  const double net3 = oracle_true_ate(d, 2, Scale::kNet, t0);
  const double crude3 = oracle_true_ate(d, 2, Scale::kCrude, t0);
  const bool ok = net1 < 0 && crude1 < 0 && std::abs(net2) <= 1e-4 && crude2 < 0 &&
                  std::abs(net3) <= 1e-4 && std::abs(crude3) <= 1e-4 &&
                  std::abs(net1 - (-0.113)) < 0.03;
  return {ok, "net A1 " + num(net1) + ", crude A1 " + num(crude1) + ", net A2 " + num(net2) +
                  ", crude A2 " + num(crude2) + ", net/crude A3 " + num(net3) + "/" + num(crude3)};
}

// -- 7 ----------------------------------------------------------------------

ForestData random_forest_data(std::size_t n, std::size_t p, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<std::vector<double>> cols(p, std::vector<double>(n));
  std::vector<double> a(n), y(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (auto& c : cols) c[i] = unif(rng);
    a[i] = unif(rng) < 0.5 ? 1.0 : 0.0;
    y[i] = unif(rng) < 0.6 ? 0.0 : 1.0 / (0.2 + unif(rng));
  }
  a[0] = 1.0;
  a[1] = 0.0;
  return ForestData::from_columns(cols, a, y);
}

Outcome properties() {
  using clock = std::chrono::steady_clock;
  std::vector<std::string> failed;
  double slowest = 0.0;
  auto suite = [&](const char* name, const std::function<bool()>& body) {
    const auto start = clock::now();
    const bool ok = body();
    const double secs = std::chrono::duration<double>(clock::now() - start).count();
    slowest = std::max(slowest, secs);
    if (!ok || secs >= 60.0) failed.push_back(name);
  };
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  suite("sum rho", [&] {
    for (int rep = 0; rep < 500; ++rep) {
      const std::size_t n = 2 + static_cast<std::size_t>(rep % 200);
      const auto d = random_forest_data(n, 1, rng);
      std::vector<std::size_t> members(n);
      std::iota(members.begin(), members.end(), std::size_t{0});
      const auto rho = label_pseudo_outcomes(members, d.treatment, d.outcome);
      const double s = std::accumulate(rho.begin(), rho.end(), 0.0);
      if (std::abs(s) > 1e-10 * static_cast<double>(n)) return false;
    }
    return true;
  });

  suite("sum alpha", [&] {
    const auto d = random_forest_data(400, 3, rng);
    ForestOptions o;
    o.trees = 100;
    o.seed = 3;
    const auto model = grow_forest(d, o);
    for (int rep = 0; rep < 200; ++rep) {
      const std::vector<double> x{unif(rng), unif(rng), unif(rng)};
      const auto alpha = kernel_weights(model, x);
      if (std::abs(std::accumulate(alpha.begin(), alpha.end(), 0.0) - 1.0) > 1e-12) return false;
    }
    return true;
  });

  suite("phi forms", [&] {
    for (int rep = 0; rep < 1000; ++rep) {
      const double a = unif(rng) < 0.5 ? 1.0 : 0.0;
      const double pi = 0.01 + 0.98 * unif(rng);
      const double y = 10.0 * unif(rng), m = unif(rng), theta = 2.0 * unif(rng) - 1.0;
      const double v1 = phi_influence(y, a, pi, m, theta);
      const double v2 = phi_influence_residual_form(y, a, pi, m, theta);
      if (std::abs(v1 - v2) > 1e-10 * std::max(1.0, std::abs(v1))) return false;
    }
    return true;
  });

  suite("best split", [&] {
    for (const auto& fx : testing::split_fixtures(12, 40)) {
      const auto& d = fx.data;
      std::vector<std::size_t> covs(d.p);
      std::iota(covs.begin(), covs.end(), std::size_t{0});
      const auto got = best_split(fx.members, d.treatment, d.outcome, d, covs, fx.min_size);
      const auto want =
          testing::brute_best_split(fx.members, d.treatment, d.outcome, d, fx.min_size);
      if (got.has_value() != want.has_value()) return false;
      if (!got) continue;
      const auto labels = testing::brute_labels(fx.members, d.treatment, d.outcome);
      const auto score = testing::brute_criterion(fx.members, labels, d.treatment, d,
                                                  got->covariate, got->threshold, fx.min_size);
      const double tol = 1e-10 * std::max(1.0, want->criterion);
      if (!score || std::abs(*score - want->criterion) > tol) return false;
    }
    return true;
  });

  suite("product limit", [&] {
    for (const auto& fx : testing::km_fixtures(8, 100)) {
      std::set<double> probes(fx.times.begin(), fx.times.end());
      for (double v : fx.times) probes.insert(v + 0.25);
      for (auto [target, code] : {std::pair{CurveTarget::kCensoring, 0},
                                  std::pair{CurveTarget::kCompeting, 2}}) {
        const auto curve = fit_product_limit(fx.times, fx.statuses, target);
        for (double p : probes) {
          if (curve.at(p) != testing::brute_product_limit(fx.times, fx.statuses, code, p)) {
            return false;
          }
        }
      }
    }
    return true;
  });

  suite("crude equals net", [&] {
    auto design = example1_design(0.2, 800);
    design.competing.rate = 0.0;
    const auto data = simulate_dataset(design, 31);
    if (data.event_counts()[2] != 0) return false;
    AnalysisConfig cfg;
    cfg.horizon = 1.0;
    cfg.trees = 100;
    const auto c = run_two_step(data, 0, Scale::kCrude, cfg);
    const auto n = run_two_step(data, 0, Scale::kNet, cfg);
    return c.ate == n.ate && c.se == n.se;
  });

  std::string detail = "6 suites, slowest " + fmt("%.2f", slowest) + " s";
  for (const auto& f : failed) detail += "; failed: " + f;
  return {failed.empty(), detail};
}

// -- 8 ----------------------------------------------------------------------

Outcome identification() {
  const double t0 = 1.0;
  const auto data = simulate_dataset(example1_design(0.2, 20000), 4242);
  const auto strata = resolve_strata(data, {"A1", "A2"}, std::nullopt);
  const auto g = fit_reverse_km(data, strata);
  const auto y = outcome_values(build_crude_outcomes(data, g, t0, 0.01));
  double worst = 0.0;
  for (int a1 = 0; a1 <= 1; ++a1) {
    for (int a2 = 0; a2 <= 1; ++a2) {
      double sum = 0.0, sq = 0.0;
      std::size_t count = 0;
      for (std::size_t i = 0; i < data.size(); ++i) {
        if (data[i].treatments[0] != a1 || data[i].treatments[1] != a2) continue;
        sum += y[i];
        sq += y[i] * y[i];
        ++count;
      }
      const double c = static_cast<double>(count);
      const double mean = sum / c;
      const double se = std::sqrt((sq / c - mean * mean) / (c - 1.0));
      worst = std::max(worst, std::abs(mean - cif_closed_form(t0, a1, a2)) / se);
    }
  }
  return {worst <= 3.0, "largest |mean - F1| = " + fmt("%.2f", worst) + " Monte Carlo SE"};
}

struct Criterion {
  int id;
  const char* name;
  double budget_seconds;
  bool scaled;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all{
      {1, "example-1 closed form via oracle command", 1.0, false, example1_oracle},
      {2, "forest recovers example-1 crude effect", 120.0, false, example1_forest},
      {3, "coverage under weight scheme (a)", 900.0, true, coverage_scheme_a},
      {4, "net A2 bias under unadjusted weights (c)", 900.0, true, bias_scheme_c},
      {5, "ranking fractions under scheme (b)", 1800.0, true, ranking},
      {6, "oracle truths of the calibrated design", 60.0, false, table2_truths},
      {7, "property suites", 360.0, false, properties},
      {8, "identification of F1 by weighted outcomes", 60.0, false, identification},
  };
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));

  bool all_pass = true;
  for (const auto& c : all) {
    if (!wanted.empty() && !wanted.count(c.id)) continue;
    const double budget = c.budget_seconds * (c.scaled ? core_scale() : 1.0);
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool pass = o.pass && secs <= budget;
    all_pass = all_pass && pass;
    std::printf("criterion %d %s: %s | %s | %.1f s (budget %.0f s)\n", c.id, pass ? "PASS" : "FAIL",
                c.name, o.detail.c_str(), secs, budget);
    std::fflush(stdout);
  }
  return all_pass ? 0 : 1;
}
