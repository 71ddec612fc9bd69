#include "cli.hpp"

#include <filesystem>
#include <fstream>
#include <functional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "crgrf/dataset.hpp"
#include "crgrf/effects.hpp"
#include "crgrf/error.hpp"
#include "crgrf/forest.hpp"
#include "crgrf/ipcw.hpp"
#include "crgrf/simbench.hpp"

namespace crgrf::cli {

namespace {

namespace fs = std::filesystem;

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

struct DataFlags {
  std::string input;
  std::string id_col = "id";
  std::string time_col = "time";
  std::string status_col = "status";
  std::vector<std::string> treatment_cols;
  std::vector<std::string> treatments;
  std::vector<std::string> covariates;
  std::vector<std::string> categorical;

  void attach(CLI::App* app) {
    app->add_option("--input", input, "Input CSV file")->required();
    app->add_option("--id-col", id_col, "Record id column (empty: row numbers)")
        ->capture_default_str();
    app->add_option("--time-col", time_col, "Follow-up time column")->capture_default_str();
    app->add_option("--status-col", status_col, "Status column: 0 censored, 1 event, 2 competing")
        ->capture_default_str();
    app->add_option("--treatment-cols", treatment_cols,
                    "All binary treatment columns (default: --treatments)")
        ->delimiter(',');
    app->add_option("--treatments", treatments, "Treatments to analyse (default: all)")
        ->delimiter(',');
    app->add_option("--covariates", covariates, "Baseline covariate columns")->delimiter(',');
    app->add_option("--categorical", categorical, "Covariates holding integer category codes")
        ->delimiter(',');
  }

  Dataset load() const {
    CsvSchema schema;
    schema.id_col = id_col;
    schema.time_col = time_col;
    schema.status_col = status_col;
    schema.treatment_cols = treatment_cols.empty() ? treatments : treatment_cols;
    if (schema.treatment_cols.empty()) {
      throw ConfigError("give --treatment-cols or --treatments");
    }
    schema.covariate_cols = covariates;
    schema.categorical_cols = categorical;
    return load_csv(input, schema);
  }

  std::vector<std::size_t> selected(const Dataset& data) const {
    std::vector<std::size_t> out;
    if (treatments.empty()) {
      for (std::size_t k = 0; k < data.num_treatments(); ++k) out.push_back(k);
      return out;
    }
    for (const auto& name : treatments) {
      const auto k = data.treatment_index(name);
      if (!k) throw ConfigError("unknown treatment " + name);
      out.push_back(*k);
    }
    return out;
  }
};

struct AnalysisFlags {
  double horizon = 0.0;
  std::string scale = "net";
  std::vector<std::string> strata{std::string(kCurrentTreatment)};
  std::vector<std::string> forest_exclude;
  std::size_t trees = 200;
  std::uint64_t seed = 42;
  std::size_t min_node_size = 5;
  double weight_floor = 0.01;
  double ci_level = 0.95;
  unsigned threads = 0;
  std::string dump_dir;

  void attach(CLI::App* app, bool allow_both) {
    app->add_option("--horizon", horizon, "Time horizon t0")->required();
    app->add_option("--scale", scale, "crude, net or both")
        ->capture_default_str()
        ->check(allow_both ? CLI::IsMember({"crude", "net", "both"})
                           : CLI::IsMember({"crude", "net"}));
    app->add_option("--strata", strata,
                    "Columns defining weight strata; @treatment is the analysed treatment, "
                    "'none' disables stratification")
        ->delimiter(',')
        ->capture_default_str();
    app->add_option("--forest-exclude", forest_exclude,
                    "Strata-only covariates kept out of the forest")
        ->delimiter(',');
    app->add_option("--trees", trees, "Trees per forest")->capture_default_str();
    app->add_option("--seed", seed, "Random seed")->capture_default_str();
    app->add_option("--min-node-size", min_node_size, "Minimum leaf size")->capture_default_str();
    app->add_option("--weight-floor", weight_floor, "Lower bound on weight denominators")
        ->capture_default_str();
    app->add_option("--ci-level", ci_level, "Confidence level")->capture_default_str();
    app->add_option("--threads", threads, "Worker threads (0: all cores)")->capture_default_str();
    app->add_option("--dump-dir", dump_dir,
                    "Write forest models, weight curves and outcomes to this directory");
  }

  AnalysisConfig config() const {
    AnalysisConfig c;
    c.horizon = horizon;
    c.scale = parse_scale(scale);
    if (strata.size() == 1 && strata[0] == "none") {
      c.strata_columns.clear();
    } else {
      c.strata_columns = strata;
    }
    c.forest_exclude = forest_exclude;
    c.trees = trees;
    c.seed = seed;
    c.min_node_size = min_node_size;
    c.weight_floor = weight_floor;
    c.ci_level = ci_level;
    c.threads = threads;
    c.validate();
    return c;
  }

  std::vector<Scale> scales() const {
    const auto s = parse_scale(scale);
    if (s == Scale::kBoth) return {Scale::kNet, Scale::kCrude};
    return {s};
  }
};

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  return out;
}

void dump_two_step(const fs::path& dir, const Dataset& data, const TwoStepResult& r) {
  fs::create_directories(dir);
  const auto& name = r.estimate.treatment;
  const std::string tag = name + "_" + std::string(to_string(r.estimate.scale));
  {
    auto out = open_out(dir / ("model_" + tag + ".txt"));
    write_forest_text(out, r.model);
  }
  {
    auto out = open_out(dir / ("weights_" + tag + ".csv"));
    write_weights_csv(out, data, r.outcomes);
  }
  {
    auto out = open_out(dir / ("curves_" + name + "_censoring.csv"));
    write_curves_csv(out, r.censoring);
  }
  if (r.competing) {
    auto out = open_out(dir / ("curves_" + name + "_competing.csv"));
    write_curves_csv(out, *r.competing);
  }
}

// Estimates per treatment and scale; with a dump directory every two-step
// result is written out as it is produced.
std::vector<EffectEstimate> estimate_all(const Dataset& data, const std::vector<std::size_t>& ks,
                                         const std::vector<Scale>& scales,
                                         const AnalysisConfig& config,
                                         const std::string& dump_dir) {
  if (dump_dir.empty()) return estimate_effects(data, ks, scales, config);
  std::vector<EffectEstimate> out;
  for (auto k : ks) {
    for (auto s : scales) {
      auto r = run_two_step_detailed(data, k, s, config);
      dump_two_step(dump_dir, data, r);
      out.push_back(r.estimate);
    }
  }
  return out;
}

void print_table(std::ostream& out, const RankingTable& table) {
  out << "ranking scale=" << to_string(table.scale) << " horizon=" << fmt(table.horizon) << '\n';
  out << "rank\ttreatment\tate\tse\tci_low\tci_high\tdirection\n";
  std::size_t rank = 1;
  for (const auto& e : table.entries) {
    out << rank++ << '\t' << e.treatment << '\t' << fmt(e.ate) << '\t' << fmt(e.se) << '\t'
        << fmt(e.ci_low) << '\t' << fmt(e.ci_high) << '\t' << to_string(e.direction()) << '\n';
  }
  for (const auto& s : table.skipped) out << "skipped (degenerate): " << s << '\n';
}

int cmd_rank(const DataFlags& df, const AnalysisFlags& af, const std::string& out_dir,
             std::ostream& out) {
  const auto config = af.config();
  const auto data = df.load();
  std::vector<std::size_t> usable;
  std::vector<std::string> skipped;
  for (auto k : df.selected(data)) {
    if (data.is_degenerate(k)) {
      skipped.push_back(data.treatment_names()[k]);
    } else {
      usable.push_back(k);
    }
  }
  const auto scales = af.scales();
  std::vector<EffectEstimate> all;
  if (!usable.empty()) all = estimate_all(data, usable, scales, config, af.dump_dir);

  fs::create_directories(out_dir);
  for (auto s : scales) {
    std::vector<EffectEstimate> rows;
    for (const auto& e : all) {
      if (e.scale == s) rows.push_back(e);
    }
    const auto table = make_ranking(std::move(rows), s, config.horizon, skipped);
    const std::string tag(to_string(s));
    {
      auto f = open_out(fs::path(out_dir) / ("ranking_" + tag + ".csv"));
      write_ranking_csv(f, table);
    }
    {
      auto f = open_out(fs::path(out_dir) / ("ranking_" + tag + ".json"));
      write_ranking_json(f, table);
    }
    {
      auto f = open_out(fs::path(out_dir) / ("plot_" + tag + ".csv"));
      write_plot_data(f, table);
    }
    print_table(out, table);
  }
  return kExitOk;
}

int cmd_estimate(const DataFlags& df, const AnalysisFlags& af, const std::string& treatment,
                 const std::string& out_file, std::ostream& out) {
  const auto config = af.config();
  const auto data = df.load();
  const auto k = data.treatment_index(treatment);
  if (!k) throw ConfigError("unknown treatment " + treatment);
  if (data.is_degenerate(*k)) {
    throw DegenerateError("treatment " + treatment + " takes a single value");
  }
  const auto estimates = estimate_all(data, {*k}, af.scales(), config, af.dump_dir);
  std::ostringstream body;
  for (const auto& e : estimates) write_estimate_json(body, e);
  if (out_file.empty()) {
    out << body.str();
  } else {
    auto f = open_out(out_file);
    f << body.str();
  }
  return kExitOk;
}

SimDesign resolve_design(const std::string& name, double censoring_fraction) {
  if (name == "default") return default_design();
  if (name == "example1") return example1_design(censoring_fraction);
  if (name == "registry") return registry_design();
  return load_design(name);
}

std::vector<char> parse_schemes(const std::string& text) {
  std::vector<char> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.size() != 1) throw ConfigError("unknown adjustment scheme '" + item + "'");
    scheme_strata(item[0]);
    out.push_back(item[0]);
  }
  if (out.empty()) throw ConfigError("no adjustment scheme given");
  return out;
}

std::vector<std::size_t> design_treatments(const SimDesign& d,
                                           const std::vector<std::string>& names) {
  std::vector<std::size_t> out;
  for (const auto& name : names) {
    const auto it = std::find(d.treatment_names.begin(), d.treatment_names.end(), name);
    if (it == d.treatment_names.end()) throw ConfigError("design has no treatment " + name);
    out.push_back(static_cast<std::size_t>(it - d.treatment_names.begin()));
  }
  return out;
}

struct BenchFlags {
  std::string design = "default";
  std::size_t replicates = 100;
  std::uint64_t seed = 1;
  std::string scheme;
  std::size_t trees = 0;
  unsigned threads = 0;
  std::string out_dir;

  void attach(CLI::App* app, const char* default_scheme, std::size_t default_trees) {
    scheme = default_scheme;
    trees = default_trees;
    app->add_option("--design", design, "default, example1, registry or a design JSON file")
        ->capture_default_str();
    app->add_option("--replicates", replicates, "Monte Carlo replicates")->capture_default_str();
    app->add_option("--seed", seed, "Base seed")->capture_default_str();
    app->add_option("--scheme", scheme, "Weight adjustment schemes, e.g. a or a,c")
        ->capture_default_str();
    app->add_option("--trees", trees, "Trees per forest")->capture_default_str();
    app->add_option("--threads", threads, "Worker threads (0: all cores)")->capture_default_str();
    app->add_option("--out", out_dir, "Directory for report files");
  }

  ExperimentConfig experiment() const {
    ExperimentConfig ec;
    ec.replicates = replicates;
    ec.seed = seed;
    ec.schemes = parse_schemes(scheme);
    ec.analysis.trees = trees;
    ec.threads = threads;
    return ec;
  }
};

int cmd_bench_coverage(const BenchFlags& bf, std::size_t n,
                       const std::vector<std::string>& treatments, std::ostream& out) {
  auto ec = bf.experiment();
  auto design = resolve_design(bf.design, 0.2);
  if (n > 0) design.n = n;
  if (treatments.empty()) {
    ec.treatments.clear();
    for (std::size_t k = 0; k < std::min<std::size_t>(3, design.num_treatments()); ++k) {
      ec.treatments.push_back(k);
    }
  } else {
    ec.treatments = design_treatments(design, treatments);
  }
  const auto report = run_coverage_experiment(design, ec);
  if (!bf.out_dir.empty()) {
    fs::create_directories(bf.out_dir);
    auto csv = open_out(fs::path(bf.out_dir) / "coverage.csv");
    write_coverage_csv(csv, report);
    auto json = open_out(fs::path(bf.out_dir) / "coverage.json");
    write_coverage_json(json, report);
  }
  write_coverage_csv(out, report);
  return kExitOk;
}

int cmd_bench_ranking(const BenchFlags& bf, const std::vector<std::size_t>& n_grid,
                      std::ostream& out) {
  const auto ec = bf.experiment();
  const auto design = resolve_design(bf.design, 0.2);
  const auto report = run_ranking_experiment(design, n_grid, ec);
  if (!bf.out_dir.empty()) {
    fs::create_directories(bf.out_dir);
    auto csv = open_out(fs::path(bf.out_dir) / "ranking_fractions.csv");
    write_ranking_report_csv(csv, report);
    auto json = open_out(fs::path(bf.out_dir) / "ranking_fractions.json");
    write_ranking_report_json(json, report);
  }
  write_ranking_report_csv(out, report);
  return kExitOk;
}

int cmd_simulate(const std::string& design_name, std::size_t n, std::uint64_t seed,
                 double censoring_fraction, const std::string& out_file,
                 const std::string& save_path, std::ostream& out) {
  auto design = resolve_design(design_name, censoring_fraction);
  if (n > 0) design.n = n;
  const auto data = simulate_dataset(design, seed);
  write_csv(out_file, data);
  if (!save_path.empty()) save_design(save_path, design);
  const auto counts = data.event_counts();
  out << "wrote " << data.size() << " records to " << out_file << " (censored " << counts[0]
      << ", event " << counts[1] << ", competing " << counts[2] << ")\n";
  return kExitOk;
}

int cmd_oracle(bool example1, const std::vector<double>& times, const std::string& design_name,
               double horizon, std::ostream& out) {
  if (example1) {
    out << "t,A1,A2\n";
    for (double t : times) {
      const auto [first, second] = example1_contrasts(t);
      out << fmt(t) << ',' << fmt(first) << ',' << fmt(second) << '\n';
    }
    return kExitOk;
  }
  const auto design = resolve_design(design_name, 0.2);
  const double t0 = horizon > 0.0 ? horizon : design.horizon;
  out << "treatment,horizon,net,crude\n";
  for (std::size_t k = 0; k < design.num_treatments(); ++k) {
    out << design.treatment_names[k] << ',' << fmt(t0) << ','
        << fmt(oracle_true_ate(design, k, Scale::kNet, t0)) << ','
        << fmt(oracle_true_ate(design, k, Scale::kCrude, t0)) << '\n';
  }
  return kExitOk;
}

int guarded(const std::function<int()>& body, std::ostream& err) {
  try {
    return body();
  } catch (const EstimationError& e) {
    err << "estimation error: " << e.what() << '\n';
    return kExitEstimation;
  } catch (const ValidationError& e) {
    err << "invalid data: " << e.what() << '\n';
    return kExitUsage;
  } catch (const SchemaError& e) {
    err << "schema error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ConfigError& e) {
    err << "configuration error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const DomainError& e) {
    err << "invalid argument: " << e.what() << '\n';
    return kExitUsage;
  } catch (const fs::filesystem_error& e) {
    err << "file error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitEstimation;
  }
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Treatment effect ranking with competing risks and generalized random forests",
               "crgrf"};
  app.require_subcommand(1);

  auto* rank = app.add_subcommand("rank", "Rank treatments by average effect on one or both scales");
  DataFlags rank_data;
  AnalysisFlags rank_analysis;
  std::string rank_out;
  rank_data.attach(rank);
  rank_analysis.attach(rank, true);
  rank->add_option("--out", rank_out, "Output directory")->required();

  auto* estimate = app.add_subcommand("estimate", "Average effect of a single treatment");
  DataFlags est_data;
  AnalysisFlags est_analysis;
  std::string est_treatment, est_out;
  est_data.attach(estimate);
  est_analysis.attach(estimate, true);
  estimate->add_option("--treatment", est_treatment, "Treatment column")->required();
  estimate->add_option("--out", est_out, "JSON output file (default: stdout)");

  auto* simulate = app.add_subcommand("simulate", "Write a simulated dataset as CSV");
  std::string sim_design = "default", sim_out, sim_save;
  std::size_t sim_n = 0;
  std::uint64_t sim_seed = 1;
  double sim_censoring = 0.2;
  simulate->add_option("--design", sim_design, "default, example1, registry or a design JSON file")
      ->capture_default_str();
  simulate->add_option("--n", sim_n, "Sample size (default: the design's)");
  simulate->add_option("--seed", sim_seed, "Random seed")->capture_default_str();
  simulate->add_option("--censoring-fraction", sim_censoring,
                       "Censored share for the example1 design")
      ->capture_default_str();
  simulate->add_option("--out", sim_out, "Output CSV")->required();
  simulate->add_option("--save-design", sim_save, "Also write the design as JSON");

  auto* coverage = app.add_subcommand("bench-coverage", "Confidence interval coverage experiment");
  BenchFlags cov_flags;
  std::size_t cov_n = 0;
  std::vector<std::string> cov_treatments;
  cov_flags.attach(coverage, "a", 1000);
  coverage->add_option("--n", cov_n, "Sample size (default: the design's)");
  coverage->add_option("--treatments", cov_treatments, "Treatments (default: first three)")
      ->delimiter(',');

  auto* ranking = app.add_subcommand("bench-ranking", "Ranking fraction experiment");
  BenchFlags rank_flags;
  std::vector<std::size_t> rank_grid{100, 200, 500, 1000, 1500, 2000};
  rank_flags.attach(ranking, "b", 200);
  ranking->add_option("--n", rank_grid, "Sample sizes")->delimiter(',')->capture_default_str();

  auto* oracle = app.add_subcommand("oracle", "Closed-form and quadrature effect truths");
  bool oracle_example1 = false;
  std::vector<double> oracle_times{0.1, 1.0};
  std::string oracle_design = "default";
  double oracle_horizon = 0.0;
  oracle->add_flag("--example1", oracle_example1, "Constant-hazard two-treatment example");
  oracle->add_option("--t", oracle_times, "Horizons for --example1")
      ->delimiter(',')
      ->capture_default_str();
  oracle->add_option("--design", oracle_design, "Design for quadrature truths")
      ->capture_default_str();
  oracle->add_option("--horizon", oracle_horizon, "Horizon (default: the design's)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  return guarded(
      [&]() -> int {
        if (rank->parsed()) return cmd_rank(rank_data, rank_analysis, rank_out, out);
        if (estimate->parsed()) {
          return cmd_estimate(est_data, est_analysis, est_treatment, est_out, out);
        }
        if (simulate->parsed()) {
          return cmd_simulate(sim_design, sim_n, sim_seed, sim_censoring, sim_out, sim_save, out);
        }
        if (coverage->parsed()) return cmd_bench_coverage(cov_flags, cov_n, cov_treatments, out);
        if (ranking->parsed()) return cmd_bench_ranking(rank_flags, rank_grid, out);
        return cmd_oracle(oracle_example1, oracle_times, oracle_design, oracle_horizon, out);
      },
      err);
}

}  // namespace crgrf::cli
