#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "crgrf/dataset.hpp"
#include "crgrf/ipcw.hpp"

namespace crgrf {

/// Column-major covariates plus the treatment and outcome the forest fits.
///
/// sample_keys drive every random subsampling decision. Keys derived from
/// record ids make the fitted forest independent of row order.
struct ForestData {
  std::size_t n = 0;
  std::size_t p = 0;
  std::vector<double> x;  // x[j * n + i]
  std::vector<double> treatment;
  std::vector<double> outcome;
  std::vector<std::uint64_t> sample_keys;

  double covariate(std::size_t i, std::size_t j) const { return x[j * n + i]; }
  std::span<const double> column(std::size_t j) const { return {x.data() + j * n, n}; }
  std::vector<double> row(std::size_t i) const;

  // Validates lengths; keys default to row positions.
  static ForestData from_columns(const std::vector<std::vector<double>>& columns,
                                 std::vector<double> treatment, std::vector<double> outcome,
                                 std::vector<std::uint64_t> keys = {});
};

// Forest inputs for treatment k: covariates are X plus the other treatments,
// minus any excluded covariate names. Keys are hashes of record ids.
ForestData forest_data_for(const Dataset& data, std::span<const WeightedOutcome> outcomes,
                           std::size_t k, const std::vector<std::string>& exclude = {});

std::uint64_t hash_id(std::string_view id);

// ---------------------------------------------------------------------------
// Node-level primitives

// cov(A, Y) / var(A); for binary A the difference of arm means.
// DegenerateError when A is constant.
double node_theta(std::span<const double> treatment, std::span<const double> outcome);

// Gradient pseudo-outcomes of the node members, in member order:
// rho_i = (A_i - Abar)(Y_i - Ybar - (A_i - Abar) theta) / W,  W = mean (A_i - Abar)^2.
std::vector<double> label_pseudo_outcomes(std::span<const std::size_t> members,
                                          std::span<const double> treatment,
                                          std::span<const double> outcome);

struct SplitCandidate {
  std::size_t covariate = 0;
  double threshold = 0.0;  // left daughter: x <= threshold
  double criterion = 0.0;  // sum over daughters of (sum rho)^2 / size
};

struct SplitConstraints {
  std::size_t min_node_size = 5;
  // When set, each daughter must also receive >= min_node_size of these
  // records with both arms present (honest estimation half).
  std::span<const std::size_t> estimation_members{};
  bool check_estimation = false;
};

// Split maximising the criterion over the given covariates, using labels
// already computed for the members. Ties go to the lowest covariate index,
// then the lowest threshold. None when no admissible split exists or all
// labels are zero.
std::optional<SplitCandidate> best_split_labeled(std::span<const std::size_t> members,
                                                 std::span<const double> treatment,
                                                 std::span<const double> labels,
                                                 const ForestData& data,
                                                 std::span<const std::size_t> covariates,
                                                 const SplitConstraints& constraints);

// Labels the node from the outcome, then searches. None for degenerate nodes.
std::optional<SplitCandidate> best_split(std::span<const std::size_t> members,
                                         std::span<const double> treatment,
                                         std::span<const double> outcome, const ForestData& data,
                                         std::span<const std::size_t> covariates,
                                         std::size_t min_node_size);

// ---------------------------------------------------------------------------
// Trees and forests

struct LeafStats {
  double count = 0.0;
  double sum_a = 0.0;
  double sum_aa = 0.0;
  double sum_y = 0.0;
  double sum_ay = 0.0;
};

struct TreeNode {
  static constexpr std::int32_t kLeaf = -1;

  std::int32_t split_covariate = kLeaf;
  double split_value = 0.0;
  std::uint32_t left = 0;
  std::uint32_t right = 0;
  std::vector<std::size_t> leaf_members;  // estimation-half rows (leaves only)
  LeafStats stats;

  bool is_leaf() const noexcept { return split_covariate == kLeaf; }
};

struct Tree {
  std::vector<TreeNode> nodes;  // nodes[0] is the root
  std::vector<std::size_t> split_half;
  std::vector<std::size_t> estimation_half;
  std::size_t group = 0;
  // False when the root estimation sample holds a single arm.
  bool valid = true;

  std::size_t leaf_of(std::span<const double> x) const;
  std::size_t leaf_of_row(const ForestData& data, std::size_t i) const;
  std::size_t num_leaves() const;
};

struct ForestOptions {
  std::size_t trees = 200;
  std::uint64_t seed = 42;
  std::size_t min_node_size = 5;
  double subsample_fraction = 0.5;
  bool honesty = true;
  std::size_t mtry = 0;        // 0: ceil(sqrt(p))
  std::size_t group_size = 4;  // trees per half-sample grove; 1 disables groves
  unsigned threads = 0;

  static ForestOptions from(const AnalysisConfig& config);
};

class ForestModel {
 public:
  ForestModel(ForestData data, ForestOptions options, std::vector<Tree> trees,
              std::vector<std::vector<std::uint8_t>> half_samples);

  const ForestData& data() const noexcept { return data_; }
  const ForestOptions& options() const noexcept { return options_; }
  const std::vector<Tree>& trees() const noexcept { return trees_; }
  std::size_t num_groups() const noexcept { return half_samples_.size(); }

  // True when row i belongs to the half-sample of the tree's grove (or to the
  // tree's subsample when groves are disabled).
  bool in_sample(std::size_t tree, std::size_t i) const {
    return half_samples_[trees_[tree].group][i] != 0;
  }
  const std::vector<std::uint8_t>& half_sample(std::size_t group) const {
    return half_samples_[group];
  }

  std::size_t treatment_index = 0;
  Scale scale = Scale::kNet;

 private:
  ForestData data_;
  ForestOptions options_;
  std::vector<Tree> trees_;
  std::vector<std::vector<std::uint8_t>> half_samples_;
};

// Deterministic given (data, options.seed); identical for any thread count.
ForestModel grow_forest(ForestData data, const ForestOptions& options);

// alpha_i(x) = (1/B) sum_b 1{i in L_b(x)} / |L_b(x)| over valid trees.
std::vector<double> kernel_weights(const ForestModel& model, std::span<const double> x);

struct LocalEstimate {
  double theta = 0.0;
  std::optional<double> sigma;  // absent when fewer than two groves
  std::vector<double> x;
};

LocalEstimate estimate_theta_at(const ForestModel& model, std::span<const double> x);

// Half-sample grove variance of theta(x), clipped at zero; absent with < 2 groves.
std::optional<double> estimate_variance(const ForestModel& model, std::span<const double> x);

struct AverageEffect {
  double ate = 0.0;
  std::optional<double> se;
  std::vector<double> theta;  // out-of-bag theta(X_i)
};

// Mean of out-of-bag theta(X_i) over all rows, with a grove standard error
// built from grove-level average effects.
AverageEffect average_effect(const ForestModel& model);

// Efficient influence function of the arm-mean contrast, evaluated in both
// algebraic forms; returns the inverse-propensity form after checking the
// residual form agrees. DomainError unless 0 < propensity < 1.
double phi_influence(double outcome, double treatment, double propensity, double outcome_mean,
                     double theta);
double phi_influence_residual_form(double outcome, double treatment, double propensity,
                                   double outcome_mean, double theta);

// Versioned text dump of the forest structure and samples.
void write_forest_text(std::ostream& out, const ForestModel& model);
ForestModel read_forest_text(std::istream& in, ForestData data);

}  // namespace crgrf
