#include "crgrf/forest.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>

#include "crgrf/error.hpp"
#include "parallel.hpp"
#include "random.hpp"

namespace crgrf {

// ---------------------------------------------------------------------------
// Data

std::vector<double> ForestData::row(std::size_t i) const {
  std::vector<double> r(p);
  for (std::size_t j = 0; j < p; ++j) r[j] = covariate(i, j);
  return r;
}

ForestData ForestData::from_columns(const std::vector<std::vector<double>>& columns,
                                    std::vector<double> treatment, std::vector<double> outcome,
                                    std::vector<std::uint64_t> keys) {
  ForestData d;
  d.n = treatment.size();
  d.p = columns.size();
  if (outcome.size() != d.n) throw ConfigError("outcome length differs from treatment length");
  d.x.reserve(d.n * d.p);
  for (const auto& c : columns) {
    if (c.size() != d.n) throw ConfigError("covariate column length differs from n");
    d.x.insert(d.x.end(), c.begin(), c.end());
  }
  for (double a : treatment) {
    if (a != 0.0 && a != 1.0) throw ConfigError("treatment must be binary");
  }
  if (keys.empty()) {
    keys.resize(d.n);
    std::iota(keys.begin(), keys.end(), std::uint64_t{0});
  }
  if (keys.size() != d.n) throw ConfigError("sample key count differs from n");
  d.treatment = std::move(treatment);
  d.outcome = std::move(outcome);
  d.sample_keys = std::move(keys);
  return d;
}

std::uint64_t hash_id(std::string_view id) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : id) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

ForestData forest_data_for(const Dataset& data, std::span<const WeightedOutcome> outcomes,
                           std::size_t k, const std::vector<std::string>& exclude) {
  if (outcomes.size() != data.size()) throw ConfigError("outcome count differs from dataset size");
  if (k >= data.num_treatments()) throw ConfigError("treatment index out of range");
  for (const auto& name : exclude) {
    if (!data.covariate_index(name)) throw ConfigError("unknown excluded covariate '" + name + "'");
  }
  std::vector<std::vector<double>> columns;
  for (std::size_t j = 0; j < data.num_covariates(); ++j) {
    const auto& name = data.covariate_names()[j];
    if (std::find(exclude.begin(), exclude.end(), name) != exclude.end()) continue;
    columns.push_back(data.covariate_column(j));
  }
  for (std::size_t other = 0; other < data.num_treatments(); ++other) {
    if (other != k) columns.push_back(data.treatment_column(other));
  }
  std::vector<std::uint64_t> keys(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) keys[i] = hash_id(data[i].id);
  return ForestData::from_columns(columns, data.treatment_column(k), outcome_values(outcomes),
                                 std::move(keys));
}

// ---------------------------------------------------------------------------
// Node primitives

double node_theta(std::span<const double> treatment, std::span<const double> outcome) {
  if (treatment.size() != outcome.size() || treatment.empty()) {
    throw DegenerateError("node needs matching, non-empty treatment and outcome vectors");
  }
  const double m = static_cast<double>(treatment.size());
  const double abar = std::accumulate(treatment.begin(), treatment.end(), 0.0) / m;
  const double ybar = std::accumulate(outcome.begin(), outcome.end(), 0.0) / m;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < treatment.size(); ++i) {
    const double da = treatment[i] - abar;
    sxx += da * da;
    sxy += da * (outcome[i] - ybar);
  }
  if (sxx <= 0.0) throw DegenerateError("treatment is constant within the node");
  return sxy / sxx;
}

std::vector<double> label_pseudo_outcomes(std::span<const std::size_t> members,
                                          std::span<const double> treatment,
                                          std::span<const double> outcome) {
  if (members.empty()) throw DegenerateError("cannot label an empty node");
  const double m = static_cast<double>(members.size());
  double abar = 0.0, ybar = 0.0;
  for (auto i : members) {
    abar += treatment[i];
    ybar += outcome[i];
  }
  abar /= m;
  ybar /= m;
  double sxx = 0.0, sxy = 0.0;
  for (auto i : members) {
    const double da = treatment[i] - abar;
    sxx += da * da;
    sxy += da * (outcome[i] - ybar);
  }
  if (sxx <= 0.0) throw DegenerateError("treatment is constant within the node");
  const double theta = sxy / sxx;
  const double w = sxx / m;
  std::vector<double> rho(members.size());
  for (std::size_t r = 0; r < members.size(); ++r) {
    const auto i = members[r];
    const double da = treatment[i] - abar;
    rho[r] = da * (outcome[i] - ybar - da * theta) / w;
  }
  return rho;
}

std::optional<SplitCandidate> best_split_labeled(std::span<const std::size_t> members,
                                                 std::span<const double> treatment,
                                                 std::span<const double> labels,
                                                 const ForestData& data,
                                                 std::span<const std::size_t> covariates,
                                                 const SplitConstraints& constraints) {
  const std::size_t m = members.size();
  const std::size_t min_size = std::max<std::size_t>(1, constraints.min_node_size);
  if (m < 2 * min_size) return std::nullopt;
  if (std::all_of(labels.begin(), labels.end(), [](double r) { return r == 0.0; })) {
    return std::nullopt;
  }
  const double total = std::accumulate(labels.begin(), labels.end(), 0.0);
  double total_treated = 0.0;
  for (auto i : members) total_treated += treatment[i];

  const auto est = constraints.estimation_members;
  const bool check_est = constraints.check_estimation;
  double est_treated_total = 0.0;
  if (check_est) {
    if (est.size() < 2 * min_size) return std::nullopt;
    for (auto i : est) est_treated_total += treatment[i];
  }

  std::optional<SplitCandidate> best;
  std::vector<std::size_t> order(m);
  std::vector<std::pair<double, double>> est_sorted;  // (x, a)
  for (auto j : covariates) {
    const auto col = data.column(j);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return col[members[a]] < col[members[b]];
    });
    if (check_est) {
      est_sorted.clear();
      for (auto i : est) est_sorted.emplace_back(col[i], treatment[i]);
      std::sort(est_sorted.begin(), est_sorted.end());
    }
    std::size_t est_pos = 0;
    double est_left_treated = 0.0;
    double left_sum = 0.0, left_treated = 0.0;
    for (std::size_t k = 0; k + 1 < m; ++k) {
      const std::size_t r = order[k];
      left_sum += labels[r];
      left_treated += treatment[members[r]];
      const double here = col[members[r]];
      const double next = col[members[order[k + 1]]];
      if (here == next) continue;
      const std::size_t nl = k + 1, nr = m - nl;
      if (nl < min_size) continue;
      if (nr < min_size) break;
      if (left_treated <= 0.0 || left_treated >= static_cast<double>(nl)) continue;
      const double right_treated = total_treated - left_treated;
      if (right_treated <= 0.0 || right_treated >= static_cast<double>(nr)) continue;

      double threshold = here + (next - here) / 2.0;
      if (!(threshold < next)) threshold = here;

      if (check_est) {
        while (est_pos < est_sorted.size() && est_sorted[est_pos].first <= threshold) {
          est_left_treated += est_sorted[est_pos].second;
          ++est_pos;
        }
        const std::size_t el = est_pos, er = est_sorted.size() - est_pos;
        if (el < min_size || er < min_size) continue;
        const double er_treated = est_treated_total - est_left_treated;
        if (est_left_treated <= 0.0 || est_left_treated >= static_cast<double>(el)) continue;
        if (er_treated <= 0.0 || er_treated >= static_cast<double>(er)) continue;
      }

      const double right_sum = total - left_sum;
      const double criterion = left_sum * left_sum / static_cast<double>(nl) +
                               right_sum * right_sum / static_cast<double>(nr);
      if (!best || criterion > best->criterion) best = SplitCandidate{j, threshold, criterion};
    }
  }
  return best;
}

std::optional<SplitCandidate> best_split(std::span<const std::size_t> members,
                                         std::span<const double> treatment,
                                         std::span<const double> outcome, const ForestData& data,
                                         std::span<const std::size_t> covariates,
                                         std::size_t min_node_size) {
  double treated = 0.0;
  for (auto i : members) treated += treatment[i];
  if (members.empty() || treated <= 0.0 || treated >= static_cast<double>(members.size())) {
    return std::nullopt;
  }
  const auto labels = label_pseudo_outcomes(members, treatment, outcome);
  std::vector<std::size_t> sorted(covariates.begin(), covariates.end());
  std::sort(sorted.begin(), sorted.end());
  return best_split_labeled(members, treatment, labels, data, sorted,
                            SplitConstraints{min_node_size, {}, false});
}

// ---------------------------------------------------------------------------
// Trees

std::size_t Tree::leaf_of(std::span<const double> x) const {
  std::size_t node = 0;
  while (!nodes[node].is_leaf()) {
    const auto& nd = nodes[node];
    node = x[static_cast<std::size_t>(nd.split_covariate)] <= nd.split_value ? nd.left : nd.right;
  }
  return node;
}

std::size_t Tree::leaf_of_row(const ForestData& data, std::size_t i) const {
  std::size_t node = 0;
  while (!nodes[node].is_leaf()) {
    const auto& nd = nodes[node];
    node = data.covariate(i, static_cast<std::size_t>(nd.split_covariate)) <= nd.split_value
               ? nd.left
               : nd.right;
  }
  return node;
}

std::size_t Tree::num_leaves() const {
  return static_cast<std::size_t>(
      std::count_if(nodes.begin(), nodes.end(), [](const TreeNode& n) { return n.is_leaf(); }));
}

ForestOptions ForestOptions::from(const AnalysisConfig& config) {
  ForestOptions o;
  o.trees = config.trees;
  o.seed = config.seed;
  o.min_node_size = config.min_node_size;
  o.subsample_fraction = config.subsample_fraction;
  o.honesty = config.honesty;
  o.mtry = config.mtry;
  o.group_size = config.group_size;
  o.threads = config.threads;
  return o;
}

ForestModel::ForestModel(ForestData data, ForestOptions options, std::vector<Tree> trees,
                         std::vector<std::vector<std::uint8_t>> half_samples)
    : data_(std::move(data)),
      options_(options),
      trees_(std::move(trees)),
      half_samples_(std::move(half_samples)) {
  for (const auto& t : trees_) {
    if (t.group >= half_samples_.size()) throw ConfigError("tree refers to an unknown grove");
  }
}

namespace {

// Rows of `pool` ordered by a keyed pseudo-random priority; ties by row.
std::vector<std::size_t> order_by_priority(std::span<const std::size_t> pool,
                                           const ForestData& data, std::uint64_t stream) {
  std::vector<std::pair<std::uint64_t, std::size_t>> pri;
  pri.reserve(pool.size());
  for (auto r : pool) pri.emplace_back(detail::splitmix64(data.sample_keys[r] ^ stream), r);
  std::sort(pri.begin(), pri.end());
  std::vector<std::size_t> out(pri.size());
  for (std::size_t i = 0; i < pri.size(); ++i) out[i] = pri[i].second;
  return out;
}

LeafStats leaf_stats(const ForestData& data, std::span<const std::size_t> rows) {
  LeafStats s;
  for (auto i : rows) {
    const double a = data.treatment[i], y = data.outcome[i];
    s.count += 1.0;
    s.sum_a += a;
    s.sum_aa += a * a;
    s.sum_y += y;
    s.sum_ay += a * y;
  }
  return s;
}

// Orders rows by sample key so that node sums do not depend on row order.
void sort_canonical(std::vector<std::size_t>& rows, const ForestData& data) {
  std::sort(rows.begin(), rows.end(), [&](std::size_t a, std::size_t b) {
    const auto ka = data.sample_keys[a], kb = data.sample_keys[b];
    return ka != kb ? ka < kb : a < b;
  });
}

bool two_arms(const ForestData& data, std::span<const std::size_t> rows) {
  bool treated = false, control = false;
  for (auto i : rows) (data.treatment[i] != 0.0 ? treated : control) = true;
  return treated && control;
}

class TreeGrower {
 public:
  TreeGrower(const ForestData& data, const ForestOptions& options, std::size_t mtry)
      : data_(data), options_(options), mtry_(mtry) {}

  Tree grow(std::size_t index, std::vector<std::size_t> subsample, std::size_t group) const {
    Tree tree;
    tree.group = group;
    if (options_.honesty) {
      auto shuffled =
          order_by_priority(subsample, data_, detail::derive_seed(options_.seed,
                                                                  detail::kHonestyStream, index));
      const std::size_t half = shuffled.size() / 2;
      tree.split_half.assign(shuffled.begin(), shuffled.begin() + static_cast<long>(half));
      tree.estimation_half.assign(shuffled.begin() + static_cast<long>(half), shuffled.end());
    } else {
      tree.split_half = subsample;
      tree.estimation_half = std::move(subsample);
    }
    sort_canonical(tree.split_half, data_);
    sort_canonical(tree.estimation_half, data_);

    std::mt19937_64 rng(detail::derive_seed(options_.seed, detail::kTreeStream, index));
    struct Pending {
      std::size_t node;
      std::vector<std::size_t> split;
      std::vector<std::size_t> est;
    };
    std::vector<Pending> stack;
    tree.nodes.emplace_back();
    stack.push_back({0, tree.split_half, tree.estimation_half});
    std::vector<std::size_t> all_covariates(data_.p);
    std::iota(all_covariates.begin(), all_covariates.end(), std::size_t{0});

    while (!stack.empty()) {
      Pending cur = std::move(stack.back());
      stack.pop_back();
      auto split = find_split(cur.split, cur.est, all_covariates, rng);
      if (!split) {
        auto& leaf = tree.nodes[cur.node];
        leaf.stats = leaf_stats(data_, cur.est);
        leaf.leaf_members = std::move(cur.est);
        continue;
      }
      const auto col = data_.column(split->covariate);
      Pending left{tree.nodes.size(), {}, {}}, right{tree.nodes.size() + 1, {}, {}};
      for (auto i : cur.split) (col[i] <= split->threshold ? left.split : right.split).push_back(i);
      for (auto i : cur.est) (col[i] <= split->threshold ? left.est : right.est).push_back(i);
      auto& node = tree.nodes[cur.node];
      node.split_covariate = static_cast<std::int32_t>(split->covariate);
      node.split_value = split->threshold;
      node.left = static_cast<std::uint32_t>(left.node);
      node.right = static_cast<std::uint32_t>(right.node);
      tree.nodes.emplace_back();
      tree.nodes.emplace_back();
      stack.push_back(std::move(right));
      stack.push_back(std::move(left));
    }
    tree.valid = std::all_of(tree.nodes.begin(), tree.nodes.end(), [&](const TreeNode& n) {
      return !n.is_leaf() || two_arms(data_, n.leaf_members);
    });
    return tree;
  }

 private:
  std::optional<SplitCandidate> find_split(const std::vector<std::size_t>& split,
                                           const std::vector<std::size_t>& est,
                                           std::vector<std::size_t>& covariates,
                                           std::mt19937_64& rng) const {
    if (mtry_ == 0 || split.size() < 2 * options_.min_node_size) return std::nullopt;
    if (!two_arms(data_, split)) return std::nullopt;
    // Partial Fisher-Yates draw of mtry covariates.
    for (std::size_t k = 0; k < mtry_; ++k) {
      std::uniform_int_distribution<std::size_t> pick(k, covariates.size() - 1);
      std::swap(covariates[k], covariates[pick(rng)]);
    }
    std::vector<std::size_t> chosen(covariates.begin(),
                                    covariates.begin() + static_cast<long>(mtry_));
    std::sort(chosen.begin(), chosen.end());
    const auto labels = label_pseudo_outcomes(split, data_.treatment, data_.outcome);
    SplitConstraints constraints{options_.min_node_size, est, options_.honesty};
    return best_split_labeled(split, data_.treatment, labels, data_, chosen, constraints);
  }

  const ForestData& data_;
  const ForestOptions& options_;
  std::size_t mtry_;
};

void validate(const ForestData& data, const ForestOptions& options) {
  if (options.trees == 0) throw ConfigError("forest needs at least one tree");
  if (options.group_size == 0) throw ConfigError("group_size must be positive");
  if (options.min_node_size == 0) throw ConfigError("min_node_size must be positive");
  if (!(options.subsample_fraction > 0.0 && options.subsample_fraction <= 1.0)) {
    throw ConfigError("subsample_fraction must lie in (0, 1]");
  }
  if (options.group_size > 1 && options.subsample_fraction > 0.5) {
    throw ConfigError("subsample_fraction must not exceed 0.5 when trees are grouped in groves");
  }
  if (data.n < 2 || data.n < options.min_node_size) {
    throw ConfigError("too few usable records (" + std::to_string(data.n) +
                      ") for min_node_size " + std::to_string(options.min_node_size));
  }
  const double treated = std::accumulate(data.treatment.begin(), data.treatment.end(), 0.0);
  if (treated <= 0.0 || treated >= static_cast<double>(data.n)) {
    throw DegenerateError("treatment takes a single value in the data");
  }
}

}  // namespace

ForestModel grow_forest(ForestData data, const ForestOptions& options) {
  validate(data, options);
  const std::size_t n = data.n;
  const std::size_t mtry =
      data.p == 0 ? 0
                  : std::min(data.p, options.mtry != 0
                                         ? options.mtry
                                         : static_cast<std::size_t>(
                                               std::ceil(std::sqrt(static_cast<double>(data.p)))));
  const bool groves = options.group_size > 1;
  const std::size_t num_groups =
      groves ? (options.trees + options.group_size - 1) / options.group_size : options.trees;

  std::vector<std::size_t> all_rows(n);
  std::iota(all_rows.begin(), all_rows.end(), std::size_t{0});

  // Grove half-samples.
  std::vector<std::vector<std::uint8_t>> half_samples(num_groups, std::vector<std::uint8_t>(n, 0));
  std::vector<std::vector<std::size_t>> pools;
  if (groves) {
    pools.resize(num_groups);
    for (std::size_t g = 0; g < num_groups; ++g) {
      auto ordered = order_by_priority(
          all_rows, data, detail::derive_seed(options.seed, detail::kGroveStream, g));
      ordered.resize(n / 2);
      std::sort(ordered.begin(), ordered.end());
      for (auto i : ordered) half_samples[g][i] = 1;
      pools[g] = std::move(ordered);
    }
  }

  std::vector<Tree> trees(options.trees);
  const TreeGrower grower(data, options, mtry);
  detail::parallel_for(options.trees, options.threads, [&](std::size_t b) {
    const std::size_t group = groves ? b / options.group_size : b;
    const std::vector<std::size_t>& pool = groves ? pools[group] : all_rows;
    auto sub = order_by_priority(pool, data,
                                 detail::derive_seed(options.seed, detail::kSubsampleStream, b));
    const auto target = static_cast<std::size_t>(
        std::llround(options.subsample_fraction * static_cast<double>(n)));
    sub.resize(std::clamp<std::size_t>(target, 1, pool.size()));
    if (!groves) {
      for (auto i : sub) half_samples[group][i] = 1;
    }
    trees[b] = grower.grow(b, std::move(sub), group);
  });

  return ForestModel(std::move(data), options, std::move(trees), std::move(half_samples));
}

// ---------------------------------------------------------------------------
// Prediction

namespace {

struct Moments {
  double a = 0.0, aa = 0.0, y = 0.0, ay = 0.0;
};

Moments leaf_moments(const TreeNode& leaf) {
  const double c = leaf.stats.count;
  return {leaf.stats.sum_a / c, leaf.stats.sum_aa / c, leaf.stats.sum_y / c, leaf.stats.sum_ay / c};
}

struct Fit {
  Moments mean;
  double theta = 0.0;
  double w = 0.0;
};

Fit fit_moments(std::span<const Moments> per_tree) {
  Fit f;
  for (const auto& m : per_tree) {
    f.mean.a += m.a;
    f.mean.aa += m.aa;
    f.mean.y += m.y;
    f.mean.ay += m.ay;
  }
  const double b = static_cast<double>(per_tree.size());
  f.mean.a /= b;
  f.mean.aa /= b;
  f.mean.y /= b;
  f.mean.ay /= b;
  f.w = f.mean.aa - f.mean.a * f.mean.a;
  if (!(f.w > 1e-14)) throw DegenerateError("forest neighbourhood holds a single treatment arm");
  f.theta = (f.mean.ay - f.mean.a * f.mean.y) / f.w;
  return f;
}

// Linearised contribution of one tree to theta - theta_hat.
double psi(const Moments& s, const Fit& f) {
  const auto& m = f.mean;
  const double cross = s.ay - m.a * s.y - m.y * s.a + m.a * m.y;
  const double spread = s.aa - 2.0 * m.a * s.a + m.a * m.a;
  return (cross - f.theta * spread) / f.w;
}

// Between-grove variance of grove means, minus the within-grove noise.
std::optional<double> grove_variance(std::span<const double> values,
                                     std::span<const std::size_t> groups,
                                     std::size_t num_groups) {
  std::vector<double> sum(num_groups, 0.0);
  std::vector<std::size_t> count(num_groups, 0);
  for (std::size_t t = 0; t < values.size(); ++t) {
    sum[groups[t]] += values[t];
    ++count[groups[t]];
  }
  std::vector<double> mean(num_groups, 0.0);
  std::size_t good = 0;
  double grand = 0.0;
  for (std::size_t g = 0; g < num_groups; ++g) {
    if (count[g] < 2) continue;
    mean[g] = sum[g] / static_cast<double>(count[g]);
    grand += mean[g];
    ++good;
  }
  if (good < 2) return std::nullopt;
  grand /= static_cast<double>(good);
  double within = 0.0;
  for (std::size_t t = 0; t < values.size(); ++t) {
    const auto g = groups[t];
    if (count[g] < 2) continue;
    const double d = values[t] - mean[g];
    const double l = static_cast<double>(count[g]);
    within += d * d / (l * (l - 1.0));
  }
  double between = 0.0;
  for (std::size_t g = 0; g < num_groups; ++g) {
    if (count[g] < 2) continue;
    between += (mean[g] - grand) * (mean[g] - grand);
  }
  between /= static_cast<double>(good);
  within /= static_cast<double>(good);
  return std::max(0.0, between - within);
}

std::vector<std::size_t> valid_trees(const ForestModel& model) {
  std::vector<std::size_t> out;
  for (std::size_t b = 0; b < model.trees().size(); ++b) {
    if (model.trees()[b].valid) out.push_back(b);
  }
  if (out.empty()) throw DegenerateError("forest has no tree with both arms in its estimation half");
  return out;
}

void check_point(const ForestModel& model, std::span<const double> x) {
  if (x.size() != model.data().p) {
    throw ConfigError("covariate vector has length " + std::to_string(x.size()) + ", expected " +
                      std::to_string(model.data().p));
  }
}

}  // namespace

std::vector<double> kernel_weights(const ForestModel& model, std::span<const double> x) {
  check_point(model, x);
  const auto used = valid_trees(model);
  std::vector<double> alpha(model.data().n, 0.0);
  const double scale = 1.0 / static_cast<double>(used.size());
  for (auto b : used) {
    const auto& tree = model.trees()[b];
    const auto& leaf = tree.nodes[tree.leaf_of(x)];
    const double w = scale / static_cast<double>(leaf.leaf_members.size());
    for (auto i : leaf.leaf_members) alpha[i] += w;
  }
  return alpha;
}

std::optional<double> estimate_variance(const ForestModel& model, std::span<const double> x) {
  check_point(model, x);
  const auto used = valid_trees(model);
  std::vector<Moments> moments;
  std::vector<std::size_t> groups;
  for (auto b : used) {
    const auto& tree = model.trees()[b];
    moments.push_back(leaf_moments(tree.nodes[tree.leaf_of(x)]));
    groups.push_back(tree.group);
  }
  const Fit fit = fit_moments(moments);
  std::vector<double> contributions(moments.size());
  for (std::size_t t = 0; t < moments.size(); ++t) contributions[t] = psi(moments[t], fit);
  if (model.options().group_size < 2) return std::nullopt;
  return grove_variance(contributions, groups, model.num_groups());
}

LocalEstimate estimate_theta_at(const ForestModel& model, std::span<const double> x) {
  check_point(model, x);
  const auto used = valid_trees(model);
  std::vector<Moments> moments;
  for (auto b : used) {
    const auto& tree = model.trees()[b];
    moments.push_back(leaf_moments(tree.nodes[tree.leaf_of(x)]));
  }
  LocalEstimate est;
  est.theta = fit_moments(moments).theta;
  if (auto v = estimate_variance(model, x)) est.sigma = std::sqrt(*v);
  est.x.assign(x.begin(), x.end());
  return est;
}

AverageEffect average_effect(const ForestModel& model) {
  const auto& data = model.data();
  const std::size_t n = data.n;
  const auto used = valid_trees(model);
  const std::size_t nt = used.size();
  constexpr std::size_t kChunk = 64;
  const std::size_t chunks = (n + kChunk - 1) / kChunk;

  AverageEffect out;
  out.theta.assign(n, 0.0);
  std::vector<std::vector<double>> partial(chunks, std::vector<double>(nt, 0.0));

  detail::parallel_for(chunks, model.options().threads, [&](std::size_t c) {
    auto& acc = partial[c];
    std::vector<Moments> moments;
    std::vector<std::size_t> slots;
    for (std::size_t i = c * kChunk; i < std::min(n, (c + 1) * kChunk); ++i) {
      moments.clear();
      slots.clear();
      for (std::size_t t = 0; t < nt; ++t) {
        if (model.in_sample(used[t], i)) continue;
        const auto& tree = model.trees()[used[t]];
        moments.push_back(leaf_moments(tree.nodes[tree.leaf_of_row(data, i)]));
        slots.push_back(t);
      }
      if (moments.empty()) {
        // Row sits in every grove's half-sample; fall back to all trees.
        for (std::size_t t = 0; t < nt; ++t) {
          const auto& tree = model.trees()[used[t]];
          moments.push_back(leaf_moments(tree.nodes[tree.leaf_of_row(data, i)]));
          slots.push_back(t);
        }
      }
      const Fit fit = fit_moments(moments);
      out.theta[i] = fit.theta;
      const double scale =
          static_cast<double>(nt) / static_cast<double>(moments.size()) / static_cast<double>(n);
      for (std::size_t u = 0; u < moments.size(); ++u) acc[slots[u]] += scale * psi(moments[u], fit);
    }
  });

  double sum = 0.0;
  for (double t : out.theta) sum += t;
  out.ate = sum / static_cast<double>(n);

  if (model.options().group_size >= 2) {
    std::vector<double> contributions(nt, 0.0);
    for (const auto& acc : partial) {
      for (std::size_t t = 0; t < nt; ++t) contributions[t] += acc[t];
    }
    std::vector<std::size_t> groups(nt);
    for (std::size_t t = 0; t < nt; ++t) groups[t] = model.trees()[used[t]].group;
    if (auto v = grove_variance(contributions, groups, model.num_groups())) {
      out.se = std::sqrt(*v);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Influence function

namespace {

void check_propensity(double propensity) {
  if (!(propensity > 0.0 && propensity < 1.0)) {
    throw DomainError("propensity must lie strictly between 0 and 1");
  }
}

}  // namespace

double phi_influence_residual_form(double outcome, double treatment, double propensity,
                                   double outcome_mean, double theta) {
  check_propensity(propensity);
  const double centred = treatment - propensity;
  const double variance = propensity * (1.0 - propensity);
  return centred / variance * (outcome - outcome_mean - centred * theta);
}

double phi_influence(double outcome, double treatment, double propensity, double outcome_mean,
                     double theta) {
  check_propensity(propensity);
  // Arm mean E[Y | A, x] recovered from the marginal mean and the contrast.
  const double arm_mean = outcome_mean + (treatment - propensity) * theta;
  const double ipw = treatment / propensity - (1.0 - treatment) / (1.0 - propensity);
  const double value = ipw * (outcome - arm_mean);
  const double other =
      phi_influence_residual_form(outcome, treatment, propensity, outcome_mean, theta);
  const double scale = std::max({1.0, std::abs(value), std::abs(other)});
  if (std::abs(value - other) > 1e-9 * scale) {
    throw std::logic_error("influence function forms disagree");
  }
  return value;
}

}  // namespace crgrf
