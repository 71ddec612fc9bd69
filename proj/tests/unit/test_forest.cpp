#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "../support/oracles.hpp"
#include "crgrf/error.hpp"
#include "crgrf/forest.hpp"
#include "doctest.h"

using namespace crgrf;

namespace {

ForestData synthetic(std::size_t n, std::size_t p, std::uint64_t seed, double effect = -0.5) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 0.3);
  std::vector<std::vector<double>> cols(p, std::vector<double>(n));
  std::vector<double> a(n), y(n);
  std::vector<std::uint64_t> keys(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < p; ++j) cols[j][i] = unif(rng);
    a[i] = unif(rng) < 0.5 ? 1.0 : 0.0;
    y[i] = cols[0][i] + effect * a[i] + noise(rng);
    keys[i] = hash_id(std::to_string(i));
  }
  return ForestData::from_columns(cols, a, y, keys);
}

ForestOptions small_options(std::size_t trees = 40) {
  ForestOptions o;
  o.trees = trees;
  o.seed = 11;
  o.threads = 1;
  return o;
}

std::string dump(const ForestModel& m) {
  std::ostringstream out;
  write_forest_text(out, m);
  return out.str();
}

}  // namespace

TEST_SUITE("forest") {
  TEST_CASE("node theta is the difference of arm means for binary treatment") {
    const std::vector<double> a{1, 1, 0, 0, 0};
    const std::vector<double> y{3, 5, 1, 2, 3};
    CHECK(node_theta(a, y) == doctest::Approx(4.0 - 2.0));
    CHECK(node_theta(a, std::vector<double>(5, 7.0)) == 0.0);
    CHECK_THROWS_AS(node_theta(std::vector<double>(5, 1.0), y), DegenerateError);
  }

  TEST_CASE("pseudo-outcomes match the definition and sum to zero") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    for (int rep = 0; rep < 200; ++rep) {
      const std::size_t n = 2 + rep % 40;
      std::vector<double> a(n), y(n);
      for (std::size_t i = 0; i < n; ++i) {
        a[i] = unif(rng) < 0.4 ? 1.0 : 0.0;
        y[i] = unif(rng) * 10.0;
      }
      a[0] = 1.0;
      a[1] = 0.0;
      std::vector<std::size_t> members(n);
      std::iota(members.begin(), members.end(), std::size_t{0});
      const auto rho = label_pseudo_outcomes(members, a, y);
      const auto ref = testing::brute_labels(members, a, y);
      double sum = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        CHECK(rho[i] == doctest::Approx(ref[i]).epsilon(1e-10));
        sum += rho[i];
      }
      CHECK(std::abs(sum) <= 1e-10 * static_cast<double>(n));
    }
  }

  TEST_CASE("best split equals exhaustive search on small instances") {
    for (const auto& fx : testing::split_fixtures(12, 30)) {
      const auto& d = fx.data;
      std::vector<std::size_t> covs(d.p);
      std::iota(covs.begin(), covs.end(), std::size_t{0});
      const auto got = best_split(fx.members, d.treatment, d.outcome, d, covs, fx.min_size);
      const auto want = testing::brute_best_split(fx.members, d.treatment, d.outcome, d, fx.min_size);
      REQUIRE(got.has_value() == want.has_value());
      if (!got) continue;
      CHECK(got->criterion == doctest::Approx(want->criterion).epsilon(1e-10));
      // The chosen split scores the optimum under the reference as well.
      const auto labels = testing::brute_labels(fx.members, d.treatment, d.outcome);
      const auto score = testing::brute_criterion(fx.members, labels, d.treatment, d,
                                                  got->covariate, got->threshold, fx.min_size);
      REQUIRE(score.has_value());
      CHECK(*score == doctest::Approx(want->criterion).epsilon(1e-10));
    }
  }

  TEST_CASE("split ties go to the lowest covariate") {
    // Two identical covariates.
    const std::vector<double> x{0.1, 0.2, 0.3, 0.4, 0.5, 0.6};
    const std::vector<double> a{1, 0, 1, 0, 1, 0};
    const std::vector<double> y{5, 0, 5, 1, 0, 0};
    const auto d = ForestData::from_columns({x, x}, a, y);
    const std::vector<std::size_t> members{0, 1, 2, 3, 4, 5};
    const std::vector<std::size_t> covs{0, 1};
    const auto s = best_split(members, a, y, d, covs, 2);
    REQUIRE(s.has_value());
    CHECK(s->covariate == 0);
  }

  TEST_CASE("zero labels give no split") {
    const std::vector<double> x{0.1, 0.2, 0.3, 0.4};
    const std::vector<double> a{1, 0, 1, 0};
    const std::vector<double> y{1, 0, 1, 0};  // perfectly explained by theta
    const auto d = ForestData::from_columns({x}, a, y);
    const std::vector<std::size_t> members{0, 1, 2, 3}, covs{0};
    CHECK_FALSE(best_split(members, a, y, d, covs, 1).has_value());
  }

  TEST_CASE("kernel weights sum to one and match leaf co-membership") {
    const auto data = synthetic(20, 2, 8);
    ForestOptions o = small_options(3);
    o.group_size = 1;
    o.min_node_size = 2;
    const auto model = grow_forest(data, o);
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    for (int rep = 0; rep < 20; ++rep) {
      const std::vector<double> x{unif(rng), unif(rng)};
      const auto alpha = kernel_weights(model, x);
      const auto ref = testing::brute_kernel_weights(model, x);
      double sum = 0.0;
      for (std::size_t i = 0; i < alpha.size(); ++i) {
        CHECK(alpha[i] == doctest::Approx(ref[i]).epsilon(1e-14));
        sum += alpha[i];
      }
      CHECK(std::abs(sum - 1.0) <= 1e-12);
    }
  }

  TEST_CASE("honest trees keep split and estimation halves disjoint") {
    const auto model = grow_forest(synthetic(200, 3, 4), small_options());
    for (const auto& t : model.trees()) {
      std::vector<std::size_t> a(t.split_half), b(t.estimation_half);
      std::sort(a.begin(), a.end());
      std::sort(b.begin(), b.end());
      std::vector<std::size_t> both;
      std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(both));
      CHECK(both.empty());
      std::size_t leaf_total = 0;
      for (const auto& node : t.nodes) {
        if (node.is_leaf()) leaf_total += node.leaf_members.size();
      }
      CHECK(leaf_total == b.size());
    }
  }

  TEST_CASE("growth is deterministic and independent of thread count") {
    const auto data = synthetic(300, 3, 5);
    auto o = small_options();
    const auto one = dump(grow_forest(data, o));
    o.threads = 4;
    CHECK(dump(grow_forest(data, o)) == one);
    o.seed = 12;
    CHECK(dump(grow_forest(data, o)) != one);
  }

  TEST_CASE("row order does not change the fit") {
    const auto data = synthetic(250, 2, 6);
    std::vector<std::size_t> order(data.n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(2);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::vector<double>> cols(data.p, std::vector<double>(data.n));
    std::vector<double> a(data.n), y(data.n);
    std::vector<std::uint64_t> keys(data.n);
    for (std::size_t r = 0; r < data.n; ++r) {
      const auto i = order[r];
      for (std::size_t j = 0; j < data.p; ++j) cols[j][r] = data.covariate(i, j);
      a[r] = data.treatment[i];
      y[r] = data.outcome[i];
      keys[r] = data.sample_keys[i];
    }
    const auto shuffled = ForestData::from_columns(cols, a, y, keys);
    const auto m1 = grow_forest(data, small_options());
    const auto m2 = grow_forest(shuffled, small_options());
    const auto e1 = average_effect(m1);
    const auto e2 = average_effect(m2);
    CHECK(e1.ate == doctest::Approx(e2.ate).epsilon(1e-12));
    for (std::size_t r = 0; r < data.n; ++r) {
      CHECK(e2.theta[r] == doctest::Approx(e1.theta[order[r]]).epsilon(1e-12));
    }
    for (std::size_t b = 0; b < m1.trees().size(); ++b) {
      CHECK(m1.trees()[b].nodes.size() == m2.trees()[b].nodes.size());
      CHECK(m1.trees()[b].nodes[0].split_value == m2.trees()[b].nodes[0].split_value);
    }
  }

  TEST_CASE("forest recovers a constant effect") {
    const auto model = grow_forest(synthetic(1500, 3, 9, -0.5), small_options(100));
    const auto e = average_effect(model);
    CHECK(e.ate == doctest::Approx(-0.5).epsilon(0.1));
    REQUIRE(e.se.has_value());
    CHECK(*e.se > 0.0);
    CHECK(*e.se < 0.1);
    const auto local = estimate_theta_at(model, std::vector<double>{0.5, 0.5, 0.5});
    CHECK(local.theta == doctest::Approx(-0.5).epsilon(0.3));
    REQUIRE(local.sigma.has_value());
  }

  TEST_CASE("variance is absent without groves") {
    auto o = small_options(10);
    o.group_size = 1;
    const auto model = grow_forest(synthetic(200, 2, 1), o);
    CHECK_FALSE(estimate_variance(model, std::vector<double>{0.5, 0.5}).has_value());
    CHECK_FALSE(average_effect(model).se.has_value());
  }

  TEST_CASE("identical trees give zero grove variance") {
    const auto grown = grow_forest(synthetic(200, 2, 3), small_options(8));
    std::vector<Tree> trees;
    for (std::size_t b = 0; b < 8; ++b) {
      Tree t = grown.trees()[0];
      t.group = b / 4;
      trees.push_back(std::move(t));
    }
    const std::vector<std::vector<std::uint8_t>> halves{grown.half_sample(0), grown.half_sample(0)};
    const ForestModel copy(grown.data(), grown.options(), trees, halves);
    const auto v = estimate_variance(copy, std::vector<double>{0.3, 0.7});
    REQUIRE(v.has_value());
    CHECK(*v == doctest::Approx(0.0).epsilon(1e-12));
  }

  TEST_CASE("single tree with min node size n is one leaf") {
    const auto data = synthetic(30, 2, 2);
    ForestOptions o = small_options(1);
    o.group_size = 1;
    o.honesty = false;
    o.subsample_fraction = 1.0;
    o.min_node_size = 30;
    const auto model = grow_forest(data, o);
    CHECK(model.trees()[0].num_leaves() == 1);
  }

  TEST_CASE("invalid inputs") {
    const auto data = synthetic(10, 2, 2);
    auto o = small_options(4);
    o.min_node_size = 20;
    CHECK_THROWS_AS(grow_forest(data, o), ConfigError);
    auto flat = data;
    std::fill(flat.treatment.begin(), flat.treatment.end(), 1.0);
    CHECK_THROWS_AS(grow_forest(flat, small_options(4)), DegenerateError);
    const auto model = grow_forest(synthetic(100, 2, 2), small_options(8));
    CHECK_THROWS_AS(kernel_weights(model, std::vector<double>{0.5}), ConfigError);
  }

  TEST_CASE("influence function forms agree") {
    std::mt19937_64 rng(10);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    for (int rep = 0; rep < 1000; ++rep) {
      const double a = unif(rng) < 0.5 ? 1.0 : 0.0;
      const double pi = 0.02 + 0.96 * unif(rng);
      const double y = 5.0 * unif(rng), m = unif(rng), theta = unif(rng) - 0.5;
      const double v1 = phi_influence(y, a, pi, m, theta);
      const double v2 = phi_influence_residual_form(y, a, pi, m, theta);
      CHECK(std::abs(v1 - v2) <= 1e-10 * std::max(1.0, std::abs(v1)));
    }
    CHECK_THROWS_AS(phi_influence(1.0, 1.0, 0.0, 0.5, 0.1), DomainError);
    CHECK_THROWS_AS(phi_influence_residual_form(1.0, 1.0, 1.0, 0.5, 0.1), DomainError);
  }

  TEST_CASE("text dump round trip") {
    const auto data = synthetic(150, 2, 12);
    const auto model = grow_forest(data, small_options(16));
    const auto text = dump(model);
    CHECK(text.rfind("crgrf-forest 1\n", 0) == 0);
    std::istringstream in(text);
    const auto back = read_forest_text(in, data);
    CHECK(dump(back) == text);
    const auto e1 = average_effect(model), e2 = average_effect(back);
    CHECK(e1.ate == e2.ate);
    CHECK(*e1.se == *e2.se);
    std::istringstream bad("crgrf-forest 99\n");
    CHECK_THROWS(read_forest_text(bad, data));
  }
}
