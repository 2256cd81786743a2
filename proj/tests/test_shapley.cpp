#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numeric>

#include "fcmaudit/shapley.hpp"
#include "oracles.hpp"

using namespace fcmaudit;
using Catch::Matchers::WithinAbs;

namespace {

// Deterministic function-backed predictors for closed-form checks. The
// "probability" is the function value itself (class 1), padded to two classes.
BatchPredictor from_function(std::function<double(const std::vector<double>&)> f) {
  return [f](const std::vector<std::vector<double>>& rows) {
    std::vector<std::vector<double>> out;
    for (const auto& r : rows) {
      const double v = f(r);
      out.push_back({1.0 - v, v});
    }
    return out;
  };
}

BackgroundSet fixed_background(std::vector<std::vector<double>> rows) {
  BackgroundSet bg;
  bg.rows = std::move(rows);
  return bg;
}

std::vector<int> all_rows(const Dataset& ds) {
  std::vector<int> rows(ds.rows());
  std::iota(rows.begin(), rows.end(), 0);
  return rows;
}

BackgroundSet dataset_background(const Dataset& ds, int k, std::uint64_t seed) {
  return sample_background(ds, all_rows(ds), k, seed);
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

}  // namespace

TEST_CASE("marginal_prediction fixes the subset and averages the rest") {
  const auto g = from_function([](const std::vector<double>& r) { return r[0]; });
  const BackgroundSet bg = fixed_background({{0.1, 5.0}, {0.4, 6.0}, {0.7, 7.0}});
  const std::vector<double> instance{0.9, 9.0};

  CHECK_THAT(marginal_prediction(g, instance, {0, 1}, bg, 1), WithinAbs(0.9, 1e-15));
  CHECK_THAT(marginal_prediction(g, instance, {}, bg, 1), WithinAbs(0.4, 1e-15));
  CHECK_THAT(marginal_prediction(g, instance, {0}, bg, 1), WithinAbs(0.9, 1e-15));
  CHECK_THAT(marginal_prediction(g, instance, {1}, bg, 1), WithinAbs(0.4, 1e-15));
  REQUIRE_THROWS_AS(marginal_prediction(g, instance, {2}, bg, 1), std::invalid_argument);
}

TEST_CASE("exact_shapley on an additive function has the closed form") {
  // g(x) = x1 + 2 x2 (kept in [0,1] by construction of the fixture values).
  const auto g = from_function(
      [](const std::vector<double>& r) { return 0.2 * r[0] + 0.4 * r[1]; });
  const BackgroundSet bg = fixed_background({{0.1, 0.3}, {0.5, 0.1}, {0.3, 0.2}});
  const double m1 = (0.1 + 0.5 + 0.3) / 3.0;
  const double m2 = (0.3 + 0.1 + 0.2) / 3.0;
  const std::vector<double> x{0.8, 0.6};

  const ShapExplanation e = exact_shapley(g, x, bg, 1);
  REQUIRE_THAT(e.attributions[0], WithinAbs(0.2 * (x[0] - m1), 1e-12));
  REQUIRE_THAT(e.attributions[1], WithinAbs(0.4 * (x[1] - m2), 1e-12));
  CHECK_THAT(e.base_value, WithinAbs(0.2 * m1 + 0.4 * m2, 1e-12));
}

TEST_CASE("exact_shapley symmetry axiom") {
  // Symmetric in both features; equal instance values get equal credit.
  const auto g = from_function(
      [](const std::vector<double>& r) { return 0.3 * (r[0] + r[1]) + 0.2 * r[0] * r[1]; });
  const BackgroundSet bg = fixed_background({{0.1, 0.4}, {0.4, 0.1}, {0.2, 0.2}});
  const ShapExplanation e = exact_shapley(g, {0.7, 0.7}, bg, 1);
  REQUIRE_THAT(e.attributions[0], WithinAbs(e.attributions[1], 1e-9));
}

TEST_CASE("exact_shapley dummy axiom and efficiency on a forest") {
  // Feature 2 is constant in training, so no tree ever splits on it.
  std::vector<FeatureSchema> schema{{"a", FeatureKind::numeric, false, {}, "F1"},
                                    {"b", FeatureKind::numeric, false, {}, "F2"},
                                    {"dummy", FeatureKind::numeric, false, {}, "F3"}};
  Dataset ds(schema, {"0", "1"});
  Rng rng(6);
  for (int i = 0; i < 150; ++i) {
    const double a = rng.uniform01(), b = rng.uniform01();
    ds.add_row({a, b, 0.5}, a + b > 1.0 ? 1 : 0);
  }
  ForestConfig cfg;
  cfg.n_estimators = 40;
  cfg.seed = 8;
  const ForestModel model = fit_forest(ds, all_rows(ds), cfg);
  const BatchPredictor g = forest_predictor(model);
  const BackgroundSet bg = dataset_background(ds, 25, 4);

  const std::vector<double> x{0.9, 0.4, 0.77};
  const ShapExplanation e = exact_shapley(g, x, bg, 1);
  REQUIRE_THAT(e.attributions[2], WithinAbs(0.0, 1e-9));
  const double total = std::accumulate(e.attributions.begin(), e.attributions.end(), 0.0);
  REQUIRE_THAT(total, WithinAbs(e.prediction - e.base_value, 1e-9));
}

TEST_CASE("exact_shapley equals the permutation-enumeration oracle") {
  const Dataset ds = oracles::make_toy_dataset(120, 9);
  ForestConfig cfg;
  cfg.n_estimators = 30;
  cfg.seed = 10;
  const ForestModel model = fit_forest(ds, all_rows(ds), cfg);
  const BatchPredictor g = forest_predictor(model);
  const BackgroundSet bg = dataset_background(ds, 15, 2);

  const std::vector<double> x = ds.row(7);
  const ShapExplanation mine = exact_shapley(g, x, bg, 1);
  const ShapExplanation oracle = oracles::permutation_shapley(g, x, bg, 1);
  REQUIRE(max_abs_diff(mine.attributions, oracle.attributions) < 1e-9);
  CHECK_THAT(mine.base_value, WithinAbs(oracle.base_value, 1e-12));
}

TEST_CASE("exact_shapley feature limit points to kernel_shap") {
  const auto g = from_function([](const std::vector<double>& r) { return r[0]; });
  const BackgroundSet bg = fixed_background({std::vector<double>(16, 0.0)});
  REQUIRE_THROWS_WITH(exact_shapley(g, std::vector<double>(16, 0.1), bg, 1),
                      Catch::Matchers::ContainsSubstring("kernel_shap"));
}

TEST_CASE("kernel_shap with the full coalition budget matches exact values") {
  const Dataset ds = oracles::make_toy_dataset(150, 30);
  // Pad to 8 features by reusing columns through a function predictor over a
  // trained forest on the 5 toy features plus 3 engineered echoes.
  ForestConfig cfg;
  cfg.n_estimators = 40;
  cfg.seed = 11;
  const ForestModel model = fit_forest(ds, all_rows(ds), cfg);
  const BatchPredictor inner = forest_predictor(model);
  const auto g = [&inner](const std::vector<std::vector<double>>& rows) {
    std::vector<std::vector<double>> trimmed;
    for (const auto& r : rows) trimmed.push_back({r[0], r[1], r[2], r[3], r[4]});
    auto out = inner(trimmed);
    // Feature 5..7 nudge the score additively so they carry signal too.
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const double bump = 0.05 * rows[i][5] + 0.03 * rows[i][6] - 0.04 * rows[i][7];
      out[i][1] = std::clamp(out[i][1] + bump, 0.0, 1.0);
      out[i][0] = 1.0 - out[i][1];
    }
    return out;
  };
  BackgroundSet bg;
  Rng rng(14);
  for (int k = 0; k < 12; ++k) {
    std::vector<double> row = ds.row(k);
    for (int e = 0; e < 3; ++e) row.push_back(rng.uniform01());
    bg.rows.push_back(row);
  }
  std::vector<double> x = ds.row(99);
  x.push_back(0.9);
  x.push_back(0.2);
  x.push_back(0.6);

  const ShapExplanation exact = exact_shapley(g, x, bg, 1);
  const ShapExplanation kernel = kernel_shap(g, x, bg, 256, 5, 1);
  REQUIRE(max_abs_diff(exact.attributions, kernel.attributions) < 1e-6);

  // Efficiency holds exactly by construction.
  const double total = std::accumulate(kernel.attributions.begin(), kernel.attributions.end(), 0.0);
  REQUIRE_THAT(total, WithinAbs(kernel.prediction - kernel.base_value, 1e-12));
}

TEST_CASE("sampled kernel_shap approaches exact values") {
  const Dataset ds = oracles::make_toy_dataset(200, 44);
  ForestConfig cfg;
  cfg.n_estimators = 30;
  cfg.seed = 21;
  const ForestModel model = fit_forest(ds, all_rows(ds), cfg);
  const BatchPredictor inner = forest_predictor(model);
  // 10-feature predictor: 5 real + 5 additive echoes.
  const auto g = [&inner](const std::vector<std::vector<double>>& rows) {
    std::vector<std::vector<double>> trimmed;
    for (const auto& r : rows) trimmed.push_back({r[0], r[1], r[2], r[3], r[4]});
    auto out = inner(trimmed);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      double bump = 0.0;
      for (int j = 5; j < 10; ++j) bump += (j % 2 ? 0.04 : -0.03) * rows[i][j];
      out[i][1] = std::clamp(out[i][1] + bump, 0.0, 1.0);
      out[i][0] = 1.0 - out[i][1];
    }
    return out;
  };
  BackgroundSet bg;
  Rng rng(3);
  for (int k = 0; k < 10; ++k) {
    std::vector<double> row = ds.row(k);
    for (int e = 0; e < 5; ++e) row.push_back(rng.uniform01());
    bg.rows.push_back(row);
  }
  std::vector<double> x = ds.row(150);
  for (int e = 0; e < 5; ++e) x.push_back(rng.uniform01());

  const ShapExplanation exact = exact_shapley(g, x, bg, 1);
  // 600 < 2^10, so sizes 4..6 get genuinely sampled.
  const ShapExplanation sampled = kernel_shap(g, x, bg, 600, 77, 1);
  REQUIRE(max_abs_diff(exact.attributions, sampled.attributions) < 0.05);

  // Determinism in the sampled regime.
  const ShapExplanation again = kernel_shap(g, x, bg, 600, 77, 1);
  REQUIRE(sampled.attributions == again.attributions);
  const ShapExplanation other = kernel_shap(g, x, bg, 600, 78, 1);
  CHECK(sampled.attributions != other.attributions);
}

TEST_CASE("kernel_shap validates its coalition budget") {
  const auto g = from_function([](const std::vector<double>& r) { return r[0]; });
  const BackgroundSet bg = fixed_background({std::vector<double>(6, 0.2)});
  REQUIRE_THROWS_WITH(kernel_shap(g, std::vector<double>(6, 0.4), bg, 7, 1, 1),
                      Catch::Matchers::ContainsSubstring("m + 2"));
}

TEST_CASE("global_shap aggregates absolute attributions") {
  const auto g = from_function(
      [](const std::vector<double>& r) { return 0.5 * r[0] - 0.25 * r[1] + 0.25; });
  const BackgroundSet bg = fixed_background({{0.0, 0.0}, {1.0, 1.0}});
  ShapSettings st;
  st.method = ShapMethod::exact;

  // Single instance: its |attributions|.
  const ShapExplanation e = exact_shapley(g, {1.0, 1.0}, bg, 1);
  const auto one = global_shap(g, {{1.0, 1.0}}, bg, 1, st);
  REQUIRE_THAT(one[0], WithinAbs(std::abs(e.attributions[0]), 1e-12));
  REQUIRE_THAT(one[1], WithinAbs(std::abs(e.attributions[1]), 1e-12));

  // A constant predictor attributes nothing.
  const auto zero = global_shap(from_function([](const std::vector<double>&) { return 0.5; }),
                                {{0.2, 0.3}, {0.4, 0.5}}, bg, 1, st);
  CHECK_THAT(zero[0], WithinAbs(0.0, 1e-12));
  CHECK_THAT(zero[1], WithinAbs(0.0, 1e-12));
}

TEST_CASE("background sampling is seeded and schema-shaped") {
  const Dataset ds = oracles::make_toy_dataset(60, 8);
  const BackgroundSet a = dataset_background(ds, 10, 5);
  const BackgroundSet b = dataset_background(ds, 10, 5);
  REQUIRE(a.rows == b.rows);
  CHECK(a.rows.size() == 10);
  CHECK(a.rows[0].size() == ds.features());
  const BackgroundSet all = dataset_background(ds, 100, 5);
  CHECK(all.rows.size() == 60);
}
