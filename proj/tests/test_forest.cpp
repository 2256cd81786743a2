#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numeric>
#include <sstream>

#include "fcmaudit/forest.hpp"
#include "oracles.hpp"

using namespace fcmaudit;
using Catch::Matchers::WithinAbs;

namespace {

std::vector<int> all_rows(const Dataset& ds) {
  std::vector<int> rows(ds.rows());
  std::iota(rows.begin(), rows.end(), 0);
  return rows;
}

}  // namespace

TEST_CASE("single-class training data yields certain predictions") {
  std::vector<FeatureSchema> schema{{"x", FeatureKind::numeric, false, {}, "F1"}};
  Dataset ds(schema, {"only", "other"});
  Rng rng(1);
  for (int i = 0; i < 30; ++i) ds.add_row({rng.uniform01()}, 0);
  ForestConfig cfg;
  cfg.n_estimators = 10;
  const ForestModel model = fit_forest(ds, all_rows(ds), cfg);
  const auto p = predict_proba(model, {0.3});
  CHECK(p[0] == 1.0);
  CHECK(p[1] == 0.0);
}

TEST_CASE("forest learns XOR and stays deterministic") {
  const Dataset ds = oracles::make_xor_dataset(300, 7);
  std::vector<int> train, holdout;
  for (int i = 0; i < 300; ++i) (i < 200 ? train : holdout).push_back(i);

  ForestConfig cfg;
  cfg.n_estimators = 100;
  cfg.seed = 3;
  const ForestModel model = fit_forest(ds, train, cfg);
  CHECK(accuracy(model, ds, holdout) >= 0.95);

  // Probability on a confident corner of the XOR square.
  const auto p = predict_proba(model, {0.9, 0.1});
  CHECK(p[1] >= 0.9);

  const ForestModel again = fit_forest(ds, train, cfg);
  for (int r : holdout) REQUIRE(predict_proba(again, ds.row(r)) == predict_proba(model, ds.row(r)));
}

TEST_CASE("predict_proba averages the trees and normalizes") {
  // Two single-leaf trees voting for opposite classes.
  ForestModel model;
  model.classes = {"a", "b"};
  model.feature_kinds = {FeatureKind::numeric};
  model.config.n_estimators = 2;
  Tree t1;
  t1.nodes.push_back({-1, 0, -1, -1, 0});
  t1.probs = {1.0, 0.0};
  Tree t2;
  t2.nodes.push_back({-1, 0, -1, -1, 0});
  t2.probs = {0.0, 1.0};
  model.trees = {t1, t2};
  const auto p = predict_proba(model, {0.5});
  CHECK(p == std::vector<double>{0.5, 0.5});

  // One pure-leaf tree gives that leaf's one-hot vector.
  model.trees = {t1};
  CHECK(predict_proba(model, {0.5}) == std::vector<double>{1.0, 0.0});

  REQUIRE_THROWS_AS(predict_proba(model, {0.5, 0.7}), std::invalid_argument);
}

TEST_CASE("probability normalization holds across a batch") {
  const Dataset ds = oracles::make_toy_dataset(200, 3);
  ForestConfig cfg;
  cfg.n_estimators = 60;
  cfg.seed = 5;
  const ForestModel model = fit_forest(ds, all_rows(ds), cfg);
  std::vector<std::vector<double>> rows;
  for (int r = 0; r < 50; ++r) rows.push_back(ds.row(r));
  const auto batch = predict_proba_batch(model, rows);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    REQUIRE_THAT(batch[r][0] + batch[r][1], WithinAbs(1.0, 1e-9));
    REQUIRE(batch[r] == predict_proba(model, rows[r]));
  }
}

TEST_CASE("nominal splits are one-vs-rest on categories") {
  // Label equals (city == paris): a single one-vs-rest split nails it.
  std::vector<FeatureSchema> schema{
      {"city", FeatureKind::nominal, false, {"paris", "rome", "oslo"}, "F1"}};
  Dataset ds(schema, {"no", "yes"});
  Rng rng(4);
  for (int i = 0; i < 120; ++i) {
    const int c = static_cast<int>(rng.below(3));
    ds.add_row({static_cast<double>(c)}, c == 0 ? 1 : 0);
  }
  ForestConfig cfg;
  cfg.n_estimators = 20;
  const ForestModel model = fit_forest(ds, all_rows(ds), cfg);
  CHECK(predict_proba(model, {0.0})[1] == 1.0);
  CHECK(predict_proba(model, {1.0})[0] == 1.0);
  CHECK(predict_proba(model, {2.0})[0] == 1.0);
}

TEST_CASE("max_depth 0 forces a root leaf with the class prior") {
  const Dataset ds = oracles::make_toy_dataset(100, 13);
  ForestConfig cfg;
  cfg.n_estimators = 5;
  cfg.max_depth = 0;
  const ForestModel model = fit_forest(ds, all_rows(ds), cfg);
  for (const Tree& t : model.trees) REQUIRE(t.nodes.size() == 1);
}

TEST_CASE("tune scores the grid on validation accuracy") {
  const Dataset ds = oracles::make_xor_dataset(400, 19);
  std::vector<int> train, validation;
  for (int i = 0; i < 400; ++i) (i < 280 ? train : validation).push_back(i);

  // Single-config grid returns that config.
  ForestConfig only;
  only.n_estimators = 25;
  only.seed = 2;
  const TuneResult single = tune(ds, train, validation, {only});
  CHECK(single.best == only);
  REQUIRE(single.scores.size() == 1);

  // The default grid is 3 x 2 x 2.
  const auto grid = default_grid(1);
  CHECK(grid.size() == 12);

  // A depth-0 forest cannot learn XOR; the full-depth config must win.
  ForestConfig crippled = only;
  crippled.max_depth = 0;
  const TuneResult duel = tune(ds, train, validation, {crippled, only});
  CHECK(duel.best == only);
  CHECK(duel.scores[1].second > duel.scores[0].second + 0.2);

  REQUIRE_THROWS_AS(tune(ds, train, {}, {only}), std::invalid_argument);
  REQUIRE_THROWS_AS(tune(ds, train, validation, {}), std::invalid_argument);
}

TEST_CASE("ensemble variance shrinks as the forest grows") {
  // Noisy mixture so single trees disagree; compare the spread of the
  // predicted probability on a fixed probe across re-seeded forests.
  std::vector<FeatureSchema> schema{{"x", FeatureKind::numeric, false, {}, "F1"},
                                    {"y", FeatureKind::numeric, false, {}, "F2"}};
  Dataset ds(schema, {"0", "1"});
  Rng rng(23);
  for (int i = 0; i < 240; ++i) {
    const double x = rng.uniform01(), y = rng.uniform01();
    const int label = (x + 0.4 * y + 0.5 * rng.uniform01()) > 0.95 ? 1 : 0;
    ds.add_row({x, y}, label);
  }
  const std::vector<double> probe{0.55, 0.5};
  auto spread = [&](int n_trees) {
    std::vector<double> ps;
    for (std::uint64_t s = 0; s < 20; ++s) {
      ForestConfig cfg;
      cfg.n_estimators = n_trees;
      cfg.seed = 1000 + s;
      ps.push_back(predict_proba(fit_forest(ds, all_rows(ds), cfg), probe)[1]);
    }
    double mean = 0;
    for (double p : ps) mean += p;
    mean /= static_cast<double>(ps.size());
    double var = 0;
    for (double p : ps) var += (p - mean) * (p - mean);
    return var / static_cast<double>(ps.size());
  };
  CHECK(spread(100) < spread(10));
}

TEST_CASE("forest serialization round-trips predictions") {
  const Dataset ds = oracles::make_toy_dataset(150, 77);
  ForestConfig cfg;
  cfg.n_estimators = 30;
  cfg.seed = 9;
  cfg.criterion = SplitCriterion::entropy;
  cfg.max_features = MaxFeaturesRule::log2_rule;
  const ForestModel model = fit_forest(ds, all_rows(ds), cfg);
  const ForestModel back = forest_from_json(forest_to_json(model));
  CHECK(back.config == model.config);
  CHECK(back.classes == model.classes);
  for (int r = 0; r < 40; ++r) REQUIRE(predict_proba(back, ds.row(r)) == predict_proba(model, ds.row(r)));
}

TEST_CASE("tuning report lists every config with its score") {
  const Dataset ds = oracles::make_xor_dataset(150, 40);
  std::vector<int> train, validation;
  for (int i = 0; i < 150; ++i) (i < 100 ? train : validation).push_back(i);
  ForestConfig a, b;
  a.n_estimators = 10;
  b.n_estimators = 20;
  const TuneResult res = tune(ds, train, validation, {a, b});
  std::ostringstream os;
  tuning_to_csv(res, os);
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  CHECK(line == "n_estimators,criterion,max_features,accuracy,selected");
  std::size_t rows = 0, selected = 0;
  while (std::getline(is, line)) {
    ++rows;
    if (line.ends_with(",1")) ++selected;
  }
  CHECK(rows == 2);
  CHECK(selected == 1);
}

TEST_CASE("empty training view is rejected") {
  const Dataset ds = oracles::make_toy_dataset(50, 2);
  ForestConfig cfg;
  REQUIRE_THROWS_AS(fit_forest(ds, {}, cfg), std::invalid_argument);
}
