#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stack>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fcmaudit/dataset.hpp"
#include "fcmaudit/rng.hpp"

namespace fcmaudit {

enum class SplitCriterion { gini, entropy };
enum class MaxFeaturesRule { sqrt_rule, log2_rule };

struct ForestConfig {
  int n_estimators = 100;
  SplitCriterion criterion = SplitCriterion::gini;
  MaxFeaturesRule max_features = MaxFeaturesRule::sqrt_rule;
  std::uint64_t seed = 0;
  int max_depth = -1;  // -1: unlimited

  bool operator==(const ForestConfig&) const = default;
};

inline std::string to_string(SplitCriterion c) {
  return c == SplitCriterion::gini ? "gini" : "entropy";
}
inline std::string to_string(MaxFeaturesRule r) {
  return r == MaxFeaturesRule::sqrt_rule ? "sqrt" : "log2";
}

// Axis-aligned decision tree. Numeric nodes send value <= split left; nominal
// nodes send category == split left (one-vs-rest). Leaves index into a flat
// class-probability pool.
struct TreeNode {
  int feature = -1;
  double split = 0.0;
  int left = -1;
  int right = -1;
  int leaf = -1;  // probs offset / n_classes when >= 0
};

struct Tree {
  std::vector<TreeNode> nodes;
  std::vector<double> probs;  // n_leaves * n_classes
};

struct ForestModel {
  std::vector<Tree> trees;
  ForestConfig config;
  std::vector<std::string> classes;
  std::vector<FeatureKind> feature_kinds;

  std::size_t n_features() const { return feature_kinds.size(); }
};

namespace detail {

inline double impurity(const std::vector<double>& counts, double total, SplitCriterion c) {
  if (total <= 0.0) return 0.0;
  double out = c == SplitCriterion::gini ? 1.0 : 0.0;
  for (double k : counts) {
    if (k <= 0.0) continue;
    const double p = k / total;
    if (c == SplitCriterion::gini)
      out -= p * p;
    else
      out -= p * std::log2(p);
  }
  return out;
}

struct BestSplit {
  double gain = 0.0;
  int feature = -1;
  double split = 0.0;
  bool valid() const { return feature >= 0; }
};

inline int leaf_walk(const Tree& tree, const std::vector<FeatureKind>& kinds,
                     const double* row) {
  int node = 0;
  while (tree.nodes[node].leaf < 0) {
    const TreeNode& nd = tree.nodes[node];
    const double v = row[nd.feature];
    const bool go_left = kinds[nd.feature] == FeatureKind::numeric
                             ? v <= nd.split
                             : static_cast<int>(v) == static_cast<int>(nd.split);
    node = go_left ? nd.left : nd.right;
  }
  return tree.nodes[node].leaf;
}

}  // namespace detail

// Trains one ensemble. Every tree draws its own seeded bootstrap (n rows with
// replacement) and scores a fresh random feature subset at each node, so the
// result depends only on (data, config).
inline ForestModel fit_forest(const Dataset& ds, const std::vector<int>& rows,
                              const ForestConfig& cfg) {
  if (rows.empty()) throw std::invalid_argument("fit_forest: empty training view");
  if (cfg.n_estimators < 1) throw std::invalid_argument("fit_forest: n_estimators must be >= 1");
  const std::size_t m = ds.features();
  const std::size_t k_classes = ds.class_names().size();

  std::size_t k_features;
  if (cfg.max_features == MaxFeaturesRule::sqrt_rule)
    k_features = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(m))));
  else
    k_features = static_cast<std::size_t>(std::ceil(std::log2(static_cast<double>(m))));
  k_features = std::clamp<std::size_t>(k_features, 1, m);

  ForestModel model;
  model.config = cfg;
  model.classes = ds.class_names();
  model.feature_kinds.resize(m);
  for (std::size_t j = 0; j < m; ++j) model.feature_kinds[j] = ds.schema()[j].kind;
  model.trees.resize(cfg.n_estimators);

  std::vector<int> feature_pool(m);
  std::iota(feature_pool.begin(), feature_pool.end(), 0);

  for (int t = 0; t < cfg.n_estimators; ++t) {
    Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(t)));
    std::vector<int> samples(rows.size());
    for (auto& s : samples) s = rows[rng.below(rows.size())];

    Tree& tree = model.trees[t];
    struct Work {
      int node;
      std::size_t begin, end;
      int depth;
    };
    tree.nodes.push_back({});
    std::stack<Work> todo;
    todo.push({0, 0, samples.size(), 0});

    std::vector<double> counts(k_classes);
    std::vector<int> cand(feature_pool);
    std::vector<std::pair<double, int>> sorted;  // (value, label)

    while (!todo.empty()) {
      const Work w = todo.top();
      todo.pop();
      const std::size_t n_node = w.end - w.begin;

      std::fill(counts.begin(), counts.end(), 0.0);
      for (std::size_t i = w.begin; i < w.end; ++i) counts[ds.labels()[samples[i]]] += 1.0;
      const double total = static_cast<double>(n_node);
      bool pure = false;
      for (double c : counts)
        if (c == total) pure = true;

      auto make_leaf = [&] {
        tree.nodes[w.node].leaf = static_cast<int>(tree.probs.size() / k_classes);
        for (double c : counts) tree.probs.push_back(c / total);
      };

      if (pure || n_node < 2 || (cfg.max_depth >= 0 && w.depth >= cfg.max_depth)) {
        make_leaf();
        continue;
      }

      // Random feature subset for this node.
      for (std::size_t i = 0; i < k_features; ++i)
        std::swap(cand[i], cand[i + rng.below(cand.size() - i)]);

      const double parent_imp = detail::impurity(counts, total, cfg.criterion);
      detail::BestSplit best;
      std::vector<double> left_counts(k_classes), right_scratch(k_classes);

      for (std::size_t ci = 0; ci < k_features; ++ci) {
        const int f = cand[ci];
        if (ds.schema()[f].kind == FeatureKind::numeric) {
          sorted.clear();
          for (std::size_t i = w.begin; i < w.end; ++i)
            sorted.emplace_back(ds.value(samples[i], f), ds.labels()[samples[i]]);
          std::sort(sorted.begin(), sorted.end());
          std::fill(left_counts.begin(), left_counts.end(), 0.0);
          for (std::size_t i = 0; i + 1 < sorted.size(); ++i) {
            left_counts[sorted[i].second] += 1.0;
            if (sorted[i].first == sorted[i + 1].first) continue;
            const double nl = static_cast<double>(i + 1);
            const double nr = total - nl;
            const double imp_l = detail::impurity(left_counts, nl, cfg.criterion);
            for (std::size_t kc = 0; kc < k_classes; ++kc)
              right_scratch[kc] = counts[kc] - left_counts[kc];
            const double imp_r = detail::impurity(right_scratch, nr, cfg.criterion);
            const double gain = parent_imp - (nl * imp_l + nr * imp_r) / total;
            if (gain > best.gain + 1e-12) {
              best = {gain, f, (sorted[i].first + sorted[i + 1].first) / 2.0};
            }
          }
        } else {
          // One-vs-rest on each category present in the node.
          const int n_cats = static_cast<int>(ds.schema()[f].categories.size());
          std::vector<double> cat_class(static_cast<std::size_t>(n_cats) * k_classes, 0.0);
          std::vector<double> cat_tot(n_cats, 0.0);
          for (std::size_t i = w.begin; i < w.end; ++i) {
            const int c = ds.category(samples[i], f);
            cat_class[static_cast<std::size_t>(c) * k_classes + ds.labels()[samples[i]]] += 1.0;
            cat_tot[c] += 1.0;
          }
          for (int c = 0; c < n_cats; ++c) {
            const double nl = cat_tot[c];
            if (nl <= 0.0 || nl >= total) continue;
            for (std::size_t kc = 0; kc < k_classes; ++kc)
              left_counts[kc] = cat_class[static_cast<std::size_t>(c) * k_classes + kc];
            const double imp_l = detail::impurity(left_counts, nl, cfg.criterion);
            for (std::size_t kc = 0; kc < k_classes; ++kc)
              right_scratch[kc] = counts[kc] - left_counts[kc];
            const double imp_r = detail::impurity(right_scratch, total - nl, cfg.criterion);
            const double gain = parent_imp - (nl * imp_l + (total - nl) * imp_r) / total;
            if (gain > best.gain + 1e-12) {
              best = {gain, f, static_cast<double>(c)};
            }
          }
        }
      }

      if (!best.valid()) {
        make_leaf();
        continue;
      }

      const int f = best.feature;
      const bool numeric = ds.schema()[f].kind == FeatureKind::numeric;
      auto goes_left = [&](int sample) {
        const double v = ds.value(sample, f);
        return numeric ? v <= best.split : static_cast<int>(v) == static_cast<int>(best.split);
      };
      auto mid_it = std::partition(samples.begin() + static_cast<long>(w.begin),
                                   samples.begin() + static_cast<long>(w.end), goes_left);
      const std::size_t mid = static_cast<std::size_t>(mid_it - samples.begin());

      tree.nodes[w.node].feature = f;
      tree.nodes[w.node].split = best.split;
      const int li = static_cast<int>(tree.nodes.size());
      tree.nodes.push_back({});
      tree.nodes.push_back({});
      tree.nodes[w.node].left = li;
      tree.nodes[w.node].right = li + 1;
      todo.push({li + 1, mid, w.end, w.depth + 1});
      todo.push({li, w.begin, mid, w.depth + 1});
    }
  }
  return model;
}

inline std::vector<double> predict_proba(const ForestModel& model,
                                         const std::vector<double>& row) {
  if (row.size() != model.n_features())
    throw std::invalid_argument("predict_proba: row does not match model schema");
  const std::size_t k = model.classes.size();
  std::vector<double> out(k, 0.0);
  for (const Tree& tree : model.trees) {
    const int leaf = detail::leaf_walk(tree, model.feature_kinds, row.data());
    for (std::size_t c = 0; c < k; ++c) out[c] += tree.probs[leaf * k + c];
  }
  for (double& v : out) v /= static_cast<double>(model.trees.size());
  return out;
}

// Tree-major batch prediction: iterates each tree over all rows while its
// nodes are hot, which is much faster than row-major for large ensembles.
inline std::vector<std::vector<double>> predict_proba_batch(
    const ForestModel& model, const std::vector<std::vector<double>>& rows) {
  const std::size_t k = model.classes.size();
  std::vector<std::vector<double>> out(rows.size(), std::vector<double>(k, 0.0));
  for (const auto& row : rows)
    if (row.size() != model.n_features())
      throw std::invalid_argument("predict_proba_batch: row does not match model schema");
  for (const Tree& tree : model.trees) {
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const int leaf = detail::leaf_walk(tree, model.feature_kinds, rows[r].data());
      for (std::size_t c = 0; c < k; ++c) out[r][c] += tree.probs[leaf * k + c];
    }
  }
  for (auto& row : out)
    for (double& v : row) v /= static_cast<double>(model.trees.size());
  return out;
}

inline int predict_class(const ForestModel& model, const std::vector<double>& row) {
  const auto p = predict_proba(model, row);
  return static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
}

inline double accuracy(const ForestModel& model, const Dataset& ds,
                       const std::vector<int>& rows) {
  if (rows.empty()) throw std::invalid_argument("accuracy: empty view");
  std::size_t hits = 0;
  for (int r : rows)
    if (predict_class(model, ds.row(r)) == ds.labels()[r]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(rows.size());
}

struct TuneResult {
  ForestConfig best;
  std::vector<std::pair<ForestConfig, double>> scores;  // in grid order
};

// Fits every config on the training view, scores validation accuracy, and
// returns the argmax (first config wins ties). Callers refit on
// train + validation afterwards.
inline TuneResult tune(const Dataset& ds, const std::vector<int>& train,
                       const std::vector<int>& validation,
                       const std::vector<ForestConfig>& grid) {
  if (grid.empty()) throw std::invalid_argument("tune: empty config grid");
  if (train.empty() || validation.empty())
    throw std::invalid_argument("tune: empty train or validation view");
  TuneResult out;
  double best_score = -1.0;
  for (const ForestConfig& cfg : grid) {
    const ForestModel model = fit_forest(ds, train, cfg);
    const double score = accuracy(model, ds, validation);
    out.scores.emplace_back(cfg, score);
    if (score > best_score) {
      best_score = score;
      out.best = cfg;
    }
  }
  return out;
}

// The 3 x 2 x 2 grid used for tuning by default.
inline std::vector<ForestConfig> default_grid(std::uint64_t seed, int max_depth = -1) {
  std::vector<ForestConfig> grid;
  for (int n : {100, 500, 1000})
    for (SplitCriterion c : {SplitCriterion::gini, SplitCriterion::entropy})
      for (MaxFeaturesRule r : {MaxFeaturesRule::sqrt_rule, MaxFeaturesRule::log2_rule})
        grid.push_back({n, c, r, seed, max_depth});
  return grid;
}

inline nlohmann::json forest_to_json(const ForestModel& model) {
  nlohmann::json j;
  j["classes"] = model.classes;
  std::vector<std::string> kinds;
  for (FeatureKind k : model.feature_kinds)
    kinds.push_back(k == FeatureKind::numeric ? "numeric" : "nominal");
  j["feature_kinds"] = kinds;
  j["config"] = {{"n_estimators", model.config.n_estimators},
                 {"criterion", to_string(model.config.criterion)},
                 {"max_features", to_string(model.config.max_features)},
                 {"seed", model.config.seed},
                 {"max_depth", model.config.max_depth}};
  auto& trees = j["trees"] = nlohmann::json::array();
  for (const Tree& t : model.trees) {
    nlohmann::json nodes = nlohmann::json::array();
    for (const TreeNode& n : t.nodes)
      nodes.push_back({n.feature, n.split, n.left, n.right, n.leaf});
    trees.push_back({{"nodes", std::move(nodes)}, {"probs", t.probs}});
  }
  return j;
}

inline ForestModel forest_from_json(const nlohmann::json& j) {
  ForestModel model;
  model.classes = j.at("classes").get<std::vector<std::string>>();
  for (const auto& k : j.at("feature_kinds"))
    model.feature_kinds.push_back(k.get<std::string>() == "numeric" ? FeatureKind::numeric
                                                                    : FeatureKind::nominal);
  const auto& c = j.at("config");
  model.config.n_estimators = c.at("n_estimators").get<int>();
  model.config.criterion = c.at("criterion").get<std::string>() == "gini"
                               ? SplitCriterion::gini
                               : SplitCriterion::entropy;
  model.config.max_features = c.at("max_features").get<std::string>() == "sqrt"
                                  ? MaxFeaturesRule::sqrt_rule
                                  : MaxFeaturesRule::log2_rule;
  model.config.seed = c.at("seed").get<std::uint64_t>();
  model.config.max_depth = c.at("max_depth").get<int>();
  for (const auto& tj : j.at("trees")) {
    Tree t;
    for (const auto& nj : tj.at("nodes")) {
      TreeNode n;
      n.feature = nj[0].get<int>();
      n.split = nj[1].get<double>();
      n.left = nj[2].get<int>();
      n.right = nj[3].get<int>();
      n.leaf = nj[4].get<int>();
      t.nodes.push_back(n);
    }
    t.probs = tj.at("probs").get<std::vector<double>>();
    model.trees.push_back(std::move(t));
  }
  return model;
}

// Tuning report: one row per config with its validation accuracy.
inline void tuning_to_csv(const TuneResult& res, std::ostream& os) {
  csv::write_row(os, {"n_estimators", "criterion", "max_features", "accuracy", "selected"});
  for (const auto& [cfg, score] : res.scores) {
    csv::write_row(os, {std::to_string(cfg.n_estimators), to_string(cfg.criterion),
                        to_string(cfg.max_features), csv::format_double(score),
                        cfg == res.best ? "1" : "0"});
  }
}

}  // namespace fcmaudit
