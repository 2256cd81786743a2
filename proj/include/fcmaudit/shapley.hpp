#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <set>
#include <vector>

#include <Eigen/Dense>

#include "fcmaudit/dataset.hpp"
#include "fcmaudit/forest.hpp"
#include "fcmaudit/rng.hpp"

namespace fcmaudit {

// Batch prediction function: rows -> class-probability vectors.
using BatchPredictor =
    std::function<std::vector<std::vector<double>>(const std::vector<std::vector<double>>&)>;

inline BatchPredictor forest_predictor(const ForestModel& model) {
  return [&model](const std::vector<std::vector<double>>& rows) {
    return predict_proba_batch(model, rows);
  };
}

struct BackgroundSet {
  std::vector<std::vector<double>> rows;
  std::uint64_t seed = 0;
};

// Seeded draw of k background records (without replacement) from a row pool.
inline BackgroundSet sample_background(const Dataset& ds, const std::vector<int>& pool,
                                       int k, std::uint64_t seed) {
  if (pool.empty() || k < 1)
    throw std::invalid_argument("sample_background: need a non-empty pool and k >= 1");
  std::vector<int> idx(pool);
  Rng rng(seed);
  rng.shuffle(idx);
  if (static_cast<std::size_t>(k) < idx.size()) idx.resize(k);
  std::sort(idx.begin(), idx.end());
  BackgroundSet bg;
  bg.seed = seed;
  for (int r : idx) bg.rows.push_back(ds.row(r));
  return bg;
}

struct ShapExplanation {
  std::vector<double> attributions;
  double base_value = 0.0;
  double prediction = 0.0;
  int target_class = 0;
};

namespace detail {

// Value of one coalition: mean prediction over hybrids that take coalition
// features from the instance and the rest from each background row.
inline double coalition_value(const BatchPredictor& predict,
                              const std::vector<double>& instance, std::uint64_t mask,
                              const BackgroundSet& bg, int target_class,
                              std::vector<std::vector<double>>& scratch) {
  scratch.assign(bg.rows.begin(), bg.rows.end());
  for (auto& row : scratch)
    for (std::size_t j = 0; j < instance.size(); ++j)
      if (mask >> j & 1) row[j] = instance[j];
  const auto probs = predict(scratch);
  double mean = 0.0;
  for (const auto& p : probs) mean += p[target_class];
  return mean / static_cast<double>(probs.size());
}

}  // namespace detail

// Mean prediction with features in `subset` fixed to the instance and the
// rest marginalized over the background set.
inline double marginal_prediction(const BatchPredictor& predict,
                                  const std::vector<double>& instance,
                                  const std::vector<int>& subset, const BackgroundSet& bg,
                                  int target_class) {
  std::uint64_t mask = 0;
  for (int j : subset) {
    if (j < 0 || static_cast<std::size_t>(j) >= instance.size())
      throw std::invalid_argument("marginal_prediction: feature index out of range");
    mask |= std::uint64_t{1} << j;
  }
  std::vector<std::vector<double>> scratch;
  return detail::coalition_value(predict, instance, mask, bg, target_class, scratch);
}

// Exact Shapley attributions by full subset enumeration with factorial
// weights. Limited to exact_limit features (2^m coalition evaluations).
inline ShapExplanation exact_shapley(const BatchPredictor& predict,
                                     const std::vector<double>& instance,
                                     const BackgroundSet& bg, int target_class,
                                     int exact_limit = 15) {
  const std::size_t m = instance.size();
  if (m == 0) throw std::invalid_argument("exact_shapley: empty instance");
  if (m > static_cast<std::size_t>(exact_limit))
    throw std::invalid_argument("exact_shapley: " + std::to_string(m) +
                                " features exceed the exact limit of " +
                                std::to_string(exact_limit) + "; use kernel_shap");

  const std::uint64_t full = (std::uint64_t{1} << m) - 1;
  std::vector<double> v(full + 1);
  std::vector<std::vector<double>> scratch;
  for (std::uint64_t mask = 0; mask <= full; ++mask)
    v[mask] = detail::coalition_value(predict, instance, mask, bg, target_class, scratch);

  std::vector<double> fact(m + 1, 1.0);
  for (std::size_t i = 1; i <= m; ++i) fact[i] = fact[i - 1] * static_cast<double>(i);
  std::vector<double> weight(m);  // |B|!(m-|B|-1)!/m!
  for (std::size_t b = 0; b < m; ++b) weight[b] = fact[b] * fact[m - 1 - b] / fact[m];

  ShapExplanation out;
  out.target_class = target_class;
  out.base_value = v[0];
  out.prediction = v[full];
  out.attributions.assign(m, 0.0);
  for (std::size_t c = 0; c < m; ++c) {
    const std::uint64_t bit = std::uint64_t{1} << c;
    double s = 0.0;
    for (std::uint64_t mask = 0; mask <= full; ++mask) {
      if (mask & bit) continue;
      s += weight[static_cast<std::size_t>(std::popcount(mask))] * (v[mask | bit] - v[mask]);
    }
    out.attributions[c] = s;
  }
  return out;
}

namespace detail {

inline double binomial(std::size_t n, std::size_t k) {
  double r = 1.0;
  for (std::size_t i = 0; i < k; ++i)
    r = r * static_cast<double>(n - i) / static_cast<double>(i + 1);
  return r;
}

// Next bit permutation with the same popcount (Gosper's hack).
inline std::uint64_t next_same_popcount(std::uint64_t v) {
  const std::uint64_t t = v | (v - 1);
  return (t + 1) | (((~t & (t + 1)) - 1) >> (std::countr_zero(v) + 1));
}

}  // namespace detail

// Kernel-SHAP: Shapley-kernel-weighted least squares over coalitions, with
// the empty and full coalitions enforced as exact constraints. Coalition
// sizes are covered outward-in; a size that exceeds the remaining budget is
// sampled uniformly without replacement with its kernel mass preserved. When
// n_coalitions covers all 2^m coalitions the result equals exact Shapley
// values up to numerical error.
inline ShapExplanation kernel_shap(const BatchPredictor& predict,
                                   const std::vector<double>& instance,
                                   const BackgroundSet& bg, int n_coalitions,
                                   std::uint64_t seed, int target_class) {
  const std::size_t m = instance.size();
  if (m == 0) throw std::invalid_argument("kernel_shap: empty instance");
  if (m > 62) throw std::invalid_argument("kernel_shap: more than 62 features unsupported");
  if (n_coalitions < static_cast<int>(m) + 2)
    throw std::invalid_argument("kernel_shap: n_coalitions must be at least m + 2 = " +
                                std::to_string(m + 2));

  std::vector<std::vector<double>> scratch;
  const std::uint64_t full = (std::uint64_t{1} << m) - 1;
  const double base = detail::coalition_value(predict, instance, 0, bg, target_class, scratch);
  const double fx = detail::coalition_value(predict, instance, full, bg, target_class, scratch);

  if (m == 1) {
    ShapExplanation out;
    out.target_class = target_class;
    out.base_value = base;
    out.prediction = fx;
    out.attributions = {fx - base};
    return out;
  }

  // Sizes ordered outward-in: 1, m-1, 2, m-2, ...
  std::vector<std::size_t> sizes;
  for (std::size_t s = 1; s <= m - 1; ++s) sizes.push_back(s);
  std::stable_sort(sizes.begin(), sizes.end(), [m](std::size_t a, std::size_t b) {
    return std::min(a, m - a) < std::min(b, m - b) ||
           (std::min(a, m - a) == std::min(b, m - b) && a < b);
  });

  Rng rng(seed);
  std::vector<std::pair<std::uint64_t, double>> rows;  // (mask, weight)
  double budget = static_cast<double>(n_coalitions - 2);
  for (std::size_t s : sizes) {
    if (budget < 1.0) break;
    const double count = detail::binomial(m, s);
    const double kernel = static_cast<double>(m - 1) /
                          (count * static_cast<double>(s) * static_cast<double>(m - s));
    if (count <= budget) {
      std::uint64_t mask = (std::uint64_t{1} << s) - 1;
      for (double i = 0; i < count; ++i) {
        rows.emplace_back(mask, kernel);
        mask = detail::next_same_popcount(mask);
      }
      budget -= count;
    } else {
      // Sample `budget` distinct subsets of this size, preserving total mass.
      const std::size_t take = static_cast<std::size_t>(budget);
      std::set<std::uint64_t> seen;
      std::vector<int> pool(m);
      std::iota(pool.begin(), pool.end(), 0);
      while (seen.size() < take) {
        for (std::size_t i = 0; i < s; ++i)
          std::swap(pool[i], pool[i + rng.below(pool.size() - i)]);
        std::uint64_t mask = 0;
        for (std::size_t i = 0; i < s; ++i) mask |= std::uint64_t{1} << pool[i];
        seen.insert(mask);
      }
      const double w = kernel * count / static_cast<double>(take);
      for (std::uint64_t mask : seen) rows.emplace_back(mask, w);
      budget = 0.0;
    }
  }

  // Reduced weighted least squares with the efficiency constraint eliminated
  // through the last feature.
  const std::size_t r = rows.size();
  Eigen::MatrixXd design(r, m - 1);
  Eigen::VectorXd target(r);
  for (std::size_t i = 0; i < r; ++i) {
    const auto [mask, w] = rows[i];
    const double sw = std::sqrt(w);
    const double z_last = (mask >> (m - 1)) & 1 ? 1.0 : 0.0;
    const double y = detail::coalition_value(predict, instance, mask, bg, target_class,
                                             scratch) -
                     base - z_last * (fx - base);
    for (std::size_t j = 0; j + 1 < m; ++j) {
      const double z = (mask >> j) & 1 ? 1.0 : 0.0;
      design(i, j) = sw * (z - z_last);
    }
    target(i) = sw * y;
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
  if (qr.rank() < static_cast<Eigen::Index>(m - 1))
    throw std::runtime_error(
        "kernel_shap: rank-deficient coalition design; increase n_coalitions");
  const Eigen::VectorXd sol = qr.solve(target);

  ShapExplanation out;
  out.target_class = target_class;
  out.base_value = base;
  out.prediction = fx;
  out.attributions.assign(m, 0.0);
  double sum = 0.0;
  for (std::size_t j = 0; j + 1 < m; ++j) {
    out.attributions[j] = sol(j);
    sum += sol(j);
  }
  out.attributions[m - 1] = (fx - base) - sum;
  return out;
}

enum class ShapMethod { exact, kernel };

struct ShapSettings {
  ShapMethod method = ShapMethod::kernel;
  int n_coalitions = 4096;
  int exact_limit = 15;
  std::uint64_t seed = 0;
};

inline ShapExplanation explain_instance(const BatchPredictor& predict,
                                        const std::vector<double>& instance,
                                        const BackgroundSet& bg, int target_class,
                                        const ShapSettings& st) {
  if (st.method == ShapMethod::exact)
    return exact_shapley(predict, instance, bg, target_class, st.exact_limit);
  return kernel_shap(predict, instance, bg, st.n_coalitions, st.seed, target_class);
}

// Global importance: mean |attribution| per feature over the given instances.
// Kernel runs derive one seed stream per instance.
inline std::vector<double> global_shap(const BatchPredictor& predict,
                                       const std::vector<std::vector<double>>& instances,
                                       const BackgroundSet& bg, int target_class,
                                       const ShapSettings& st) {
  if (instances.empty()) throw std::invalid_argument("global_shap: no instances");
  std::vector<double> acc(instances[0].size(), 0.0);
  for (std::size_t i = 0; i < instances.size(); ++i) {
    ShapSettings local = st;
    local.seed = derive_seed(st.seed, i);
    const ShapExplanation e = explain_instance(predict, instances[i], bg, target_class, local);
    for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += std::abs(e.attributions[j]);
  }
  for (double& v : acc) v /= static_cast<double>(instances.size());
  return acc;
}

// Explanation CSV: feature id, attribution, |attribution|.
inline void shap_to_csv(const ShapExplanation& e, const std::vector<std::string>& feature_ids,
                        std::ostream& os) {
  csv::write_row(os, {"feature", "attribution", "abs_attribution"});
  for (std::size_t j = 0; j < e.attributions.size(); ++j)
    csv::write_row(os, {feature_ids[j], csv::format_double(e.attributions[j]),
                        csv::format_double(std::abs(e.attributions[j]))});
}

}  // namespace fcmaudit
