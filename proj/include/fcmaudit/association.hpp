#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fcmaudit/csv.hpp"
#include "fcmaudit/dataset.hpp"
#include "fcmaudit/matrix.hpp"
#include "fcmaudit/rng.hpp"

namespace fcmaudit {

// |sample Pearson correlation|. Zero-variance columns give 0 by convention.
inline double pearson_abs(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size())
    throw std::invalid_argument("pearson_abs: column lengths differ");
  const std::size_t n = x.size();
  if (n < 2) return 0.0;
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx <= 0.0 || syy <= 0.0) return 0.0;
  return std::min(1.0, std::abs(sxy) / std::sqrt(sxx * syy));
}

// Cramer's V from the contingency table of observed categories,
// V = sqrt(chi2 / (n * min(r-1, c-1))); 0 when either side has one category.
inline double cramers_v(std::span<const int> x, std::span<const int> y) {
  if (x.size() != y.size())
    throw std::invalid_argument("cramers_v: column lengths differ");
  const std::size_t n = x.size();
  if (n == 0) throw std::invalid_argument("cramers_v: empty columns");

  std::map<int, int> xi, yi;
  for (int v : x) xi.emplace(v, 0);
  for (int v : y) yi.emplace(v, 0);
  int r = 0, c = 0;
  for (auto& [k, v] : xi) v = r++;
  for (auto& [k, v] : yi) v = c++;
  if (std::min(r - 1, c - 1) < 1) return 0.0;

  std::vector<double> table(static_cast<std::size_t>(r) * c, 0.0);
  std::vector<double> row_tot(r, 0.0), col_tot(c, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const int a = xi[x[i]], b = yi[y[i]];
    table[static_cast<std::size_t>(a) * c + b] += 1.0;
    row_tot[a] += 1.0;
    col_tot[b] += 1.0;
  }
  double chi2 = 0.0;
  for (int a = 0; a < r; ++a)
    for (int b = 0; b < c; ++b) {
      const double expected = row_tot[a] * col_tot[b] / static_cast<double>(n);
      const double d = table[static_cast<std::size_t>(a) * c + b] - expected;
      chi2 += d * d / expected;
    }
  const double v2 = chi2 / (static_cast<double>(n) * std::min(r - 1, c - 1));
  return std::min(1.0, std::sqrt(std::max(0.0, v2)));
}

// Fuzzy c-means output on a single numeric column.
struct FuzzyPartition {
  std::vector<double> memberships;  // n x c, row-major; rows sum to 1
  std::vector<double> prototypes;   // c cluster centers, ascending
  double alpha = 2.0;
  double fpc = 0.0;

  std::size_t clusters() const { return prototypes.size(); }
  double membership(std::size_t i, std::size_t j) const {
    return memberships[i * clusters() + j];
  }
};

// Fuzzy partition coefficient, (1/n) * sum_ij mu_ij^alpha.
inline double fpc(const FuzzyPartition& p) {
  const std::size_t c = p.clusters();
  if (c == 0 || p.memberships.empty()) return 0.0;
  const std::size_t n = p.memberships.size() / c;
  double s = 0.0;
  for (double mu : p.memberships) s += std::pow(mu, p.alpha);
  return s / static_cast<double>(n);
}

// Seeded random memberships, each row normalized to sum 1. Shared with the
// test-side reference iteration so trajectories are comparable.
inline std::vector<double> initial_memberships(std::size_t n, std::size_t c,
                                               std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> u(n * c);
  for (std::size_t i = 0; i < n; ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      u[i * c + j] = rng.uniform01();
      sum += u[i * c + j];
    }
    if (sum == 0.0) {
      for (std::size_t j = 0; j < c; ++j) u[i * c + j] = 1.0 / static_cast<double>(c);
    } else {
      for (std::size_t j = 0; j < c; ++j) u[i * c + j] /= sum;
    }
  }
  return u;
}

// One-dimensional fuzzy c-means: alternates prototype and membership updates
// until the largest prototype shift drops below tol or max_iter sweeps run.
// A point coinciding with a prototype gets membership 1 there (first such
// cluster) and 0 elsewhere. Prototypes are sorted ascending on return.
inline FuzzyPartition fuzzy_cmeans(std::span<const double> values, int c, double alpha,
                                   std::uint64_t seed, int max_iter = 300,
                                   double tol = 1e-10) {
  if (c < 1) throw std::invalid_argument("fuzzy_cmeans: cluster count must be >= 1");
  if (alpha <= 1.0)
    throw std::invalid_argument("fuzzy_cmeans: alpha must be > 1");
  const std::size_t n = values.size();
  {
    std::vector<double> distinct(values.begin(), values.end());
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    if (distinct.size() < static_cast<std::size_t>(c))
      throw std::invalid_argument("fuzzy_cmeans: fewer distinct values (" +
                                  std::to_string(distinct.size()) + ") than clusters (" +
                                  std::to_string(c) + ")");
  }

  const std::size_t cc = static_cast<std::size_t>(c);
  std::vector<double> u = initial_memberships(n, cc, seed);
  std::vector<double> z(cc, 0.0), z_prev(cc, 0.0);
  const double exponent = 2.0 / (alpha - 1.0);

  for (int iter = 0; iter < max_iter; ++iter) {
    // Prototypes (weighted means).
    for (std::size_t j = 0; j < cc; ++j) {
      double num = 0.0, den = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double w = std::pow(u[i * cc + j], alpha);
        num += w * values[i];
        den += w;
      }
      z[j] = den > 0.0 ? num / den : z_prev[j];
    }
    // Memberships.
    for (std::size_t i = 0; i < n; ++i) {
      int hit = -1;
      for (std::size_t j = 0; j < cc; ++j)
        if (values[i] == z[j]) {
          hit = static_cast<int>(j);
          break;
        }
      if (hit >= 0) {
        for (std::size_t j = 0; j < cc; ++j) u[i * cc + j] = 0.0;
        u[i * cc + hit] = 1.0;
        continue;
      }
      for (std::size_t j = 0; j < cc; ++j) {
        const double dj = std::abs(values[i] - z[j]);
        double denom = 0.0;
        for (std::size_t l = 0; l < cc; ++l)
          denom += std::pow(dj / std::abs(values[i] - z[l]), exponent);
        u[i * cc + j] = 1.0 / denom;
      }
    }
    double shift = 0.0;
    for (std::size_t j = 0; j < cc; ++j) shift = std::max(shift, std::abs(z[j] - z_prev[j]));
    z_prev = z;
    if (iter > 0 && shift < tol) break;
  }

  // Stable ascending prototype order.
  std::vector<std::size_t> order(cc);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return z[a] < z[b]; });
  FuzzyPartition out;
  out.alpha = alpha;
  out.prototypes.resize(cc);
  out.memberships.resize(n * cc);
  for (std::size_t j = 0; j < cc; ++j) out.prototypes[j] = z[order[j]];
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < cc; ++j) out.memberships[i * cc + j] = u[i * cc + order[j]];
  out.fpc = fpc(out);
  return out;
}

// Fuzzy-c-means discretization of a numeric column: tries every feasible c in
// [c_min, c_max], keeps the partition with the largest FPC (ties favor the
// smallest c), and assigns each row its argmax-membership cluster.
struct Discretization {
  std::vector<int> labels;
  FuzzyPartition partition;
  int chosen_c = 0;
  std::vector<std::pair<int, double>> fpc_by_c;  // candidate c -> FPC
};

inline Discretization discretize_numeric(std::span<const double> values, int c_min, int c_max,
                                         double alpha, std::uint64_t seed) {
  if (c_min < 1 || c_max < c_min)
    throw std::invalid_argument("discretize_numeric: invalid cluster range");
  std::vector<double> distinct(values.begin(), values.end());
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());

  Discretization out;
  bool found = false;
  for (int c = c_min; c <= c_max; ++c) {
    if (static_cast<std::size_t>(c) > distinct.size()) continue;  // infeasible, skipped
    FuzzyPartition p = fuzzy_cmeans(values, c, alpha, derive_seed(seed, c));
    out.fpc_by_c.emplace_back(c, p.fpc);
    if (!found || p.fpc > out.partition.fpc) {
      out.partition = std::move(p);
      out.chosen_c = c;
      found = true;
    }
  }
  if (!found)
    throw std::runtime_error("discretize_numeric: no feasible cluster count (" +
                             std::to_string(distinct.size()) + " distinct values)");

  const std::size_t cc = out.partition.clusters();
  out.labels.resize(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    int best = 0;
    for (std::size_t j = 1; j < cc; ++j)
      if (out.partition.membership(i, j) > out.partition.membership(i, best))
        best = static_cast<int>(j);
    out.labels[i] = best;
  }
  return out;
}

enum class DiagonalPolicy { unit, zero };

// Symmetric m x m feature-association weights in [0,1].
struct AssociationMatrix {
  Matrix weights;
  std::vector<std::string> feature_ids;
  DiagonalPolicy diagonal_policy = DiagonalPolicy::unit;

  std::size_t size() const { return weights.size(); }
  double at(std::size_t i, std::size_t j) const { return weights(i, j); }
};

struct AssociationOptions {
  DiagonalPolicy diagonal = DiagonalPolicy::unit;
  double alpha = 2.0;
  int c_min = 2;
  int c_max = 10;
  std::uint64_t seed = 0;
};

struct AssociationResult {
  AssociationMatrix matrix;
  // Per numeric feature index: the discretization reused by its Case-3 pairs.
  std::map<int, Discretization> discretizations;
};

namespace detail {

inline bool is_constant(const std::vector<double>& v) {
  for (double x : v)
    if (x != v.front()) return false;
  return true;
}

// FNV-1a; keys a feature's discretization stream to its name so that column
// permutations permute W exactly.
inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace detail

// Assembles W over the given rows (label column is never a feature):
// numeric-numeric -> |Pearson|, nominal-nominal -> Cramer's V, mixed ->
// discretize the numeric feature once (cached) then Cramer's V.
inline AssociationResult build_association_matrix(const Dataset& ds,
                                                  const std::vector<int>& rows,
                                                  const AssociationOptions& opts) {
  const std::size_t m = ds.features();
  const std::size_t n = rows.size();
  if (n == 0) throw std::invalid_argument("build_association_matrix: no rows");

  std::vector<std::vector<double>> numeric(m);
  std::vector<std::vector<int>> nominal(m);
  bool any_nominal = false;
  for (std::size_t j = 0; j < m; ++j) {
    if (ds.schema()[j].kind == FeatureKind::numeric) {
      numeric[j].resize(n);
      for (std::size_t i = 0; i < n; ++i) numeric[j][i] = ds.value(rows[i], j);
    } else {
      any_nominal = true;
      nominal[j].resize(n);
      for (std::size_t i = 0; i < n; ++i) nominal[j][i] = ds.category(rows[i], j);
    }
  }

  AssociationResult out;
  out.matrix.feature_ids = ds.feature_ids();
  out.matrix.diagonal_policy = opts.diagonal;
  out.matrix.weights = Matrix(m);

  // Case-3 discretizations, one per numeric feature, write-once.
  if (any_nominal) {
    for (std::size_t j = 0; j < m; ++j) {
      if (ds.schema()[j].kind != FeatureKind::numeric) continue;
      if (detail::is_constant(numeric[j])) continue;  // zero-variance: weight 0 below
      out.discretizations.emplace(
          static_cast<int>(j),
          discretize_numeric(numeric[j], opts.c_min, opts.c_max, opts.alpha,
                             derive_seed(opts.seed, detail::fnv1a(ds.schema()[j].name))));
    }
  }

  const double diag = opts.diagonal == DiagonalPolicy::unit ? 1.0 : 0.0;
  for (std::size_t i = 0; i < m; ++i) out.matrix.weights(i, i) = diag;

  for (std::size_t i = 0; i < m; ++i) {
    const bool num_i = ds.schema()[i].kind == FeatureKind::numeric;
    for (std::size_t j = i + 1; j < m; ++j) {
      const bool num_j = ds.schema()[j].kind == FeatureKind::numeric;
      double w = 0.0;
      if (num_i && num_j) {
        w = pearson_abs(numeric[i], numeric[j]);
      } else if (!num_i && !num_j) {
        w = cramers_v(nominal[i], nominal[j]);
      } else {
        const std::size_t numeric_idx = num_i ? i : j;
        const std::size_t nominal_idx = num_i ? j : i;
        auto it = out.discretizations.find(static_cast<int>(numeric_idx));
        if (it != out.discretizations.end())
          w = cramers_v(it->second.labels, nominal[nominal_idx]);
      }
      out.matrix.weights(i, j) = w;
      out.matrix.weights(j, i) = w;
    }
  }
  return out;
}

inline AssociationResult build_association_matrix(const Dataset& ds,
                                                  const AssociationOptions& opts) {
  std::vector<int> rows(ds.rows());
  std::iota(rows.begin(), rows.end(), 0);
  return build_association_matrix(ds, rows, opts);
}

inline void association_to_csv(const AssociationMatrix& am, std::ostream& os) {
  csv::write_row(os, am.feature_ids);
  std::vector<std::string> cells(am.size());
  for (std::size_t i = 0; i < am.size(); ++i) {
    for (std::size_t j = 0; j < am.size(); ++j) cells[j] = csv::format_double(am.at(i, j));
    csv::write_row(os, cells);
  }
}

inline nlohmann::json association_to_json(const AssociationMatrix& am) {
  nlohmann::json j;
  j["feature_ids"] = am.feature_ids;
  j["diagonal_policy"] = am.diagonal_policy == DiagonalPolicy::unit ? "unit" : "zero";
  auto& w = j["weights"] = nlohmann::json::array();
  for (std::size_t i = 0; i < am.size(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t k = 0; k < am.size(); ++k) row.push_back(am.at(i, k));
    w.push_back(std::move(row));
  }
  return j;
}

inline AssociationMatrix association_from_json(const nlohmann::json& j) {
  AssociationMatrix am;
  am.feature_ids = j.at("feature_ids").get<std::vector<std::string>>();
  am.diagonal_policy =
      j.at("diagonal_policy").get<std::string>() == "zero" ? DiagonalPolicy::zero
                                                           : DiagonalPolicy::unit;
  const auto& w = j.at("weights");
  am.weights = Matrix(w.size());
  for (std::size_t i = 0; i < w.size(); ++i)
    for (std::size_t k = 0; k < w.size(); ++k) am.weights(i, k) = w[i][k].get<double>();
  return am;
}

// Per-numeric-feature report: chosen c, FPC per candidate c, prototypes.
inline nlohmann::json discretization_report(const AssociationResult& res, const Dataset& ds) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& [idx, disc] : res.discretizations) {
    nlohmann::json e;
    e["feature"] = ds.schema()[idx].id_label;
    e["name"] = ds.schema()[idx].name;
    e["chosen_c"] = disc.chosen_c;
    e["prototypes"] = disc.partition.prototypes;
    nlohmann::json fpcs = nlohmann::json::array();
    for (const auto& [c, f] : disc.fpc_by_c) fpcs.push_back({{"c", c}, {"fpc", f}});
    e["fpc_by_c"] = std::move(fpcs);
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace fcmaudit
