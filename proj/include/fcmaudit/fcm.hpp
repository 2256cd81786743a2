#pragma once

#include <cmath>
#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "fcmaudit/csv.hpp"
#include "fcmaudit/matrix.hpp"

namespace fcmaudit {

using ActivationVector = std::vector<double>;

// Re-scaled transfer function: X / ||X||_2, or 0 for the (near-)zero vector.
// The zero test uses a small norm threshold instead of exact equality to stay
// clear of the discontinuity.
inline ActivationVector transfer(const ActivationVector& raw, double zero_tol = 1e-12) {
  double norm2 = 0.0;
  for (double v : raw) norm2 += v * v;
  const double norm = std::sqrt(norm2);
  ActivationVector out(raw.size(), 0.0);
  if (norm < zero_tol) return out;
  for (std::size_t i = 0; i < raw.size(); ++i) out[i] = raw[i] / norm;
  return out;
}

// Quasi-nonlinear reasoning rule: phi * f(a_t W) + (1 - phi) * a_0.
inline ActivationVector reasoning_step(const ActivationVector& a_t,
                                       const ActivationVector& a_0, const Matrix& w,
                                       double phi, double zero_tol = 1e-12) {
  if (a_t.size() != w.size() || a_0.size() != w.size())
    throw std::invalid_argument("reasoning_step: vector/matrix dimension mismatch");
  if (phi < 0.0 || phi > 1.0)
    throw std::invalid_argument("reasoning_step: phi must lie in [0,1]");
  const ActivationVector f = transfer(row_times(a_t, w), zero_tol);
  ActivationVector out(a_t.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = phi * f[i] + (1.0 - phi) * a_0[i];
  return out;
}

struct SimulationConfig {
  double phi = 1.0;          // nonlinearity control, in [0,1]
  int max_iter = 100;        // iteration horizon T
  double fp_tol = 1e-6;      // fixed-point tolerance (inf norm)
  int cycle_window = 20;     // largest period searched
  double zero_tol = 1e-12;   // transfer-function zero-vector threshold
};

enum class Termination { fixed_point, limit_cycle, chaos };

inline std::string to_string(Termination t) {
  switch (t) {
    case Termination::fixed_point: return "fixed_point";
    case Termination::limit_cycle: return "limit_cycle";
    default: return "chaos";
  }
}

struct SimulationTrace {
  std::vector<ActivationVector> states;      // A(0) .. A(t_end)
  std::vector<ActivationVector> raw_states;  // A(t-1) W for t = 1 .. t_end
  Termination termination = Termination::chaos;
  int t_alpha = -1;   // first index of the stable state / cycle start
  int period = 0;     // cycle period (limit_cycle only)
  bool hit_zero_raw = false;  // some raw vector fell below zero_tol

  const ActivationVector& final_state() const { return states.back(); }
};

namespace detail {
inline double inf_distance(const ActivationVector& a, const ActivationVector& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}
}  // namespace detail

// Iterates the reasoning rule from A(0). Stops at the first fixed point
// (successive states within fp_tol), else at the first period p <= cycle_window
// whose repetition is sustained for one further period, else runs to max_iter
// and labels the trace chaos.
inline SimulationTrace simulate(const Matrix& w, const ActivationVector& a_0,
                                const SimulationConfig& cfg) {
  if (a_0.size() != w.size())
    throw std::invalid_argument("simulate: initial vector does not match matrix size");
  SimulationTrace tr;
  tr.states.push_back(a_0);

  int candidate_p = 0, candidate_t = -1, confirmed = 0;
  for (int t = 1; t <= cfg.max_iter; ++t) {
    ActivationVector raw = row_times(tr.states.back(), w);
    double norm2 = 0.0;
    for (double v : raw) norm2 += v * v;
    if (std::sqrt(norm2) < cfg.zero_tol) tr.hit_zero_raw = true;

    const ActivationVector f = transfer(raw, cfg.zero_tol);
    ActivationVector next(a_0.size());
    for (std::size_t i = 0; i < next.size(); ++i)
      next[i] = cfg.phi * f[i] + (1.0 - cfg.phi) * a_0[i];
    tr.raw_states.push_back(std::move(raw));
    tr.states.push_back(std::move(next));

    if (detail::inf_distance(tr.states[t], tr.states[t - 1]) < cfg.fp_tol) {
      tr.termination = Termination::fixed_point;
      tr.t_alpha = t - 1;
      return tr;
    }

    int p = 0;
    for (int q = 2; q <= cfg.cycle_window && q <= t; ++q) {
      if (detail::inf_distance(tr.states[t], tr.states[t - q]) < cfg.fp_tol) {
        p = q;
        break;
      }
    }
    if (p == 0) {
      candidate_p = 0;
      confirmed = 0;
    } else if (p == candidate_p) {
      if (++confirmed == p) {
        tr.termination = Termination::limit_cycle;
        tr.t_alpha = candidate_t - p;
        tr.period = p;
        return tr;
      }
    } else {
      candidate_p = p;
      candidate_t = t;
      confirmed = 0;
    }
  }
  tr.termination = Termination::chaos;
  return tr;
}

// Spectral diagnostics for the fixed-point-uniqueness condition: a strictly
// dominant eigenvalue plus a nonzero component of A(0) along its eigenvector.
struct EigenReport {
  double dominant_value = 0.0;
  double second_value = 0.0;
  std::vector<double> dominant_vector;
  bool strictly_dominant = false;
  double a0_component = 0.0;
  bool a0_aligned = false;
};

inline EigenReport eigen_diagnostics(const Matrix& w, const ActivationVector& a_0,
                                     double gap_tol = 1e-9) {
  const std::size_t m = w.size();
  if (a_0.size() != m)
    throw std::invalid_argument("eigen_diagnostics: vector does not match matrix size");
  if (!w.is_symmetric(1e-12))
    throw std::invalid_argument("eigen_diagnostics: matrix is not symmetric");

  Eigen::MatrixXd em(m, m);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j) em(i, j) = w(i, j);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(em);
  if (solver.info() != Eigen::Success)
    throw std::runtime_error("eigen_diagnostics: eigen decomposition failed");

  const auto& vals = solver.eigenvalues();
  std::size_t dom = 0;
  for (std::size_t i = 1; i < m; ++i)
    if (std::abs(vals[i]) > std::abs(vals[dom])) dom = i;
  double second = 0.0;
  bool have_second = false;
  for (std::size_t i = 0; i < m; ++i) {
    if (i == dom) continue;
    if (!have_second || std::abs(vals[i]) > std::abs(second)) {
      second = vals[i];
      have_second = true;
    }
  }

  EigenReport rep;
  rep.dominant_value = vals[dom];
  rep.second_value = have_second ? second : 0.0;
  rep.strictly_dominant =
      !have_second || (std::abs(rep.dominant_value) - std::abs(rep.second_value) > gap_tol);

  Eigen::VectorXd v = solver.eigenvectors().col(dom);
  // Sign convention: the largest-magnitude entry is nonnegative.
  std::size_t big = 0;
  for (std::size_t i = 1; i < m; ++i)
    if (std::abs(v[i]) > std::abs(v[big])) big = i;
  if (v[big] < 0.0) v = -v;
  rep.dominant_vector.assign(v.data(), v.data() + m);

  double proj = 0.0;
  for (std::size_t i = 0; i < m; ++i) proj += a_0[i] * rep.dominant_vector[i];
  rep.a0_component = proj;
  rep.a0_aligned = std::abs(proj) > gap_tol;
  return rep;
}

// One row per iteration, one column per neuron.
inline void write_trace_csv(const SimulationTrace& tr,
                            const std::vector<std::string>& feature_ids, std::ostream& os) {
  std::vector<std::string> header{"t"};
  header.insert(header.end(), feature_ids.begin(), feature_ids.end());
  csv::write_row(os, header);
  std::vector<std::string> cells(feature_ids.size() + 1);
  for (std::size_t t = 0; t < tr.states.size(); ++t) {
    cells[0] = std::to_string(t);
    for (std::size_t i = 0; i < tr.states[t].size(); ++i)
      cells[i + 1] = csv::format_double(tr.states[t][i]);
    csv::write_row(os, cells);
  }
}

inline nlohmann::json termination_metadata(const SimulationTrace& tr, double phi,
                                           const SimulationConfig& cfg) {
  nlohmann::json j;
  j["termination"] = to_string(tr.termination);
  j["t_alpha"] = tr.t_alpha;
  j["period"] = tr.period;
  j["hit_zero_raw"] = tr.hit_zero_raw;
  j["iterations"] = tr.states.size() - 1;
  j["phi"] = phi;
  j["fp_tol"] = cfg.fp_tol;
  j["max_iter"] = cfg.max_iter;
  j["cycle_window"] = cfg.cycle_window;
  return j;
}

}  // namespace fcmaudit
