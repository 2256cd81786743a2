#pragma once

#include <cstddef>
#include <stdexcept>
#include <vector>

namespace fcmaudit {

// Dense square matrix, row-major.
class Matrix {
 public:
  Matrix() = default;
  explicit Matrix(std::size_t n, double fill = 0.0) : n_(n), a_(n * n, fill) {}

  static Matrix from_rows(const std::vector<std::vector<double>>& rows) {
    Matrix m(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].size() != rows.size())
        throw std::invalid_argument("Matrix::from_rows: matrix must be square");
      for (std::size_t j = 0; j < rows.size(); ++j) m(i, j) = rows[i][j];
    }
    return m;
  }

  std::size_t size() const { return n_; }
  double& operator()(std::size_t i, std::size_t j) { return a_[i * n_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return a_[i * n_ + j]; }
  const std::vector<double>& data() const { return a_; }

  bool is_symmetric(double tol = 0.0) const {
    for (std::size_t i = 0; i < n_; ++i)
      for (std::size_t j = i + 1; j < n_; ++j) {
        const double d = (*this)(i, j) - (*this)(j, i);
        if (d > tol || d < -tol) return false;
      }
    return true;
  }

 private:
  std::size_t n_ = 0;
  std::vector<double> a_;
};

// Row vector times matrix: (x W)_j = sum_i x_i w_ij.
inline std::vector<double> row_times(const std::vector<double>& x, const Matrix& w) {
  if (x.size() != w.size())
    throw std::invalid_argument("row_times: vector length does not match matrix size");
  std::vector<double> out(w.size(), 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double xi = x[i];
    if (xi == 0.0) continue;
    for (std::size_t j = 0; j < w.size(); ++j) out[j] += xi * w(i, j);
  }
  return out;
}

}  // namespace fcmaudit
