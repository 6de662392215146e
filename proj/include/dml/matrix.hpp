#pragma once

// Dense row-major double matrix plus the handful of forward-only kernels
// the rest of the library builds on. Differentiable versions live in
// graph.hpp; everything here is plain eager arithmetic.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace dml {

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  static Matrix from_rows(std::size_t rows, std::size_t cols,
                          std::vector<double> values) {
    if (values.size() != rows * cols)
      throw std::invalid_argument("Matrix::from_rows: data length " +
                                  std::to_string(values.size()) +
                                  " != " + std::to_string(rows * cols));
    Matrix m;
    m.rows_ = rows;
    m.cols_ = cols;
    m.data_ = std::move(values);
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t i, std::size_t j) {
    return data_[i * cols_ + j];
  }
  double operator()(std::size_t i, std::size_t j) const {
    return data_[i * cols_ + j];
  }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  bool same_shape(const Matrix& o) const {
    return rows_ == o.rows_ && cols_ == o.cols_;
  }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  friend bool operator==(const Matrix& a, const Matrix& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline std::string shape_str(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

inline void check_same_shape(const Matrix& a, const Matrix& b,
                             const char* op) {
  if (!a.same_shape(b))
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                shape_str(a) + " vs " + shape_str(b));
}

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows())
    throw std::invalid_argument("matmul: inner dimensions " + shape_str(a) +
                                " * " + shape_str(b));
  Matrix c(a.rows(), b.cols());
  // i-k-j order keeps the b row contiguous in the inner loop.
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double* arow = a.data() + i * a.cols();
    double* crow = c.data() + i * c.cols();
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = arow[k];
      if (aik == 0.0) continue;
      const double* brow = b.data() + k * b.cols();
      for (std::size_t j = 0; j < b.cols(); ++j) crow[j] += aik * brow[j];
    }
  }
  return c;
}

inline Matrix transpose(const Matrix& m) {
  Matrix t(m.cols(), m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) t(j, i) = m(i, j);
  return t;
}

inline Matrix relu(const Matrix& m) {
  Matrix r = m;
  for (double& v : r.values()) v = v > 0.0 ? v : 0.0;
  return r;
}

// Degenerate rows (norm <= eps) are replaced by e1 so downstream math stays
// finite; callers that care inspect the returned flag.
inline constexpr double kNormEps = 1e-12;

struct NormalizeResult {
  Matrix out;
  bool had_degenerate_row = false;
};

inline NormalizeResult l2_normalize_rows(const Matrix& m,
                                         double eps = kNormEps) {
  NormalizeResult r{Matrix(m.rows(), m.cols()), false};
  for (std::size_t i = 0; i < m.rows(); ++i) {
    double sq = 0.0;
    for (std::size_t j = 0; j < m.cols(); ++j) sq += m(i, j) * m(i, j);
    const double norm = std::sqrt(sq);
    if (norm <= eps) {
      r.had_degenerate_row = true;
      if (m.cols() > 0) r.out(i, 0) = 1.0;
      continue;
    }
    for (std::size_t j = 0; j < m.cols(); ++j) r.out(i, j) = m(i, j) / norm;
  }
  return r;
}

inline double row_sq_distance(const Matrix& a, std::size_t i, const Matrix& b,
                              std::size_t j) {
  if (a.cols() != b.cols())
    throw std::invalid_argument("row_sq_distance: column mismatch");
  double s = 0.0;
  for (std::size_t k = 0; k < a.cols(); ++k) {
    const double d = a(i, k) - b(j, k);
    s += d * d;
  }
  return s;
}

}  // namespace dml
