#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace smc {

/// Dense row-major matrix of doubles.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}
  Matrix(std::size_t r, std::size_t c, std::vector<double> values);

  static Matrix identity(std::size_t n);
  static Matrix diagonal(std::span<const double> values);

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

  bool empty() const { return data.empty(); }
  bool all_finite() const;

  friend bool operator==(const Matrix&, const Matrix&) = default;
};

Matrix transpose(const Matrix& a);
Matrix matmul(const Matrix& a, const Matrix& b);
/// a · bᵀ without materialising the transpose.
Matrix matmul_transposed(const Matrix& a, const Matrix& b);
double frobenius_norm(const Matrix& a);
Matrix subtract(const Matrix& a, const Matrix& b);

struct SvdResult {
  Matrix u;               // rows × k, orthonormal columns
  std::vector<double> s;  // k values, non-negative, non-increasing
  Matrix vt;              // k × cols, orthonormal rows
};

/// Thin SVD, k = min(rows, cols). Throws InvalidInput on empty or
/// non-finite input.
SvdResult svd(const Matrix& a);

struct EigenResult {
  std::vector<double> values;  // ascending
  Matrix vectors;              // column i pairs with values[i]
};

/// Eigen-decomposition of a symmetric matrix (only the lower triangle is read).
EigenResult symmetric_eigen(const Matrix& a);

/// (1/(m-1)) (x - x̄)(y - ȳ)ᵀ with per-row means over the m sample columns.
Matrix centered_cross_covariance(const Matrix& x, const Matrix& y);

/// Subtracts each row's mean in place.
void center_rows(Matrix& a);

}  // namespace smc
