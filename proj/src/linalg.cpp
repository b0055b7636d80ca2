#include "smc/linalg.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>

#include "smc/error.hpp"
#include "smc/kernels.hpp"

namespace smc {
namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Eigen::Map<const RowMajor> view(const Matrix& m) {
  return {m.data.data(), static_cast<Eigen::Index>(m.rows), static_cast<Eigen::Index>(m.cols)};
}

Matrix from_eigen(const Eigen::MatrixXd& m) {
  Matrix out(static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) out(r, c) = m(r, c);
  return out;
}

}  // namespace

Matrix::Matrix(std::size_t r, std::size_t c, std::vector<double> values)
    : rows(r), cols(c), data(std::move(values)) {
  require(data.size() == rows * cols, ErrorCode::DimensionMismatch, "matrix data length does not match shape");
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::diagonal(std::span<const double> values) {
  Matrix m(values.size(), values.size());
  for (std::size_t i = 0; i < values.size(); ++i) m(i, i) = values[i];
  return m;
}

bool Matrix::all_finite() const {
  return std::all_of(data.begin(), data.end(), [](double v) { return std::isfinite(v); });
}

Matrix transpose(const Matrix& a) {
  Matrix t(a.cols, a.rows);
  for (std::size_t r = 0; r < a.rows; ++r)
    for (std::size_t c = 0; c < a.cols; ++c) t(c, r) = a(r, c);
  return t;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  require(a.cols == b.rows, ErrorCode::DimensionMismatch, "matmul inner dimensions differ");
  return matmul_transposed(a, transpose(b));
}

Matrix matmul_transposed(const Matrix& a, const Matrix& b) {
  require(a.cols == b.cols, ErrorCode::DimensionMismatch, "matmul_transposed inner dimensions differ");
  Matrix out(a.rows, b.rows);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < b.rows; ++j) out(i, j) = kernels::dot(a.row(i).data(), b.row(j).data(), a.cols);
  return out;
}

double frobenius_norm(const Matrix& a) { return std::sqrt(kernels::sum_squares(a.data.data(), a.data.size())); }

Matrix subtract(const Matrix& a, const Matrix& b) {
  require(a.rows == b.rows && a.cols == b.cols, ErrorCode::DimensionMismatch, "subtract shapes differ");
  Matrix out = a;
  kernels::axpy(-1.0, b.data.data(), out.data.data(), out.data.size());
  return out;
}

SvdResult svd(const Matrix& a) {
  require(!a.empty(), ErrorCode::InvalidInput, "svd of an empty matrix");
  require(a.all_finite(), ErrorCode::InvalidInput, "svd input contains non-finite values");
  Eigen::MatrixXd m = view(a);
  Eigen::BDCSVD<Eigen::MatrixXd> solver(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  SvdResult out;
  out.u = from_eigen(solver.matrixU());
  const auto& sv = solver.singularValues();
  out.s.assign(sv.data(), sv.data() + sv.size());
  out.vt = from_eigen(solver.matrixV().transpose());
  return out;
}

EigenResult symmetric_eigen(const Matrix& a) {
  require(a.rows == a.cols, ErrorCode::DimensionMismatch, "symmetric_eigen needs a square matrix");
  require(a.all_finite(), ErrorCode::InvalidInput, "symmetric_eigen input contains non-finite values");
  Eigen::MatrixXd m = view(a);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(m);
  require(solver.info() == Eigen::Success, ErrorCode::NumericalError, "eigen-decomposition did not converge");
  EigenResult out;
  const auto& ev = solver.eigenvalues();
  out.values.assign(ev.data(), ev.data() + ev.size());
  out.vectors = from_eigen(solver.eigenvectors());
  return out;
}

void center_rows(Matrix& a) {
  if (a.cols == 0) return;
  for (std::size_t r = 0; r < a.rows; ++r) {
    auto row = a.row(r);
    double mean = 0.0;
    for (double v : row) mean += v;
    mean /= static_cast<double>(a.cols);
    for (double& v : row) v -= mean;
  }
}

Matrix centered_cross_covariance(const Matrix& x, const Matrix& y) {
  require(x.cols == y.cols, ErrorCode::DimensionMismatch, "x and y have different sample counts");
  require(x.cols >= 2, ErrorCode::InvalidInput, "covariance needs at least two samples");
  Matrix xc = x;
  Matrix yc = y;
  center_rows(xc);
  center_rows(yc);
  Matrix cov = matmul_transposed(xc, yc);
  const double scale = 1.0 / static_cast<double>(x.cols - 1);
  for (double& v : cov.data) v *= scale;
  return cov;
}

}  // namespace smc
