#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>

#include "smc/error.hpp"
#include "smc/linalg.hpp"
#include "smc/rng.hpp"
#include "support.hpp"

using namespace smc;
using smc::testing::random_matrix;

namespace {

Matrix reconstruct(const SvdResult& r) {
  Matrix us = r.u;
  for (std::size_t i = 0; i < us.rows; ++i)
    for (std::size_t j = 0; j < us.cols; ++j) us(i, j) *= r.s[j];
  return matmul(us, r.vt);
}

double orthonormality_error(const Matrix& q_rows) {
  const Matrix g = matmul_transposed(q_rows, q_rows);
  return frobenius_norm(subtract(g, Matrix::identity(g.rows)));
}

// Dominant eigenvalues of a symmetric PSD matrix by power iteration with deflation.
std::vector<double> power_eigs(Matrix a, std::size_t k) {
  std::vector<double> out;
  for (std::size_t e = 0; e < k; ++e) {
    std::vector<double> v(a.rows, 1.0);
    v[e % a.rows] += 0.5;
    double lambda = 0.0;
    for (int it = 0; it < 5000; ++it) {
      std::vector<double> w(a.rows, 0.0);
      for (std::size_t i = 0; i < a.rows; ++i)
        for (std::size_t j = 0; j < a.cols; ++j) w[i] += a(i, j) * v[j];
      double n = 0.0;
      for (double x : w) n += x * x;
      n = std::sqrt(n);
      for (auto& x : w) x /= n;
      lambda = n;
      v = w;
    }
    out.push_back(lambda);
    for (std::size_t i = 0; i < a.rows; ++i)
      for (std::size_t j = 0; j < a.cols; ++j) a(i, j) -= lambda * v[i] * v[j];
  }
  return out;
}

}  // namespace

TEST_CASE("svd of identity and diagonal") {
  auto r = svd(Matrix::identity(3));
  for (double s : r.s) CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  const std::vector<double> d{3.0, 2.0, 1.0};
  r = svd(Matrix::diagonal(d));
  for (std::size_t i = 0; i < 3; ++i) CHECK(r.s[i] == doctest::Approx(d[i]).epsilon(1e-12));
}

TEST_CASE("svd of a random 5x3 matrix against an eigen oracle") {
  const Matrix a = random_matrix(5, 3, RngStream{7, 0});
  const auto r = svd(a);
  CHECK(frobenius_norm(subtract(reconstruct(r), a)) / frobenius_norm(a) < 1e-9);
  CHECK(orthonormality_error(transpose(r.u)) < 1e-9);
  CHECK(orthonormality_error(r.vt) < 1e-9);
  for (std::size_t i = 0; i + 1 < r.s.size(); ++i) CHECK(r.s[i] >= r.s[i + 1]);
  const auto eigs = power_eigs(matmul(transpose(a), a), 3);
  for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(r.s[i] * r.s[i] - eigs[i]) < 1e-8 * eigs[0]);
}

TEST_CASE("svd reconstruction holds across shapes") {
  for (std::size_t k = 0; k < 10; ++k) {
    const std::size_t rows = 1 + k % 7, cols = 1 + (k * 3) % 8;
    const Matrix a = random_matrix(rows, cols, RngStream{100 + k, 0});
    const auto r = svd(a);
    CHECK(frobenius_norm(subtract(reconstruct(r), a)) / frobenius_norm(a) < 1e-9);
    for (double s : r.s) CHECK(s >= 0.0);
  }
}

TEST_CASE("svd rejects bad input") {
  Matrix a(2, 2, 1.0);
  a(0, 1) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(svd(a), Error);
  CHECK_THROWS_AS(svd(Matrix{}), Error);
}

TEST_CASE("centered cross covariance") {
  const Matrix x(1, 3, std::vector<double>{1, 2, 3});
  CHECK(centered_cross_covariance(x, x)(0, 0) == doctest::Approx(1.0).epsilon(1e-15));
  const Matrix c(2, 4, 5.0);
  const Matrix z = centered_cross_covariance(c, Matrix(1, 4, std::vector<double>{1, 4, 2, 8}));
  for (double v : z.data) CHECK(v == 0.0);

  const Matrix a = random_matrix(3, 50, RngStream{11, 0});
  const Matrix b = random_matrix(3, 50, RngStream{11, 1});
  const Matrix cov = centered_cross_covariance(a, b);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      double ma = 0, mb = 0;
      for (std::size_t t = 0; t < 50; ++t) {
        ma += a(i, t) / 50.0;
        mb += b(j, t) / 50.0;
      }
      double s = 0;
      for (std::size_t t = 0; t < 50; ++t) s += (a(i, t) - ma) * (b(j, t) - mb);
      CHECK(std::abs(cov(i, j) - s / 49.0) < 1e-12);
    }
  }

  const Matrix self = centered_cross_covariance(a, a);
  CHECK(symmetric_eigen(self).values.front() >= -1e-10);

  CHECK_THROWS_AS(centered_cross_covariance(a, Matrix(3, 49, 0.0)), Error);
  CHECK_THROWS_AS(centered_cross_covariance(Matrix(1, 1, 0.0), Matrix(1, 1, 0.0)), Error);
  try {
    centered_cross_covariance(a, Matrix(3, 49, 0.0));
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::DimensionMismatch);
  }
}

TEST_CASE("gaussian draws") {
  for (double v : gaussian(RngStream{1, 0}, 100, 0.0)) CHECK(v == 0.0);
  const auto g = gaussian(RngStream{3, 0}, 100000, 1.0);
  double mean = 0, sq = 0;
  for (double v : g) mean += v;
  mean /= g.size();
  for (double v : g) sq += (v - mean) * (v - mean);
  CHECK(std::abs(mean) < 0.02);
  CHECK(std::abs(std::sqrt(sq / (g.size() - 1)) - 1.0) < 0.02);
  CHECK(gaussian(RngStream{3, 0}, 50, 1.0) == gaussian(RngStream{3, 0}, 50, 1.0));
  CHECK_THROWS_AS(gaussian(RngStream{3, 0}, 5, -1.0), Error);
}

TEST_CASE("rng streams are reproducible and distinct") {
  Generator a(RngStream{9, 0}), b(RngStream{9, 0}), c(RngStream{9, 1});
  bool differs = false;
  for (int i = 0; i < 100; ++i) {
    const auto x = a.next_u64();
    CHECK(x == b.next_u64());
    differs |= x != c.next_u64();
  }
  CHECK(differs);
  CHECK(RngStream{1, 2}.derive("x") == RngStream{1, 2}.derive("x"));
  CHECK_FALSE(RngStream{1, 2}.derive("x") == RngStream{1, 2}.derive("y"));
  Generator u(RngStream{4, 4});
  for (int i = 0; i < 1000; ++i) {
    const double v = u.uniform();
    CHECK((v >= 0.0 && v < 1.0));
    CHECK(u.uniform_below(7) < 7);
  }
  auto p = permutation(RngStream{5, 0}, 20);
  std::sort(p.begin(), p.end());
  for (std::size_t i = 0; i < 20; ++i) CHECK(p[i] == i);
}

TEST_CASE("fnv1a64 known value") { CHECK(fnv1a64("") == 0xcbf29ce484222325ULL); CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL); }
