#pragma once

#include <cstddef>

namespace smc::kernels::avx2 {
double dot(const double* x, const double* y, std::size_t n);
void axpy(double a, const double* x, double* y, std::size_t n);
double sum_squares(const double* x, std::size_t n);
void add_scaled(const double* x, double s, const double* z, double* out, std::size_t n);
}  // namespace smc::kernels::avx2

namespace smc::kernels::neon {
double dot(const double* x, const double* y, std::size_t n);
void axpy(double a, const double* x, double* y, std::size_t n);
double sum_squares(const double* x, std::size_t n);
void add_scaled(const double* x, double s, const double* z, double* out, std::size_t n);
}  // namespace smc::kernels::neon
