#pragma once

// Data-parallel inner loops used by the layer math and the channel.
//
// Each kernel has a scalar reference implementation and, where the build
// target supports it, an AVX2 (x86-64) or NEON (aarch64) variant. The active
// variant is picked once at runtime from the CPU feature bits and can be
// overridden with SMC_KERNELS=scalar or set_backend().
//
// Elementwise kernels (axpy, add_scaled) are bit-identical across backends.
// Reductions (dot, sum_squares) reassociate the sum and agree to rounding.

#include <cstddef>
#include <string_view>

namespace smc::kernels {

enum class Backend { scalar, avx2, neon };

struct KernelTable {
  double (*dot)(const double* x, const double* y, std::size_t n);
  void (*axpy)(double a, const double* x, double* y, std::size_t n);
  double (*sum_squares)(const double* x, std::size_t n);
  void (*add_scaled)(const double* x, double s, const double* z, double* out, std::size_t n);
};

namespace scalar {
double dot(const double* x, const double* y, std::size_t n);
void axpy(double a, const double* x, double* y, std::size_t n);
double sum_squares(const double* x, std::size_t n);
void add_scaled(const double* x, double s, const double* z, double* out, std::size_t n);
}  // namespace scalar

/// Table for a backend; nullptr when the backend is not compiled in or the
/// CPU lacks the required features.
const KernelTable* table_for(Backend backend);

Backend active_backend();
/// Returns false (and changes nothing) when the backend is unavailable.
bool set_backend(Backend backend);
std::string_view backend_name(Backend backend);

const KernelTable& active();

inline double dot(const double* x, const double* y, std::size_t n) { return active().dot(x, y, n); }
/// y += a * x
inline void axpy(double a, const double* x, double* y, std::size_t n) { active().axpy(a, x, y, n); }
inline double sum_squares(const double* x, std::size_t n) { return active().sum_squares(x, n); }
/// out = x + s * z
inline void add_scaled(const double* x, double s, const double* z, double* out, std::size_t n) {
  active().add_scaled(x, s, z, out, n);
}

}  // namespace smc::kernels
