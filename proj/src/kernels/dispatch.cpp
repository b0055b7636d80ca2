#include <atomic>
#include <cstdlib>
#include <string_view>

#include "kernels_impl.hpp"
#include "smc/kernels.hpp"

namespace smc::kernels {
namespace {

constexpr KernelTable kScalarTable{scalar::dot, scalar::axpy, scalar::sum_squares, scalar::add_scaled};

#if defined(SMC_HAVE_AVX2)
constexpr KernelTable kAvx2Table{avx2::dot, avx2::axpy, avx2::sum_squares, avx2::add_scaled};

bool cpu_has_avx2() {
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
}
#endif

#if defined(SMC_HAVE_NEON)
constexpr KernelTable kNeonTable{neon::dot, neon::axpy, neon::sum_squares, neon::add_scaled};
#endif

Backend detect() {
  if (const char* forced = std::getenv("SMC_KERNELS")) {
    if (std::string_view(forced) == "scalar") return Backend::scalar;
  }
#if defined(SMC_HAVE_AVX2)
  if (cpu_has_avx2()) return Backend::avx2;
#endif
#if defined(SMC_HAVE_NEON)
  return Backend::neon;
#endif
  return Backend::scalar;
}

std::atomic<const KernelTable*>& current() {
  static std::atomic<const KernelTable*> table{table_for(detect())};
  return table;
}

}  // namespace

const KernelTable* table_for(Backend backend) {
  switch (backend) {
    case Backend::scalar:
      return &kScalarTable;
    case Backend::avx2:
#if defined(SMC_HAVE_AVX2)
      return cpu_has_avx2() ? &kAvx2Table : nullptr;
#else
      return nullptr;
#endif
    case Backend::neon:
#if defined(SMC_HAVE_NEON)
      return &kNeonTable;
#else
      return nullptr;
#endif
  }
  return nullptr;
}

const KernelTable& active() { return *current().load(std::memory_order_acquire); }

Backend active_backend() {
  const KernelTable* table = current().load(std::memory_order_acquire);
  if (table == &kScalarTable) return Backend::scalar;
#if defined(SMC_HAVE_AVX2)
  if (table == &kAvx2Table) return Backend::avx2;
#endif
  return Backend::neon;
}

bool set_backend(Backend backend) {
  const KernelTable* table = table_for(backend);
  if (table == nullptr) return false;
  current().store(table, std::memory_order_release);
  return true;
}

std::string_view backend_name(Backend backend) {
  switch (backend) {
    case Backend::scalar: return "scalar";
    case Backend::avx2: return "avx2";
    case Backend::neon: return "neon";
  }
  return "unknown";
}

}  // namespace smc::kernels
