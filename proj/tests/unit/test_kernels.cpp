#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <vector>

#include "smc/kernels.hpp"
#include "smc/rng.hpp"

using namespace smc;
using namespace smc::kernels;

namespace {

std::vector<Backend> available() {
  std::vector<Backend> out;
  for (auto b : {Backend::scalar, Backend::avx2, Backend::neon})
    if (table_for(b)) out.push_back(b);
  return out;
}

bool same_bits(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

}  // namespace

TEST_CASE("scalar backend is always present") {
  CHECK(table_for(Backend::scalar) != nullptr);
  CHECK(backend_name(Backend::scalar) == "scalar");
}

TEST_CASE("vector backends agree with the scalar reference") {
  const KernelTable* ref = table_for(Backend::scalar);
  for (Backend b : available()) {
    CAPTURE(backend_name(b));
    const KernelTable* k = table_for(b);
    for (std::size_t n = 0; n <= 67; ++n) {
      const auto x = gaussian(RngStream{11, n}, n, 1.0);
      const auto y = gaussian(RngStream{12, n}, n, 1.0);
      const auto z = gaussian(RngStream{13, n}, n, 1.0);

      const double d_ref = ref->dot(x.data(), y.data(), n);
      const double d = k->dot(x.data(), y.data(), n);
      CHECK(std::abs(d - d_ref) <= 1e-12 * (1.0 + std::abs(d_ref)));

      const double s_ref = ref->sum_squares(x.data(), n);
      CHECK(std::abs(k->sum_squares(x.data(), n) - s_ref) <= 1e-12 * (1.0 + s_ref));

      auto y1 = y, y2 = y;
      ref->axpy(0.37, x.data(), y1.data(), n);
      k->axpy(0.37, x.data(), y2.data(), n);
      CHECK(same_bits(y1, y2));

      std::vector<double> o1(n), o2(n);
      ref->add_scaled(x.data(), -1.25, z.data(), o1.data(), n);
      k->add_scaled(x.data(), -1.25, z.data(), o2.data(), n);
      CHECK(same_bits(o1, o2));
    }
  }
}

TEST_CASE("switching backends") {
  const Backend before = active_backend();
  CHECK(set_backend(Backend::scalar));
  CHECK(active_backend() == Backend::scalar);
  const double v[3] = {1.0, 2.0, 2.0};
  CHECK(sum_squares(v, 3) == 9.0);
  for (auto b : {Backend::avx2, Backend::neon})
    if (!table_for(b)) CHECK_FALSE(set_backend(b));
  set_backend(before);
}
