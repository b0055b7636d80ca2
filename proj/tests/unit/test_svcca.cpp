#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "smc/error.hpp"
#include "smc/svcca.hpp"
#include "support.hpp"

using namespace smc;
using namespace smc::testing;

namespace {

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no smc::Error thrown");
  return ErrorCode::InvalidInput;
}

CcaProfile fake_profile(std::vector<double> rho) {
  CcaProfile p;
  const auto blocks = toy_blocks();
  for (std::size_t i = 0; i < rho.size(); ++i) {
    p.candidates.push_back(blocks[i]);
    p.retained_dims.emplace_back(1, 1);
  }
  p.rho1 = std::move(rho);
  return p;
}

}  // namespace

TEST_CASE("self similarity is one") {
  for (std::uint64_t k = 0; k < 5; ++k) {
    const Matrix a = random_matrix(6, 80, RngStream{k, 1});
    CHECK(svcca_similarity(a, a).rho1 == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("orthogonal mixing leaves similarity unchanged") {
  for (std::uint64_t k = 0; k < 5; ++k) {
    const Matrix a = random_matrix(5, 120, RngStream{k, 2});
    Matrix b = random_matrix(4, 120, RngStream{k, 3});
    for (std::size_t i = 0; i < b.data.size(); ++i) b.data[i] += a.data[i % a.data.size()];
    const Matrix qa = matmul(random_orthogonal(5, RngStream{k, 4}), a);
    CHECK(svcca_similarity(qa, a).rho1 == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(std::abs(svcca_similarity(a, b).rho1 - svcca_similarity(qa, b).rho1) < 1e-6);
  }
}

TEST_CASE("two-dimensional closed-form oracle") {
  for (std::uint64_t k = 0; k < 20; ++k) {
    const Matrix x = random_matrix(2, 200, RngStream{13, k});
    Matrix y = random_matrix(2, 200, RngStream{14, k});
    for (std::size_t t = 0; t < 200; ++t) y(0, t) += 0.5 * x(1, t);
    CHECK(std::abs(svcca_similarity(x, y, 1.0).rho1 - cca_2d(x, y)) < 1e-6);
  }
}

TEST_CASE("symmetry and errors") {
  const Matrix a = random_matrix(4, 60, RngStream{1, 5});
  const Matrix b = random_matrix(3, 60, RngStream{1, 6});
  CHECK(std::abs(svcca_similarity(a, b).rho1 - svcca_similarity(b, a).rho1) < 1e-9);
  CHECK(code_of([&] { svcca_similarity(a, random_matrix(3, 59, RngStream{0, 0})); }) == ErrorCode::DimensionMismatch);
  CHECK(code_of([&] { svcca_similarity(Matrix(3, 60, 2.0), b); }) == ErrorCode::DegenerateRepresentation);
  CHECK(code_of([&] { svcca_similarity(a, b, 0.0); }) == ErrorCode::InvalidInput);
}

TEST_CASE("layer profile of a model with itself, and probe order") {
  const ModelGraph m = make_toy_classifier(4, RngStream{3, 0});
  const Batch probe = random_batch({1, 12, 12}, 200, RngStream{3, 1});
  const auto blocks = toy_blocks();
  const CcaProfile p = layer_profile(m, m, probe, blocks);
  REQUIRE(p.rho1.size() == 4);
  for (double r : p.rho1) CHECK(r == doctest::Approx(1.0).epsilon(1e-6));

  const ModelGraph other = make_toy_classifier(4, RngStream{4, 0});
  const CcaProfile q = layer_profile(m, other, probe, blocks);
  std::vector<std::size_t> rows = permutation(RngStream{3, 2}, probe.n);
  const CcaProfile qp = layer_profile(m, other, probe.gather(rows), blocks);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(std::abs(q.rho1[i] - qp.rho1[i]) < 1e-9);
    CHECK(q.rho1[i] >= 0.0);
    CHECK(q.rho1[i] <= 1.0 + 1e-9);
  }
}

TEST_CASE("threshold split selection") {
  const ModelGraph m = make_toy_classifier(4, RngStream{3, 0});
  CHECK(select_split(m, fake_profile({1.0, 1.0, 1.0, 1.0}), 0.9).split_candidate == "block4");
  CHECK(select_split(m, fake_profile({0.95, 0.80, 0.40}), 0.9).split_candidate == "block1");
  CHECK(select_split(m, fake_profile({0.5, 0.4}), 0.9).split_candidate.empty());
  CHECK(code_of([&] { select_split(m, CcaProfile{}, 0.5); }) == ErrorCode::InvalidInput);

  const auto p = fake_profile({0.99, 0.9, 0.7, 0.3});
  std::size_t prev_depth = 99;
  for (double t : {0.2, 0.5, 0.8, 0.95, 0.999}) {
    const auto c = select_split(m, p, t).split_candidate;
    const std::size_t depth = c.empty() ? 0 : static_cast<std::size_t>(c.back() - '0');
    CHECK(depth <= prev_depth);
    prev_depth = depth;
  }

  const SplitPlan plan = split_after(m, "block2");
  CHECK(plan.split_layer == "flatten");
  std::size_t feature_layers = m.head_start;
  CHECK(plan.phi_g_layers.size() + plan.phi_s_layers.size() == feature_layers);
}
