#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "smc/channel.hpp"
#include "smc/error.hpp"
#include "smc/experiments.hpp"
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

ParamLayout one_slot(std::size_t n) {
  ParamLayout l;
  l.slots.push_back({"t", "weight", {n}, 0, n});
  l.total = n;
  return l;
}

const ModelGraph& small_base() {
  static const ModelGraph base = train_base_model(generate({0, 1, 2}, 30, Domain::A, 3), {4, 0.05, 32}, 3);
  return base;
}

ExpandedModel trained_component() {
  static const ExpandedModel em = [] {
    ExpandedModel e = build_expanded(small_base(), split_after(small_base(), "block3"),
                                     SmcKind{SmcVariant::incremental, {0, 1, 2}, {5, 6}}, RngStream{1, 0});
    TrainConfig tc;
    tc.epochs = 3;
    train_smc(e, generate({5, 6}, 30, Domain::A, 5), split_rehearsal(generate({0, 1, 2}, 30, Domain::A, 3), 15, 1), tc);
    return e;
  }();
  return em;
}

}  // namespace

TEST_CASE("noise level from SNR") {
  const std::vector<double> twos(10, 2.0);
  CHECK(snr_to_sigma(twos, one_slot(10), {0.0, 1}) == std::vector<double>{2.0});
  CHECK(snr_to_sigma(twos, one_slot(10), {HUGE_VAL, 1}) == std::vector<double>{0.0});
  const std::vector<double> ones(4, -1.0);
  CHECK(snr_to_sigma(ones, one_slot(4), {10.0, 1})[0] == doctest::Approx(std::sqrt(0.1)).epsilon(1e-12));

  ParamLayout two;
  two.slots = {{"a", "weight", {2}, 0, 2}, {"b", "weight", {2}, 2, 2}};
  two.total = 4;
  const std::vector<double> v{1.0, 1.0, 3.0, 3.0};
  const auto per = snr_to_sigma(v, two, {0.0, 1, PowerMode::per_tensor});
  CHECK(per == std::vector<double>{1.0, 3.0});
  const auto glob = snr_to_sigma(v, two, {0.0, 1, PowerMode::global});
  REQUIRE(glob.size() == 1);
  CHECK(glob[0] == doctest::Approx(std::sqrt(5.0)));
}

TEST_CASE("zero power and malformed input") {
  const std::vector<double> zeros(5, 0.0);
  CHECK(code_of([&] { transmit(zeros, one_slot(5), {3.0, 1}); }) == ErrorCode::ZeroSignalPower);
  CHECK(transmit(zeros, one_slot(5), {HUGE_VAL, 1}) == zeros);
  CHECK(code_of([&] { transmit(zeros, one_slot(4), {3.0, 1}); }) == ErrorCode::DimensionMismatch);
  CHECK(code_of([&] { transmit(std::vector<double>{1.0}, one_slot(1), {std::nan(""), 1}); }) == ErrorCode::InvalidInput);
  CHECK(code_of([] { power_mode_from_string("loud"); }) == ErrorCode::InvalidInput);
}

TEST_CASE("transmit is seeded and reaches the requested SNR") {
  const auto clean = gaussian(RngStream{4, 0}, 100000, 0.3);
  const auto layout = one_slot(clean.size());
  for (double snr : {-2.0, 0.0, 5.0, 10.0, 20.0}) {
    CAPTURE(snr);
    const auto a = transmit(clean, layout, {snr, 11});
    CHECK(a == transmit(clean, layout, {snr, 11}));
    CHECK(a != transmit(clean, layout, {snr, 12}));
    CHECK(std::abs(empirical_snr_db(clean, a) - snr) < 0.2);
  }
  CHECK(transmit(clean, layout, {HUGE_VAL, 11}) == clean);
}

TEST_CASE("component transmission perturbs only the component") {
  const ExpandedModel& em = trained_component();
  const ExpandedModel noisy = transmit_component(em, {5.0, 3});
  CHECK(noisy.base == em.base);
  CHECK(noisy.params != em.params);
  CHECK(transmit_component(em, {HUGE_VAL, 3}).params == em.params);
}

TEST_CASE("gradient-norm penalty: analytic agrees with finite differences") {
  for (std::uint64_t k = 0; k < 3; ++k) {
    const KindCase kc = layer_kind_case(k == 0 ? LayerKind::dense : k == 1 ? LayerKind::conv2d : LayerKind::maxpool2x2,
                                        RngStream{k, 0});
    const Batch b = random_batch(kc.model.input_shape, 6, RngStream{k, 1});
    const LossSpec loss = loss_for_instance(k, 6, kc.model.output_shape().size(), RngStream{k, 2});
    const auto a = grad_norm_penalty(kc.model, b, loss, PenaltyMode::analytic);
    const auto f = grad_norm_penalty(kc.model, b, loss, PenaltyMode::finite_diff);
    CHECK(a.penalty == doctest::Approx(f.penalty).epsilon(1e-12));
    const auto names = trainable_layers(kc.model);
    CHECK(relative_error(flatten_params(a.grads, names).values, flatten_params(f.grads, names).values) < 1e-4);
    // The penalty is the norm of the ordinary gradient.
    CHECK(a.penalty == doctest::Approx(norm2(flatten_params(backward(kc.model, b, loss).grads, names).values)));
  }
  const ExpandedModel& em = trained_component();
  const ShapeDataset ds = generate({0, 5}, 4, Domain::A, 8);
  const auto a = grad_norm_penalty(em, ds.batch(), task_loss(em, ds), PenaltyMode::analytic);
  const auto f = grad_norm_penalty(em, ds.batch(), task_loss(em, ds), PenaltyMode::finite_diff);
  const FlatParams layout = component_params(em);
  std::vector<std::string> names;
  for (const auto& s : layout.layout.slots)
    if (names.empty() || names.back() != s.layer) names.push_back(s.layer);
  CHECK(relative_error(flatten_params(a.grads, names).values, flatten_params(f.grads, names).values) < 1e-4);
}

TEST_CASE("penalty does not depend on batch order") {
  const KindCase kc = layer_kind_case(LayerKind::relu, RngStream{2, 0});
  const Batch b = random_batch(kc.model.input_shape, 8, RngStream{2, 1});
  const LossSpec loss = loss_for_instance(0, 8, 3, RngStream{2, 2});
  const auto rows = permutation(RngStream{2, 3}, 8);
  const auto p1 = grad_norm_penalty(kc.model, b, loss, PenaltyMode::analytic).penalty;
  const auto p2 = grad_norm_penalty(kc.model, b.gather(rows), loss.gather(rows, 3), PenaltyMode::analytic).penalty;
  CHECK(p1 == doctest::Approx(p2).epsilon(1e-12));
}

TEST_CASE("output disturbance and its bound") {
  const ExpandedModel& em = trained_component();
  const Batch probe = generate({0, 1, 5}, 4, Domain::A, 9).batch();
  CHECK(disturbance(em, probe, {HUGE_VAL, 1}, 3).epsilon == 0.0);
  CHECK(disturbance(em, probe, {HUGE_VAL, 1}, 3).bound == 0.0);

  for (double snr : {20.0, 30.0}) {
    const auto d = disturbance(em, probe, {snr, 100}, 200);
    const auto inside = std::count_if(d.trial_epsilon.begin(), d.trial_epsilon.end(), [&](double e) { return e <= d.bound; });
    CHECK(inside >= 198);
  }
  double prev = 0.0;
  for (double snr : {30.0, 20.0, 10.0, 0.0}) {
    const double eps = disturbance(em, probe, {snr, 7}, 20).epsilon;
    CHECK(eps > prev);
    prev = eps;
  }
  CHECK(code_of([&] { disturbance(em, probe, {10.0, 1}, 0); }) == ErrorCode::InvalidInput);
}
