#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "smc/channel.hpp"
#include "smc/error.hpp"
#include "smc/expandable.hpp"
#include "smc/experiments.hpp"
#include "smc/package_io.hpp"
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

const std::vector<int> kOld{0, 1, 2};
const std::vector<int> kNew{5, 6};

ModelGraph small_base() {
  static const ModelGraph base = [] {
    const auto ds = generate(kOld, 40, Domain::A, 3);
    return train_base_model(ds, {5, 0.05, 32}, 3);
  }();
  return base;
}

ExpandedModel incremental(const std::string& split, std::uint64_t seed = 1) {
  return build_expanded(small_base(), split_after(small_base(), split), SmcKind{SmcVariant::incremental, kOld, kNew},
                        RngStream{seed, 0});
}

std::vector<double> special_features(const ExpandedModel& em, const Batch& b, bool fresh) {
  // f_new is the tail of the concatenated input of the head; recompute it by
  // running phi_s_new on g.
  const FrozenFeatures f = frozen_features(em, b);
  if (!fresh) return f.f_old;
  ModelGraph s = make_model(em.split_shape(), em.phi_s_new, em.phi_s_new.size(), RngStream{0, 0});
  for (const auto& l : em.phi_s_new)
    if (l.has_params()) s.params[l.name] = em.params.at(l.name);
  return forward(s, Batch{em.split_shape(), f.n, f.g}).outputs.data;
}

}  // namespace

TEST_CASE("untrained incremental model reproduces the base on old classes") {
  for (const auto& split : toy_blocks()) {
    CAPTURE(split);
    const ExpandedModel em = incremental(split);
    const Batch b = generate({0, 1, 2, 5}, 4, Domain::A, 8).batch();
    const Batch base_out = forward(small_base(), b).outputs;
    const Batch out = expanded_forward(em, b);
    REQUIRE(out.width() == 5);
    for (std::size_t s = 0; s < b.n; ++s)
      for (std::size_t c = 0; c < 3; ++c) CHECK(std::abs(out.data[s * 5 + c] - base_out.data[s * 3 + c]) < 1e-9);
  }
}

TEST_CASE("trainable set and parameter counts") {
  const ExpandedModel em = incremental("block3");
  std::size_t expect = 0;
  for (const auto& l : em.phi_s_new) expect += l.weight_count() + l.bias_count();
  for (const auto& l : em.head_new) expect += l.weight_count() + l.bias_count();
  CHECK(em.trainable_parameter_count() == expect);
  for (const auto& l : em.phi_s_new) CHECK(l.name.ends_with(kNewSuffix));
  const auto layers = em.component_layers();
  std::set<std::string> names(layers.begin(), layers.end());
  for (const auto& [name, p] : em.params) CHECK(names.count(name) == 1);
}

TEST_CASE("segmentation and detection heads") {
  SmcKind seg{SmcVariant::cross_task, kOld, {}, TaskKind::segmentation};
  const ExpandedModel em = build_expanded(small_base(), split_after(small_base(), "block1"), seg, RngStream{1, 0});
  CHECK(em.output_width() == kImagePixels);
  const auto masks = predict_masks(em, generate(kOld, 2, Domain::A, 1).batch());
  CHECK(masks.size() == 6 * kImagePixels);
  SmcKind det{SmcVariant::cross_task, kOld, {}, TaskKind::detection};
  CHECK(build_expanded(small_base(), split_after(small_base(), "block2"), det, RngStream{1, 0}).output_width() == 4);

  SmcKind overlap{SmcVariant::incremental, kOld, {2, 5}};
  CHECK(code_of([&] { build_expanded(small_base(), split_after(small_base(), "block2"), overlap, RngStream{1, 0}); }) ==
        ErrorCode::InvalidInput);
}

TEST_CASE("gradients through the concatenated features, with and without the semantic term") {
  for (std::uint64_t k = 0; k < 5; ++k) {
    ExpandedModel em = incremental(k % 2 ? "block2" : "block3", k);
    // Move the copy away from the original so the distance term is smooth.
    FlatParams p = component_params(em);
    const auto jitter = gaussian(RngStream{k, 9}, p.values.size(), 0.05);
    for (std::size_t i = 0; i < p.values.size(); ++i) p.values[i] += jitter[i];
    set_component_params(em, p);
    const ShapeDataset ds = generate({0, 1, 5, 6}, 2, Domain::A, 20 + k);
    const LossSpec loss = task_loss(em, ds);
    CHECK(expanded_grad_error(em, ds.batch(), loss, 0.0, RngStream{k, 1}) < 1e-6);
    CHECK(expanded_grad_error(em, ds.batch(), loss, 0.5, RngStream{k, 2}) < 1e-6);
  }
}

TEST_CASE("training keeps the base frozen and grows the semantic distance") {
  ExpandedModel em = incremental("block3");
  const ModelGraph base_before = em.base;
  const auto new_data = generate(kNew, 30, Domain::A, 5);
  const auto memory = split_rehearsal(generate(kOld, 30, Domain::A, 3), 15, 1);
  const Batch probe = generate({0, 1, 2, 5, 6}, 10, Domain::A, 6).batch();
  const std::size_t w = em.feature_width();
  CHECK(semantic_distance(special_features(em, probe, true), special_features(em, probe, false), probe.n, w) < 1e-12);

  TrainConfig tc;
  tc.epochs = 4;
  tc.lambda = 0.01;
  const auto trace = train_smc(em, new_data, memory, tc);
  REQUIRE(trace.size() == 4);
  CHECK(em.base == base_before);
  CHECK(model_checksum(em.base) == em.base_checksum);
  for (const auto& st : trace) CHECK(std::isfinite(st.loss));
  CHECK(trace.back().semdist >= trace.front().semdist);
  CHECK(semantic_distance(special_features(em, probe, true), special_features(em, probe, false), probe.n, w) > 0.0);
  CHECK(em.lambda == 0.01);

  ExpandedModel plain = incremental("block3");
  tc.lambda = 0.0;
  for (const auto& st : train_smc(plain, new_data, memory, tc)) {
    CHECK(st.semdist == 0.0);
    CHECK(st.loss == st.ce);
  }
}

TEST_CASE("training errors") {
  ExpandedModel em = incremental("block3");
  const auto new_data = generate(kNew, 10, Domain::A, 5);
  RehearsalMemory empty;
  CHECK(code_of([&] { train_smc(em, new_data, empty, TrainConfig{}); }) == ErrorCode::InvalidInput);
  TrainConfig wild;
  wild.lr = 1e300;
  wild.clip_norm = 0.0;
  wild.epochs = 3;
  const auto memory = split_rehearsal(generate(kOld, 10, Domain::A, 3), 6, 1);
  CHECK(code_of([&] { train_smc(em, new_data, memory, wild); }) == ErrorCode::NumericalError);
}

TEST_CASE("one SGD step on a single sigmoid unit, by hand") {
  ModelGraph m = make_model({1, 1, 1}, {dense_layer("u", 1, 1)}, 0, RngStream{0, 0});
  m.params["u"].weight.values = {0.5};
  m.params["u"].bias.values = {0.0};
  SgdConfig cfg;
  cfg.lr = 0.1;
  cfg.clip_norm = 0.0;
  cfg.batch = 1;
  cfg.epochs = 1;
  train(m, Batch{{1, 1, 1}, 1, {2.0}}, LossSpec{LossKind::sigmoid_cross_entropy, {}, {1.0}}, cfg);
  const double z = 1.0;  // 0.5 · 2
  const double dz = 1.0 / (1.0 + std::exp(-z)) - 1.0;
  CHECK(m.params["u"].weight.values[0] == doctest::Approx(0.5 - 0.1 * dz * 2.0).epsilon(1e-15));
  CHECK(m.params["u"].bias.values[0] == doctest::Approx(-0.1 * dz).epsilon(1e-15));
}

TEST_CASE("extract and apply") {
  ExpandedModel em = incremental("block2");
  TrainConfig tc;
  tc.epochs = 1;
  train_smc(em, generate(kNew, 10, Domain::A, 5), split_rehearsal(generate(kOld, 10, Domain::A, 3), 6, 1), tc);
  const SmcPackage pkg = extract_smc(em);
  std::set<std::string> names;
  for (const auto& [n, p] : pkg.params) names.insert(n);
  std::set<std::string> expect;
  for (const auto& l : em.phi_s_new)
    if (l.has_params()) expect.insert(l.name);
  for (const auto& l : em.head_new)
    if (l.has_params()) expect.insert(l.name);
  CHECK(names == expect);
  for (const auto& l : small_base().layers) CHECK(names.count(l.name) == 0);

  const ExpandedModel back = apply_smc(small_base(), pkg);
  const Batch b = generate({0, 5}, 5, Domain::A, 77).batch();
  CHECK(expanded_forward(back, b).data == expanded_forward(em, b).data);

  const ExpandedModel clean = transmit_component(back, ChannelConfig{HUGE_VAL, 4});
  CHECK(expanded_forward(clean, b).data == expanded_forward(em, b).data);

  const ModelGraph other = make_toy_classifier(3, RngStream{99, 0});
  CHECK(code_of([&] { apply_smc(other, pkg); }) == ErrorCode::BaseModelMismatch);
  CHECK(apply_smc(other, pkg, true).output_width() == 5);
  const ModelGraph narrow = make_toy_classifier(4, RngStream{99, 0});
  CHECK(code_of([&] { apply_smc(narrow, pkg, true); }) == ErrorCode::DimensionMismatch);
}

TEST_CASE("components from mid-depth on are smaller than the full model") {
  const std::size_t full = encode_model({make_toy_classifier(5, RngStream{1, 0}), {0, 1, 2, 5, 6}, Domain::A}).size();
  std::size_t prev = SIZE_MAX;
  for (const auto& split : toy_blocks()) {
    const std::size_t bytes = encode_package(extract_smc(incremental(split))).size();
    CHECK(bytes < prev);
    prev = bytes;
    if (split != "block1") CHECK(bytes < full);
  }
}
