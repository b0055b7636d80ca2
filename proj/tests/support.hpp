#pragma once

// Helpers shared by the unit tests and the acceptance binary.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "expanded_engine.hpp"
#include "smc/expandable.hpp"
#include "smc/linalg.hpp"
#include "smc/svcca.hpp"
#include "smc/model.hpp"
#include "smc/rng.hpp"

namespace smc::testing {

inline double norm2(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

/// ‖a − b‖ / max(‖a‖, ‖b‖); both gradients being zero counts as agreement.
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  const double scale = std::max(norm2(a), norm2(b));
  return scale == 0.0 ? 0.0 : norm2(d) / scale;
}

inline Matrix random_matrix(std::size_t r, std::size_t c, const RngStream& s) {
  return Matrix(r, c, gaussian(s, r * c, 1.0));
}

inline Batch random_batch(Shape shape, std::size_t n, const RngStream& s) {
  return {shape, n, gaussian(s, n * shape.size(), 1.0)};
}

/// Coordinates checked per instance: all of them for small vectors, a seeded
/// sample otherwise.
inline std::vector<std::size_t> pick_coords(std::size_t total, std::size_t max_coords, const RngStream& s) {
  std::vector<std::size_t> idx = permutation(s, total);
  if (idx.size() > max_coords) idx.resize(max_coords);
  std::sort(idx.begin(), idx.end());
  return idx;
}

/// Central difference of f at coordinate i. A step that straddles a ReLU
/// kink makes the two one-sided slopes disagree; shrink it until they match.
template <class F>
double central_difference(F&& f, std::vector<double> v, std::size_t i, double eps) {
  const double x = v[i];
  const double mid = f(v);
  for (;;) {
    v[i] = x + eps;
    const double up = f(v);
    v[i] = x - eps;
    const double down = f(v);
    const double right = (up - mid) / eps, left = (mid - down) / eps;
    if (std::abs(right - left) < 1e-3 * std::max(1.0, std::abs(right + left)) || eps < 1e-9)
      return (up - down) / (2.0 * eps);
    eps /= 10.0;
  }
}

/// Analytic vs central-difference gradient of a plain model's loss, restricted
/// to a sample of coordinates.
inline double model_grad_error(const ModelGraph& model, const Batch& batch, const LossSpec& loss, const RngStream& pick,
                               std::size_t max_coords = 300, double eps = 1e-5) {
  const auto names = trainable_layers(model);
  const BackwardResult br = backward(model, batch, loss);
  const FlatParams grad = flatten_params(br.grads, names);
  const FlatParams theta = flatten_params(model, names);
  std::vector<double> analytic, numeric;
  ModelGraph probe = model;
  auto loss_at = [&](const std::vector<double>& v) {
    unflatten_params(probe.params, theta.layout, v);
    return backward(probe, batch, loss).loss;
  };
  for (std::size_t i : pick_coords(theta.values.size(), max_coords, pick)) {
    analytic.push_back(grad.values[i]);
    numeric.push_back(central_difference(loss_at, theta.values, i, eps));
  }
  return relative_error(analytic, numeric);
}

/// Same check for the trainable part of an expanded model, whose pass joins
/// the two feature paths with a channel concatenation.
inline double expanded_grad_error(const ExpandedModel& em, const Batch& batch, const LossSpec& loss, double lambda,
                                  const RngStream& pick, std::size_t max_coords = 300, double eps = 1e-5) {
  const auto geo = detail::geometry(em);
  const FrozenFeatures f = frozen_features(em, batch);
  const FlatParams theta = component_params(em);
  auto loss_at = [&](const std::vector<double>& th, std::vector<double>* grad) {
    detail::LayerRefs<double> refs;
    detail::bind_flat<double>(refs, theta.layout, th.data(), grad ? grad->data() : nullptr);
    return detail::expanded_pass<double>(geo, refs, f.g, f.f_old, f.n, &loss, lambda, 10.0, grad != nullptr).loss;
  };
  std::vector<double> grad(theta.values.size(), 0.0);
  loss_at(theta.values, &grad);
  std::vector<double> analytic, numeric;
  for (std::size_t i : pick_coords(theta.values.size(), max_coords, pick)) {
    analytic.push_back(grad[i]);
    numeric.push_back(central_difference([&](const std::vector<double>& v) { return loss_at(v, nullptr); },
                                         theta.values, i, eps));
  }
  return relative_error(analytic, numeric);
}

/// A small network exercising one layer kind, with its input shape.
struct KindCase {
  ModelGraph model;
  std::string name;
};

inline KindCase layer_kind_case(LayerKind kind, const RngStream& init) {
  switch (kind) {
    case LayerKind::dense:
      return {make_model({6, 1, 1}, {dense_layer("fc1", 6, 5, "b1"), dense_layer("out", 5, 3)}, 1, init), "dense"};
    case LayerKind::conv2d:
      return {make_model({2, 5, 5},
                         {conv2d_layer("conv", 2, 3, 3, 1, "b1"), flatten_layer("flat", "b1"), dense_layer("out", 75, 3)}, 2,
                         init),
              "conv2d"};
    case LayerKind::relu:
      return {make_model({6, 1, 1}, {dense_layer("fc1", 6, 8, "b1"), relu_layer("act", "b1"), dense_layer("out", 8, 3)}, 2,
                         init),
              "relu"};
    case LayerKind::maxpool2x2:
      return {make_model({2, 4, 4},
                         {conv2d_layer("conv", 2, 2, 3, 1, "b1"), maxpool_layer("pool", "b1"), flatten_layer("flat", "b1"),
                          dense_layer("out", 8, 3)},
                         3, init),
              "maxpool2x2"};
    case LayerKind::flatten:
      return {make_model({2, 3, 3},
                         {conv2d_layer("conv", 2, 2, 2, 0, "b1"), flatten_layer("flat", "b1"), dense_layer("out", 8, 3)}, 2,
                         init),
              "flatten"};
    case LayerKind::concat_channels:
      break;
  }
  return {};
}

/// Loss of instance k: the three differentiable loss kinds in turn.
inline LossSpec loss_for_instance(std::size_t k, std::size_t n, std::size_t width, const RngStream& s) {
  switch (k % 3) {
    case 0: {
      std::vector<int> labels;
      Generator gen(s);
      for (std::size_t i = 0; i < n; ++i) labels.push_back(static_cast<int>(gen.uniform_below(width)));
      return classification_loss(labels);
    }
    case 1: {
      std::vector<double> t;
      Generator gen(s);
      for (std::size_t i = 0; i < n * width; ++i) t.push_back(gen.uniform() < 0.5 ? 0.0 : 1.0);
      return {LossKind::sigmoid_cross_entropy, {}, t};
    }
    default:
      return {LossKind::mean_squared, {}, gaussian(s, n * width, 1.0)};
  }
}

inline Matrix random_orthogonal(std::size_t n, const RngStream& s) {
  const auto r = svd(random_matrix(n, n, s));
  return r.u;
}

// ρ₁ of two 2-row representations from the 2×2 generalised eigenproblem
// Σxx⁻¹ Σxy Σyy⁻¹ Σyx v = ρ² v, solved in closed form.
inline double cca_2d(const Matrix& x, const Matrix& y) {
  const Matrix sxx = centered_cross_covariance(x, x);
  const Matrix syy = centered_cross_covariance(y, y);
  const Matrix sxy = centered_cross_covariance(x, y);
  auto inv = [](const Matrix& a) {
    const double det = a(0, 0) * a(1, 1) - a(0, 1) * a(1, 0);
    return Matrix(2, 2, std::vector<double>{a(1, 1) / det, -a(0, 1) / det, -a(1, 0) / det, a(0, 0) / det});
  };
  const Matrix m = matmul(matmul(inv(sxx), sxy), matmul(inv(syy), transpose(sxy)));
  const double tr = m(0, 0) + m(1, 1);
  const double det = m(0, 0) * m(1, 1) - m(0, 1) * m(1, 0);
  return std::sqrt(tr / 2.0 + std::sqrt(std::max(0.0, tr * tr / 4.0 - det)));
}

/// Random component: kind, split and tensor values vary with the case index.
inline SmcPackage random_package(std::uint64_t k) {
  static const ModelGraph base = make_toy_classifier(3, RngStream{5, 0});
  Generator gen(RngStream{k, 77});
  const auto blocks = toy_blocks();
  const std::string split = blocks[gen.uniform_below(blocks.size())];
  SmcKind kind;
  kind.old_classes = {0, 1, 2};
  switch (gen.uniform_below(4)) {
    case 0:
      kind.variant = SmcVariant::incremental;
      kind.new_classes = {static_cast<int>(3 + gen.uniform_below(3)), 9};
      break;
    case 1:
      kind.variant = SmcVariant::cross_task;
      kind.task = TaskKind::segmentation;
      break;
    case 2:
      kind.variant = SmcVariant::cross_task;
      kind.task = TaskKind::detection;
      break;
    default:
      kind.variant = SmcVariant::cross_domain;
      kind.domain = Domain::B;
      break;
  }
  ExpandedModel em = build_expanded(base, split_after(base, split), kind, RngStream{k, 1});
  FlatParams p = component_params(em);
  const double scale = std::pow(10.0, static_cast<double>(gen.uniform_below(7)) - 3.0);
  for (auto& v : p.values) v = static_cast<float>(gen.normal() * scale);
  set_component_params(em, p);
  em.lambda = static_cast<float>(gen.uniform());
  em.beta = static_cast<float>(gen.uniform());
  return extract_smc(em);
}

}  // namespace smc::testing
