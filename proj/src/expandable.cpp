#include "smc/expandable.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <set>

#include "expanded_engine.hpp"
#include "smc/error.hpp"
#include "smc/metrics.hpp"

namespace smc {
namespace {

constexpr std::size_t kSegHidden = 64;
constexpr std::size_t kDetHidden = 32;

std::size_t g_end(const ExpandedModel& em) { return em.split.phi_g_layers.size(); }

void check_kind(const ModelGraph& base, const SmcKind& kind) {
  const std::size_t base_out = base.output_shape().size();
  require(!kind.old_classes.empty(), ErrorCode::InvalidInput, "old class set is empty");
  require(kind.old_classes.size() == base_out, ErrorCode::DimensionMismatch,
          fmt::format("base emits {} logits but {} old classes were given", base_out, kind.old_classes.size()));
  switch (kind.variant) {
    case SmcVariant::incremental: {
      require(!kind.new_classes.empty(), ErrorCode::InvalidInput, "incremental kind needs new classes");
      std::set<int> seen(kind.old_classes.begin(), kind.old_classes.end());
      for (int c : kind.new_classes)
        require(seen.insert(c).second, ErrorCode::InvalidInput, fmt::format("class {} is both old and new", c));
      require(kind.task == TaskKind::classification, ErrorCode::InvalidInput, "incremental kind is classification");
      break;
    }
    case SmcVariant::cross_domain:
      require(kind.task == TaskKind::classification, ErrorCode::InvalidInput, "cross_domain kind is classification");
      break;
    case SmcVariant::cross_task:
      require(kind.task != TaskKind::classification, ErrorCode::InvalidInput,
              "cross_task kind needs a segmentation or detection head");
      break;
  }
}

// Base head, widened to take [old features, new features]: each column is
// duplicated and halved so equal halves reproduce the base logits.
void widen_head(const LayerParams& old, std::size_t width, LayerParams& out) {
  const std::size_t rows = old.weight.shape[0];
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < width; ++j) {
      const double half = old.weight.values[r * width + j] / 2.0;
      out.weight.values[r * 2 * width + j] = half;
      out.weight.values[r * 2 * width + width + j] = half;
    }
    out.bias.values[r] = old.bias.values[r];
  }
}

std::vector<LayerSpec> head_layers(const SmcKind& kind, std::size_t width) {
  switch (kind.task) {
    case TaskKind::classification:
      return {dense_layer("head_new", 2 * width, kind.class_order().size())};
    case TaskKind::segmentation:
      return {dense_layer("seg_hidden", 2 * width, kSegHidden), relu_layer("seg_relu"),
              dense_layer("seg_out", kSegHidden, kImagePixels)};
    case TaskKind::detection:
      return {dense_layer("det_hidden", 2 * width, kDetHidden), relu_layer("det_relu"), dense_layer("det_out", kDetHidden, 4)};
  }
  return {};
}

std::vector<std::string> param_layers(const std::vector<LayerSpec>& a, const std::vector<LayerSpec>& b) {
  std::vector<std::string> names;
  for (const auto* list : {&a, &b})
    for (const auto& l : *list)
      if (l.has_params()) names.push_back(l.name);
  return names;
}

}  // namespace

std::string_view to_string(SmcVariant v) {
  switch (v) {
    case SmcVariant::incremental: return "incremental";
    case SmcVariant::cross_task: return "cross_task";
    case SmcVariant::cross_domain: return "cross_domain";
  }
  return "unknown";
}

SmcVariant smc_variant_from_string(std::string_view name) {
  for (auto v : {SmcVariant::incremental, SmcVariant::cross_task, SmcVariant::cross_domain})
    if (to_string(v) == name) return v;
  fail(ErrorCode::InvalidInput, fmt::format("unknown component kind '{}'", name));
}

std::string_view to_string(TaskKind t) {
  switch (t) {
    case TaskKind::classification: return "classification";
    case TaskKind::segmentation: return "segmentation";
    case TaskKind::detection: return "detection";
  }
  return "unknown";
}

TaskKind task_kind_from_string(std::string_view name) {
  for (auto t : {TaskKind::classification, TaskKind::segmentation, TaskKind::detection})
    if (to_string(t) == name) return t;
  fail(ErrorCode::InvalidInput, fmt::format("unknown task '{}'", name));
}

std::string_view to_string(PenaltyMode m) { return m == PenaltyMode::analytic ? "analytic" : "finite_diff"; }

PenaltyMode penalty_mode_from_string(std::string_view name) {
  if (name == "analytic") return PenaltyMode::analytic;
  if (name == "finite_diff") return PenaltyMode::finite_diff;
  fail(ErrorCode::InvalidInput, fmt::format("unknown penalty mode '{}'", name));
}

std::vector<int> SmcKind::class_order() const {
  std::vector<int> order = old_classes;
  if (variant == SmcVariant::incremental) order.insert(order.end(), new_classes.begin(), new_classes.end());
  return order;
}

std::vector<std::string> ExpandedModel::component_layers() const { return param_layers(phi_s_new, head_new); }

std::size_t ExpandedModel::trainable_parameter_count() const {
  std::size_t total = 0;
  for (const auto* list : {&phi_s_new, &head_new})
    for (const auto& l : *list) total += l.weight_count() + l.bias_count();
  return total;
}

Shape ExpandedModel::split_shape() const { return base.shapes()[g_end(*this)]; }

std::size_t ExpandedModel::feature_width() const { return detail::geometry(*this).f_width; }

std::size_t ExpandedModel::output_width() const { return detail::geometry(*this).out_width; }

namespace detail {

Geometry geometry(const ExpandedModel& em) {
  Geometry geo;
  const Shape split = em.split_shape();
  geo.g_width = split.size();
  geo.s_specs = em.phi_s_new;
  geo.s_shapes = sequence_shapes(geo.s_specs, split);
  geo.f_width = geo.s_shapes.back().size();
  geo.h_specs = em.head_new;
  geo.h_shapes = sequence_shapes(geo.h_specs, Shape{2 * geo.f_width, 1, 1});
  geo.out_width = geo.h_shapes.back().size();
  return geo;
}

}  // namespace detail

ExpandedModel build_expanded(const ModelGraph& base, const SplitPlan& split, const SmcKind& kind, const RngStream& init) {
  base.validate();
  check_kind(base, kind);
  require(split.phi_g_layers.size() + split.phi_s_layers.size() == base.head_start, ErrorCode::InvalidInput,
          "split plan does not cover the feature extractor");
  ExpandedModel em;
  em.base = base;
  for (auto& [name, flag] : em.base.trainable) flag = false;
  em.split = split;
  em.kind = kind;
  em.base_checksum = model_checksum(base);

  for (const auto& name : split.phi_s_layers) {
    LayerSpec spec = base.layers[base.index_of(name)];
    spec.name += kNewSuffix;
    if (spec.has_params()) em.params[spec.name] = base.params.at(name);
    em.phi_s_new.push_back(std::move(spec));
  }
  const std::size_t width = detail::sequence_shapes(em.phi_s_new, em.split_shape()).back().size();

  em.head_new = head_layers(kind, width);
  for (const auto& spec : em.head_new)
    if (spec.has_params()) em.params[spec.name] = init_layer_params(spec, init.derive("head"));

  if (kind.task == TaskKind::classification) {
    // Start the new head from the base head on the old classes.
    require(base.layers.size() == base.head_start + 1 && base.layers.back().kind == LayerKind::dense,
            ErrorCode::DimensionMismatch, "base head must be a single dense layer");
    const LayerSpec& h = base.layers.back();
    require(h.in == width, ErrorCode::DimensionMismatch,
            fmt::format("base head takes {} features but the special extractor emits {}", h.in, width));
    widen_head(base.params.at(h.name), width, em.params.at("head_new"));
  }
  (void)detail::geometry(em);
  return em;
}

FrozenFeatures frozen_features(const ExpandedModel& em, const Batch& inputs) {
  require(inputs.sample_shape.size() == em.base.input_shape.size(), ErrorCode::DimensionMismatch,
          "batch shape does not match the base input");
  const auto shapes = em.base.shapes();
  const auto refs = detail::bind_params(em.base.params);
  const std::size_t ge = g_end(em);
  const std::size_t hs = em.base.head_start;
  std::span<const LayerSpec> layers(em.base.layers);
  std::span<const Shape> sh(shapes);
  FrozenFeatures f;
  f.n = inputs.n;
  f.g = detail::forward_sequence<double>(layers.subspan(0, ge), sh.subspan(0, ge + 1), refs, inputs.data, inputs.n,
                                         nullptr);
  f.f_old = detail::forward_sequence<double>(layers.subspan(ge, hs - ge), sh.subspan(ge, hs - ge + 1), refs, f.g,
                                             inputs.n, nullptr);
  return f;
}

LossSpec task_loss(const ExpandedModel& em, const ShapeDataset& ds) {
  switch (em.kind.task) {
    case TaskKind::classification: {
      const auto order = em.kind.class_order();
      return classification_loss(map_labels(ds.labels, order));
    }
    case TaskKind::segmentation:
      return {LossKind::sigmoid_cross_entropy, {}, ds.masks};
    case TaskKind::detection: {
      LossSpec l{LossKind::mean_squared, {}, {}};
      for (const auto& b : ds.boxes)
        for (double v : {b.cx, b.cy, b.w, b.h}) l.targets.push_back(v / static_cast<double>(kImageSide));
      return l;
    }
  }
  fail(ErrorCode::InvalidInput, "unknown task");
}

double semantic_distance(std::span<const double> f_new, std::span<const double> f_old, std::size_t n, std::size_t width) {
  require(f_new.size() == n * width && f_old.size() == n * width && n > 0, ErrorCode::DimensionMismatch,
          "feature batches do not match");
  std::vector<double> fn(f_new.begin(), f_new.end());
  return detail::semantic_term<double>(fn, f_old, n, width, nullptr);
}

std::vector<SmcEpochStats> train_smc(ExpandedModel& em, const ShapeDataset& new_data, const RehearsalMemory& memory,
                                     const TrainConfig& cfg) {
  require(new_data.n > 0, ErrorCode::InvalidInput, "new data is empty");
  require(cfg.lambda >= 0.0 && cfg.beta >= 0.0 && cfg.lr > 0.0 && cfg.batch > 0, ErrorCode::InvalidInput,
          "lambda and beta must be non-negative, lr and batch positive");
  const bool incremental = em.kind.variant == SmcVariant::incremental;
  require(!incremental || memory.size() > 0, ErrorCode::InvalidInput, "incremental training needs rehearsal memory");

  Batch inputs = new_data.batch();
  LossSpec loss = task_loss(em, new_data);
  if (incremental) {
    std::size_t repeats = 1;
    if (cfg.balance_memory) {
      const double new_per_class = static_cast<double>(new_data.n) / static_cast<double>(em.kind.new_classes.size());
      const double mem_per_class = static_cast<double>(memory.size()) / static_cast<double>(em.kind.old_classes.size());
      repeats = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(new_per_class / mem_per_class)));
    }
    const auto extra = map_labels(memory.labels, em.kind.class_order());
    for (std::size_t r = 0; r < repeats; ++r) {
      inputs.data.insert(inputs.data.end(), memory.images.begin(), memory.images.end());
      inputs.n += memory.size();
      loss.labels.insert(loss.labels.end(), extra.begin(), extra.end());
    }
  }

  const auto geo = detail::geometry(em);
  const FrozenFeatures feats = frozen_features(em, inputs);
  const auto names = em.component_layers();
  FlatParams theta = flatten_params(em.params, names);
  std::vector<double> grad(theta.values.size());
  detail::LayerRefs<double> refs;
  detail::bind_flat<double>(refs, theta.layout, theta.values.data(), grad.data());
  std::vector<double> penalty_grad;

  const std::size_t gw = geo.g_width, fw = geo.f_width, ow = geo.out_width;
  const RngStream shuffle = RngStream{cfg.seed, 0}.derive("smc-shuffle");
  std::vector<SmcEpochStats> trace;
  std::size_t step = 0;
  std::vector<double> gb, fb;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = permutation(shuffle.derive(epoch), inputs.n);
    SmcEpochStats st{epoch, 0.0, 0.0, 0.0, 0.0};
    std::size_t correct = 0;
    for (std::size_t start = 0; start < inputs.n; start += cfg.batch, ++step) {
      const std::size_t stop = std::min(inputs.n, start + cfg.batch);
      const std::size_t nb = stop - start;
      std::span<const std::size_t> rows(order.data() + start, nb);
      gb.resize(nb * gw);
      fb.resize(nb * fw);
      for (std::size_t i = 0; i < nb; ++i) {
        std::copy_n(feats.g.begin() + static_cast<std::ptrdiff_t>(rows[i] * gw), gw, gb.begin() + static_cast<std::ptrdiff_t>(i * gw));
        std::copy_n(feats.f_old.begin() + static_cast<std::ptrdiff_t>(rows[i] * fw), fw, fb.begin() + static_cast<std::ptrdiff_t>(i * fw));
      }
      const LossSpec lb = loss.gather(rows, ow);

      std::fill(grad.begin(), grad.end(), 0.0);
      auto pass = detail::expanded_pass<double>(geo, refs, gb, fb, nb, &lb, cfg.lambda, cfg.semantic_cap, true);
      double total = pass.loss;
      if (cfg.beta > 0.0) {
        auto eval = [&](const auto* th, auto* gr) {
          using T = std::remove_cvref_t<decltype(*th)>;
          detail::LayerRefs<T> r;
          detail::bind_flat<T>(r, theta.layout, th, gr);
          return detail::expanded_pass<T>(geo, r, gb, fb, nb, &lb, 0.0, cfg.semantic_cap, true).ce;
        };
        const double norm = detail::grad_norm_gradient(eval, theta.values, cfg.penalty_mode, penalty_grad);
        total += cfg.beta * norm;
        kernels::axpy(cfg.beta, penalty_grad.data(), grad.data(), grad.size());
      }
      require(std::isfinite(total), ErrorCode::NumericalError, fmt::format("non-finite loss at step {}", step));
      st.loss += total * static_cast<double>(nb);
      st.ce += pass.ce * static_cast<double>(nb);
      st.semdist += pass.semdist * static_cast<double>(nb);
      if (em.kind.task == TaskKind::classification) {
        for (std::size_t s = 0; s < nb; ++s) {
          const double* z = pass.out.data() + s * ow;
          correct += static_cast<int>(std::max_element(z, z + ow) - z) == lb.labels[s] ? 1 : 0;
        }
      }
      sgd_step(theta.values, grad, cfg.lr, cfg.clip_norm);
    }
    const double n = static_cast<double>(inputs.n);
    st.loss /= n;
    st.ce /= n;
    st.semdist /= n;
    st.metric = static_cast<double>(correct) / n;
    trace.push_back(st);
  }
  unflatten_params(em.params, theta.layout, theta.values);
  round_params_to_f32(em.params);
  em.lambda = cfg.lambda;
  em.beta = cfg.beta;
  return trace;
}

Batch expanded_forward(const ExpandedModel& em, const FrozenFeatures& features) {
  const auto geo = detail::geometry(em);
  const auto refs = detail::bind_params(em.params);
  auto pass = detail::expanded_pass<double>(geo, refs, features.g, features.f_old, features.n, nullptr, 0.0, 0.0, false);
  return {{geo.out_width, 1, 1}, features.n, std::move(pass.out)};
}

Batch expanded_forward(const ExpandedModel& em, const Batch& inputs) {
  return expanded_forward(em, frozen_features(em, inputs));
}

std::vector<int> predict_labels(const ExpandedModel& em, const Batch& inputs) {
  require(em.kind.task == TaskKind::classification, ErrorCode::InvalidInput, "component does not classify");
  const Batch out = expanded_forward(em, inputs);
  const auto order = em.kind.class_order();
  std::vector<int> labels(out.n);
  for (std::size_t s = 0; s < out.n; ++s) {
    const auto z = out.sample(s);
    labels[s] = order[static_cast<std::size_t>(std::max_element(z.begin(), z.end()) - z.begin())];
  }
  return labels;
}

std::vector<double> predict_masks(const ExpandedModel& em, const Batch& inputs) {
  require(em.kind.task == TaskKind::segmentation, ErrorCode::InvalidInput, "component does not segment");
  Batch out = expanded_forward(em, inputs);
  for (double& v : out.data) v = v > 0.0 ? 1.0 : 0.0;
  return out.data;
}

std::vector<Box> predict_boxes(const ExpandedModel& em, const Batch& inputs) {
  require(em.kind.task == TaskKind::detection, ErrorCode::InvalidInput, "component does not detect");
  const Batch out = expanded_forward(em, inputs);
  const double side = static_cast<double>(kImageSide);
  std::vector<Box> boxes(out.n);
  for (std::size_t s = 0; s < out.n; ++s) {
    const auto z = out.sample(s);
    boxes[s] = {z[0] * side, z[1] * side, std::max(0.0, z[2] * side), std::max(0.0, z[3] * side)};
  }
  return boxes;
}

double evaluate(const ExpandedModel& em, const ShapeDataset& ds) {
  const Batch b = ds.batch();
  switch (em.kind.task) {
    case TaskKind::classification:
      return accuracy(predict_labels(em, b), ds.labels);
    case TaskKind::segmentation:
      return mean_iou(predict_masks(em, b), ds.masks);
    case TaskKind::detection:
      return average_precision(predict_boxes(em, b), ds.boxes, 0.5);
  }
  return 0.0;
}

double evaluate_classifier(const ModelGraph& model, std::span<const int> class_order, const ShapeDataset& ds) {
  require(model.output_shape().size() == class_order.size(), ErrorCode::DimensionMismatch,
          "class order length differs from the model outputs");
  const auto idx = predict_classes(model, ds.batch());
  std::vector<int> labels(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) labels[i] = class_order[static_cast<std::size_t>(idx[i])];
  return accuracy(labels, ds.labels);
}

SmcPackage extract_smc(const ExpandedModel& em) {
  SmcPackage pkg;
  pkg.kind = em.kind;
  pkg.split_candidate = em.split.split_candidate;
  pkg.split_layer = em.split.split_layer;
  pkg.lambda = em.lambda;
  pkg.beta = em.beta;
  pkg.base_checksum = em.base_checksum;
  pkg.phi_s_new = em.phi_s_new;
  pkg.head_new = em.head_new;
  for (const auto& name : em.component_layers()) pkg.params[name] = em.params.at(name);
  return pkg;
}

ExpandedModel apply_smc(const ModelGraph& base, const SmcPackage& pkg, bool force) {
  const std::string checksum = model_checksum(base);
  require(force || checksum == pkg.base_checksum, ErrorCode::BaseModelMismatch,
          fmt::format("component targets base {} but the local base is {}", pkg.base_checksum, checksum));
  check_kind(base, pkg.kind);

  ExpandedModel em;
  em.base = base;
  for (auto& [name, flag] : em.base.trainable) flag = false;
  em.split = split_after(base, pkg.split_candidate);
  require(em.split.split_layer == pkg.split_layer, ErrorCode::DimensionMismatch,
          fmt::format("split layer '{}' does not match the base ('{}')", pkg.split_layer, em.split.split_layer));
  em.kind = pkg.kind;
  em.base_checksum = pkg.base_checksum;
  em.lambda = pkg.lambda;
  em.beta = pkg.beta;

  require(pkg.phi_s_new.size() == em.split.phi_s_layers.size(), ErrorCode::DimensionMismatch,
          "expanded extractor does not mirror the base special extractor");
  for (std::size_t i = 0; i < pkg.phi_s_new.size(); ++i) {
    LayerSpec expect = base.layers[base.index_of(em.split.phi_s_layers[i])];
    expect.name += kNewSuffix;
    require(pkg.phi_s_new[i] == expect, ErrorCode::DimensionMismatch,
            fmt::format("layer {} does not mirror {}", pkg.phi_s_new[i].name, em.split.phi_s_layers[i]));
  }
  em.phi_s_new = pkg.phi_s_new;
  em.head_new = pkg.head_new;
  const auto geo = detail::geometry(em);
  const std::size_t expected_out =
      pkg.kind.task == TaskKind::classification ? pkg.kind.class_order().size()
      : pkg.kind.task == TaskKind::segmentation ? kImagePixels
                                                 : 4;
  require(geo.out_width == expected_out, ErrorCode::DimensionMismatch, "head output does not match the component kind");

  for (const auto& name : em.component_layers()) {
    auto it = pkg.params.find(name);
    require(it != pkg.params.end(), ErrorCode::NotFound, "component lacks tensors for " + name);
    em.params[name] = it->second;
  }
  for (const auto* list : {&em.phi_s_new, &em.head_new}) {
    for (const auto& spec : *list) {
      if (!spec.has_params()) continue;
      const auto& p = em.params.at(spec.name);
      require(p.weight.values.size() == spec.weight_count() && p.bias.values.size() == spec.bias_count(),
              ErrorCode::DimensionMismatch, "tensor sizes do not match layer " + spec.name);
    }
  }
  require(pkg.params.size() == em.params.size(), ErrorCode::InvalidInput, "component carries unexpected tensors");
  return em;
}

FlatParams component_params(const ExpandedModel& em) { return flatten_params(em.params, em.component_layers()); }

void set_component_params(ExpandedModel& em, const FlatParams& flat) { unflatten_params(em.params, flat.layout, flat.values); }

}  // namespace smc
