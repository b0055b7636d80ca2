#include "smc/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fmt/format.h>
#include <set>

#include "smc/detail/engine.hpp"
#include "smc/error.hpp"
#include "smc/kernels.hpp"

namespace smc {

std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::dense: return "dense";
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::relu: return "relu";
    case LayerKind::maxpool2x2: return "maxpool2x2";
    case LayerKind::flatten: return "flatten";
    case LayerKind::concat_channels: return "concat_channels";
  }
  return "unknown";
}

LayerKind layer_kind_from_string(std::string_view name) {
  for (auto kind : {LayerKind::dense, LayerKind::conv2d, LayerKind::relu, LayerKind::maxpool2x2, LayerKind::flatten,
                    LayerKind::concat_channels}) {
    if (to_string(kind) == name) return kind;
  }
  fail(ErrorCode::InvalidInput, fmt::format("unknown layer kind '{}'", name));
}

std::size_t LayerSpec::weight_count() const {
  if (kind == LayerKind::dense) return in * out;
  if (kind == LayerKind::conv2d) return out * in * kernel * kernel;
  return 0;
}

std::size_t LayerSpec::bias_count() const { return has_params() ? out : 0; }

LayerSpec dense_layer(std::string name, std::size_t in, std::size_t out, std::string block) {
  return {LayerKind::dense, std::move(name), std::move(block), in, out, 0, 0};
}

LayerSpec conv2d_layer(std::string name, std::size_t in_ch, std::size_t out_ch, std::size_t kernel, std::size_t pad,
                       std::string block) {
  return {LayerKind::conv2d, std::move(name), std::move(block), in_ch, out_ch, kernel, pad};
}

LayerSpec relu_layer(std::string name, std::string block) {
  return {LayerKind::relu, std::move(name), std::move(block)};
}

LayerSpec maxpool_layer(std::string name, std::string block) {
  return {LayerKind::maxpool2x2, std::move(name), std::move(block)};
}

LayerSpec flatten_layer(std::string name, std::string block) {
  return {LayerKind::flatten, std::move(name), std::move(block)};
}

Shape layer_output_shape(const LayerSpec& spec, const Shape& in) {
  switch (spec.kind) {
    case LayerKind::dense:
      require(in.size() == spec.in, ErrorCode::DimensionMismatch,
              fmt::format("layer {} expects {} inputs, got {}", spec.name, spec.in, in.size()));
      return {spec.out, 1, 1};
    case LayerKind::conv2d: {
      require(in.c == spec.in, ErrorCode::DimensionMismatch,
              fmt::format("layer {} expects {} channels, got {}", spec.name, spec.in, in.c));
      require(spec.kernel > 0 && in.h + 2 * spec.pad >= spec.kernel && in.w + 2 * spec.pad >= spec.kernel,
              ErrorCode::DimensionMismatch, fmt::format("layer {} kernel does not fit its input", spec.name));
      return {spec.out, in.h + 2 * spec.pad - spec.kernel + 1, in.w + 2 * spec.pad - spec.kernel + 1};
    }
    case LayerKind::relu:
      return in;
    case LayerKind::maxpool2x2:
      require(in.h >= 2 && in.w >= 2, ErrorCode::DimensionMismatch,
              fmt::format("layer {} needs at least a 2x2 input", spec.name));
      return {in.c, in.h / 2, in.w / 2};
    case LayerKind::flatten:
      return {in.size(), 1, 1};
    case LayerKind::concat_channels:
      fail(ErrorCode::InvalidInput, "concat_channels has two inputs and no single-input shape");
  }
  return in;
}

std::vector<Shape> ModelGraph::shapes() const { return detail::sequence_shapes(layers, input_shape); }

Shape ModelGraph::output_shape() const { return shapes().back(); }

std::size_t ModelGraph::index_of(std::string_view layer_name) const {
  for (std::size_t i = 0; i < layers.size(); ++i)
    if (layers[i].name == layer_name) return i;
  fail(ErrorCode::NotFound, fmt::format("no layer named '{}'", layer_name));
}

bool ModelGraph::is_trainable(const std::string& layer_name) const {
  auto it = trainable.find(layer_name);
  return it != trainable.end() && it->second;
}

std::size_t ModelGraph::parameter_count() const {
  std::size_t total = 0;
  for (const auto& layer : layers) total += layer.weight_count() + layer.bias_count();
  return total;
}

void ModelGraph::validate() const {
  std::set<std::string> names;
  for (const auto& layer : layers) {
    require(!layer.name.empty(), ErrorCode::InvalidInput, "layer without a name");
    require(names.insert(layer.name).second, ErrorCode::InvalidInput, "duplicate layer name " + layer.name);
    require(layer.kind != LayerKind::concat_channels, ErrorCode::InvalidInput,
            "concat_channels cannot appear in a sequential graph");
    if (!layer.has_params()) continue;
    auto it = params.find(layer.name);
    require(it != params.end(), ErrorCode::NotFound, "missing parameters for " + layer.name);
    require(it->second.weight.values.size() == layer.weight_count() &&
                it->second.bias.values.size() == layer.bias_count(),
            ErrorCode::DimensionMismatch, "parameter tensor sizes do not match layer " + layer.name);
  }
  require(head_start <= layers.size(), ErrorCode::InvalidInput, "head_start beyond the layer list");
  (void)shapes();
}

LayerParams init_layer_params(const LayerSpec& spec, const RngStream& init) {
  LayerParams p;
  if (spec.kind == LayerKind::dense) {
    p.weight.shape = {spec.out, spec.in};
  } else {
    p.weight.shape = {spec.out, spec.in, spec.kernel, spec.kernel};
  }
  p.bias.shape = {spec.out};
  const std::size_t fan_in = spec.weight_count() / spec.out;
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  Generator gen(init.derive(spec.name));
  p.weight.values.resize(spec.weight_count());
  for (double& w : p.weight.values) w = (2.0 * gen.uniform() - 1.0) * bound;
  p.bias.values.assign(spec.bias_count(), 0.0);
  return p;
}

ModelGraph make_model(Shape input_shape, std::vector<LayerSpec> layers, std::size_t head_start, const RngStream& init) {
  ModelGraph model;
  model.input_shape = input_shape;
  model.layers = std::move(layers);
  model.head_start = head_start;
  for (const auto& layer : model.layers) {
    if (!layer.has_params()) continue;
    model.params[layer.name] = init_layer_params(layer, init);
    model.trainable[layer.name] = true;
  }
  model.validate();
  return model;
}

void set_trainable(ModelGraph& model, std::span<const std::string> layer_names, bool trainable) {
  for (const auto& name : layer_names) {
    const auto& spec = model.layers[model.index_of(name)];
    if (spec.has_params()) model.trainable[name] = trainable;
  }
}

void round_params_to_f32(ParamMap& params) {
  for (auto& [name, p] : params) {
    for (double& v : p.weight.values) v = static_cast<double>(static_cast<float>(v));
    for (double& v : p.bias.values) v = static_cast<double>(static_cast<float>(v));
  }
}

Batch Batch::gather(std::span<const std::size_t> rows) const {
  Batch out{sample_shape, rows.size(), {}};
  out.data.resize(rows.size() * width());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    auto src = sample(rows[i]);
    std::copy(src.begin(), src.end(), out.data.begin() + static_cast<std::ptrdiff_t>(i * width()));
  }
  return out;
}

ForwardResult forward(const ModelGraph& model, const Batch& batch, std::span<const std::string> capture) {
  require(batch.sample_shape.size() == model.input_shape.size(), ErrorCode::DimensionMismatch,
          "batch shape does not match the model input");
  require(batch.data.size() == batch.n * batch.width(), ErrorCode::DimensionMismatch, "batch data length is wrong");
  for (const auto& name : capture) (void)model.index_of(name);

  const auto shapes = model.shapes();
  const auto refs = detail::bind_params(model.params);
  ForwardResult result;
  detail::Capture cap{capture, [&](const std::string& name, const Shape& shape, std::span<const double> values) {
                        Matrix m(shape.size(), batch.n);
                        for (std::size_t s = 0; s < batch.n; ++s)
                          for (std::size_t i = 0; i < shape.size(); ++i) m(i, s) = values[s * shape.size() + i];
                        result.records.push_back({name, std::move(m)});
                      }};
  auto out = detail::forward_sequence<double>(model.layers, shapes, refs, batch.data, batch.n, nullptr, &cap);
  // Records follow the requested order, not network order.
  std::vector<ActivationRecord> ordered;
  for (const auto& name : capture) {
    auto it = std::find_if(result.records.begin(), result.records.end(),
                           [&](const ActivationRecord& r) { return r.layer_name == name; });
    ordered.push_back(*it);
  }
  result.records = std::move(ordered);
  result.outputs = {shapes.back(), batch.n, std::move(out)};
  return result;
}

LossSpec LossSpec::gather(std::span<const std::size_t> rows, std::size_t width) const {
  LossSpec out{kind, {}, {}};
  if (!labels.empty()) {
    out.labels.reserve(rows.size());
    for (auto r : rows) out.labels.push_back(labels[r]);
  }
  if (!targets.empty()) {
    out.targets.reserve(rows.size() * width);
    for (auto r : rows)
      out.targets.insert(out.targets.end(), targets.begin() + static_cast<std::ptrdiff_t>(r * width),
                         targets.begin() + static_cast<std::ptrdiff_t>((r + 1) * width));
  }
  return out;
}

LossSpec classification_loss(std::vector<int> labels) {
  return {LossKind::softmax_cross_entropy, std::move(labels), {}};
}

std::vector<std::string> trainable_layers(const ModelGraph& model) {
  std::vector<std::string> names;
  for (const auto& layer : model.layers)
    if (layer.has_params() && model.is_trainable(layer.name)) names.push_back(layer.name);
  return names;
}

FlatParams flatten_params(const ParamMap& params, std::span<const std::string> layer_subset) {
  require(!layer_subset.empty(), ErrorCode::InvalidInput, "flatten_params needs at least one layer");
  FlatParams flat;
  for (const auto& name : layer_subset) {
    auto it = params.find(name);
    require(it != params.end(), ErrorCode::NotFound, "no parameters for layer " + name);
    for (const auto* tensor : {&it->second.weight, &it->second.bias}) {
      TensorSlot slot{name, tensor == &it->second.weight ? "weight" : "bias", tensor->shape, flat.values.size(),
                      tensor->values.size()};
      flat.values.insert(flat.values.end(), tensor->values.begin(), tensor->values.end());
      flat.layout.slots.push_back(std::move(slot));
    }
  }
  flat.layout.total = flat.values.size();
  return flat;
}

FlatParams flatten_params(const ModelGraph& model, std::span<const std::string> layer_subset) {
  for (const auto& name : layer_subset) (void)model.index_of(name);
  return flatten_params(model.params, layer_subset);
}

void unflatten_params(ParamMap& params, const ParamLayout& layout, std::span<const double> values) {
  require(values.size() == layout.total, ErrorCode::DimensionMismatch, "flat vector length differs from layout");
  for (const auto& slot : layout.slots) {
    auto& p = params[slot.layer];
    Tensor& t = slot.role == "weight" ? p.weight : p.bias;
    t.shape = slot.shape;
    t.values.assign(values.begin() + static_cast<std::ptrdiff_t>(slot.offset),
                    values.begin() + static_cast<std::ptrdiff_t>(slot.offset + slot.length));
  }
}

namespace {

struct GraphPass {
  detail::SeqCache<double> cache;
  std::vector<double> outputs;
};

}  // namespace

BackwardResult backward(const ModelGraph& model, const Batch& batch, const LossSpec& loss) {
  require(batch.sample_shape.size() == model.input_shape.size(), ErrorCode::DimensionMismatch,
          "batch shape does not match the model input");
  const auto names = trainable_layers(model);
  BackwardResult result;
  const auto shapes = model.shapes();
  auto refs = detail::bind_params(model.params);

  FlatParams grads;
  if (!names.empty()) {
    grads = flatten_params(model.params, names);
    std::fill(grads.values.begin(), grads.values.end(), 0.0);
    for (const auto& slot : grads.layout.slots) {
      auto& ref = refs[slot.layer];
      (slot.role == "weight" ? ref.gw : ref.gb) = grads.values.data() + slot.offset;
    }
  }

  detail::SeqCache<double> cache;
  auto out = detail::forward_sequence<double>(model.layers, shapes, refs, batch.data, batch.n, &cache);
  std::vector<double> dout;
  result.loss = detail::loss_and_grad(loss, out, batch.n, shapes.back().size(), &dout);
  require(std::isfinite(result.loss), ErrorCode::NumericalError, "loss is not finite");
  if (names.empty()) return result;
  detail::backward_sequence<double>(model.layers, shapes, refs, cache, std::move(dout), batch.n, false);
  unflatten_params(result.grads, grads.layout, grads.values);
  return result;
}

void sgd_step(std::span<double> theta, std::span<const double> grad, double lr, double clip_norm) {
  require(theta.size() == grad.size(), ErrorCode::DimensionMismatch, "gradient length differs from parameters");
  double scale = lr;
  if (clip_norm > 0.0) {
    const double norm = std::sqrt(kernels::sum_squares(grad.data(), grad.size()));
    if (norm > clip_norm) scale *= clip_norm / norm;
  }
  kernels::axpy(-scale, grad.data(), theta.data(), theta.size());
}

std::vector<EpochStats> train(ModelGraph& model, const Batch& inputs, const LossSpec& loss, const SgdConfig& cfg) {
  require(inputs.n > 0, ErrorCode::InvalidInput, "training set is empty");
  require(cfg.lr > 0.0 && cfg.batch > 0, ErrorCode::InvalidInput, "learning rate and batch size must be positive");
  const auto names = trainable_layers(model);
  require(!names.empty(), ErrorCode::InvalidInput, "model has no trainable layers");
  const auto shapes = model.shapes();
  const std::size_t width = shapes.back().size();

  FlatParams theta = flatten_params(model.params, names);
  std::vector<double> grad(theta.values.size());
  // Frozen layers read straight from the model; trainable ones from theta.
  auto refs = detail::bind_params(model.params);
  detail::bind_flat<double>(refs, theta.layout, theta.values.data(), grad.data());

  std::vector<EpochStats> stats;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = permutation(cfg.shuffle.derive(epoch), inputs.n);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < inputs.n; start += cfg.batch) {
      const std::size_t stop = std::min(inputs.n, start + cfg.batch);
      std::span<const std::size_t> rows(order.data() + start, stop - start);
      const Batch b = inputs.gather(rows);
      const LossSpec l = loss.gather(rows, width);
      detail::SeqCache<double> cache;
      auto out = detail::forward_sequence<double>(model.layers, shapes, refs, b.data, b.n, &cache);
      std::vector<double> dout;
      const double value = detail::loss_and_grad(l, out, b.n, width, &dout);
      require(std::isfinite(value), ErrorCode::NumericalError, fmt::format("non-finite loss in epoch {}", epoch));
      loss_sum += value * static_cast<double>(b.n);
      if (l.kind == LossKind::softmax_cross_entropy) {
        for (std::size_t s = 0; s < b.n; ++s) {
          const auto* z = out.data() + s * width;
          const auto best = static_cast<int>(std::max_element(z, z + width) - z);
          correct += best == l.labels[s] ? 1 : 0;
        }
      }
      std::fill(grad.begin(), grad.end(), 0.0);
      detail::backward_sequence<double>(model.layers, shapes, refs, cache, std::move(dout), b.n, false);
      sgd_step(theta.values, grad, cfg.lr, cfg.clip_norm);
    }
    stats.push_back({epoch, loss_sum / static_cast<double>(inputs.n),
                     static_cast<double>(correct) / static_cast<double>(inputs.n)});
  }
  unflatten_params(model.params, theta.layout, theta.values);
  return stats;
}

std::vector<int> predict_classes(const ModelGraph& model, const Batch& inputs) {
  const auto result = forward(model, inputs);
  const std::size_t width = result.outputs.width();
  std::vector<int> labels(inputs.n);
  for (std::size_t s = 0; s < inputs.n; ++s) {
    const auto* z = result.outputs.data.data() + s * width;
    labels[s] = static_cast<int>(std::max_element(z, z + width) - z);
  }
  return labels;
}

std::string model_checksum(const ModelGraph& model) {
  std::uint64_t h = fnv1a64("smc-model");
  auto mix = [&](std::string_view bytes) { h = fnv1a64(bytes, h); };
  mix(fmt::format("{}x{}x{};head={};", model.input_shape.c, model.input_shape.h, model.input_shape.w, model.head_start));
  for (const auto& layer : model.layers) {
    mix(fmt::format("{}:{}:{}:{}:{}:{}:{};", layer.name, to_string(layer.kind), layer.block, layer.in, layer.out,
                    layer.kernel, layer.pad));
    if (!layer.has_params()) continue;
    const auto& p = model.params.at(layer.name);
    for (const auto* t : {&p.weight, &p.bias}) {
      for (double v : t->values) {
        const float f = static_cast<float>(v);
        char bytes[sizeof(float)];
        std::memcpy(bytes, &f, sizeof f);
        mix(std::string_view(bytes, sizeof bytes));
      }
    }
  }
  return fmt::format("{:016x}", h);
}

std::vector<std::string> toy_blocks() { return {"block1", "block2", "block3", "block4"}; }

ModelGraph make_toy_classifier(std::size_t n_classes, const RngStream& init) {
  std::vector<LayerSpec> layers{
      conv2d_layer("conv1", 1, 8, 3, 1, "block1"),
      relu_layer("relu1", "block1"),
      maxpool_layer("pool1", "block1"),
      conv2d_layer("conv2", 8, 16, 3, 1, "block2"),
      relu_layer("relu2", "block2"),
      maxpool_layer("pool2", "block2"),
      flatten_layer("flatten", "block2"),
      dense_layer("fc1", 144, 64, "block3"),
      relu_layer("relu3", "block3"),
      dense_layer("fc2", 64, 32, "block4"),
      relu_layer("relu4", "block4"),
      dense_layer("head", 32, n_classes),
  };
  return make_model({1, 12, 12}, std::move(layers), 11, init);
}

}  // namespace smc
