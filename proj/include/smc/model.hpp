#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "smc/linalg.hpp"
#include "smc/rng.hpp"

namespace smc {

enum class LayerKind { dense, conv2d, relu, maxpool2x2, flatten, concat_channels };

std::string_view to_string(LayerKind kind);
LayerKind layer_kind_from_string(std::string_view name);

/// Per-sample activation shape (channels, height, width). Flat vectors use
/// h = w = 1.
struct Shape {
  std::size_t c = 1;
  std::size_t h = 1;
  std::size_t w = 1;

  std::size_t size() const { return c * h * w; }
  friend bool operator==(const Shape&, const Shape&) = default;
};

struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  std::string name;
  /// Split-candidate group the layer belongs to; empty for head layers.
  std::string block;
  std::size_t in = 0;      // dense: input features, conv2d: input channels
  std::size_t out = 0;     // dense: output features, conv2d: output channels
  std::size_t kernel = 0;  // conv2d only
  std::size_t pad = 0;     // conv2d only

  bool has_params() const { return kind == LayerKind::dense || kind == LayerKind::conv2d; }
  std::size_t weight_count() const;
  std::size_t bias_count() const;

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

LayerSpec dense_layer(std::string name, std::size_t in, std::size_t out, std::string block = {});
LayerSpec conv2d_layer(std::string name, std::size_t in_ch, std::size_t out_ch, std::size_t kernel, std::size_t pad,
                       std::string block = {});
LayerSpec relu_layer(std::string name, std::string block = {});
LayerSpec maxpool_layer(std::string name, std::string block = {});
LayerSpec flatten_layer(std::string name, std::string block = {});

/// Output shape of a single layer; throws DimensionMismatch when the input
/// does not fit the spec.
Shape layer_output_shape(const LayerSpec& spec, const Shape& in);

struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> values;

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

struct LayerParams {
  Tensor weight;
  Tensor bias;

  friend bool operator==(const LayerParams&, const LayerParams&) = default;
};

using ParamMap = std::map<std::string, LayerParams>;

/// Sequential network: feature extractor layers [0, head_start) followed by
/// the task head [head_start, size).
struct ModelGraph {
  Shape input_shape;
  std::vector<LayerSpec> layers;
  ParamMap params;
  std::map<std::string, bool> trainable;
  std::size_t head_start = 0;

  /// shapes()[i] is the input of layer i; shapes().back() is the output.
  std::vector<Shape> shapes() const;
  Shape output_shape() const;
  std::size_t index_of(std::string_view layer_name) const;
  bool is_trainable(const std::string& layer_name) const;
  std::size_t parameter_count() const;
  /// Checks names, shapes and parameter tensors; throws on the first problem.
  void validate() const;

  friend bool operator==(const ModelGraph&, const ModelGraph&) = default;
};

/// Builds a graph and draws Kaiming-uniform weights (bound sqrt(6 / fan_in),
/// zero bias) from the given stream. All layers start trainable.
ModelGraph make_model(Shape input_shape, std::vector<LayerSpec> layers, std::size_t head_start, const RngStream& init);

/// Kaiming-uniform parameters for one layer.
LayerParams init_layer_params(const LayerSpec& spec, const RngStream& init);

void set_trainable(ModelGraph& model, std::span<const std::string> layer_names, bool trainable);

/// Rounds every parameter to the nearest 32-bit float (the wire precision).
void round_params_to_f32(ParamMap& params);

/// A batch of n samples, row-major, sample_shape.size() values per sample.
struct Batch {
  Shape sample_shape;
  std::size_t n = 0;
  std::vector<double> data;

  std::size_t width() const { return sample_shape.size(); }
  std::span<const double> sample(std::size_t i) const { return {data.data() + i * width(), width()}; }
  Batch gather(std::span<const std::size_t> rows) const;
};

/// Output of one layer over a dataset: neurons × samples.
struct ActivationRecord {
  std::string layer_name;
  Matrix values;
};

struct ForwardResult {
  Batch outputs;
  std::vector<ActivationRecord> records;
};

ForwardResult forward(const ModelGraph& model, const Batch& batch, std::span<const std::string> capture = {});

enum class LossKind {
  softmax_cross_entropy,  // labels: class index per sample; mean over samples
  sigmoid_cross_entropy,  // targets in [0,1] per output; mean over all outputs
  mean_squared,           // targets per output; mean over all outputs
  linear,                 // targets are weights: loss = Σ targets·outputs
};

struct LossSpec {
  LossKind kind = LossKind::softmax_cross_entropy;
  std::vector<int> labels;
  std::vector<double> targets;

  /// Restriction to the given sample rows (width = outputs per sample).
  LossSpec gather(std::span<const std::size_t> rows, std::size_t width) const;
};

LossSpec classification_loss(std::vector<int> labels);

struct BackwardResult {
  double loss = 0.0;
  /// Only trainable layers appear.
  ParamMap grads;
};

/// Loss and parameter gradients of the trainable layers. Throws
/// NumericalError when the loss is not finite.
BackwardResult backward(const ModelGraph& model, const Batch& batch, const LossSpec& loss);

struct TensorSlot {
  std::string layer;
  std::string role;  // "weight" or "bias"
  std::vector<std::size_t> shape;
  std::size_t offset = 0;
  std::size_t length = 0;

  friend bool operator==(const TensorSlot&, const TensorSlot&) = default;
};

struct ParamLayout {
  std::vector<TensorSlot> slots;
  std::size_t total = 0;

  friend bool operator==(const ParamLayout&, const ParamLayout&) = default;
};

struct FlatParams {
  std::vector<double> values;
  ParamLayout layout;
};

/// Concatenates weight then bias of each named layer, in the given order.
/// Throws NotFound for an unknown name and InvalidInput for an empty subset.
FlatParams flatten_params(const ParamMap& params, std::span<const std::string> layer_subset);
FlatParams flatten_params(const ModelGraph& model, std::span<const std::string> layer_subset);
void unflatten_params(ParamMap& params, const ParamLayout& layout, std::span<const double> values);

/// Names of trainable parametrised layers in network order.
std::vector<std::string> trainable_layers(const ModelGraph& model);

struct SgdConfig {
  double lr = 0.05;
  double clip_norm = 5.0;  // <= 0 disables clipping
  std::size_t batch = 32;
  std::size_t epochs = 20;
  RngStream shuffle{0, 0};
};

/// Clips the gradient to clip_norm (global L2) and applies θ -= lr·g.
void sgd_step(std::span<double> theta, std::span<const double> grad, double lr, double clip_norm);

struct EpochStats {
  std::size_t epoch = 0;
  double loss = 0.0;
  double accuracy = 0.0;
};

/// Mini-batch SGD on the trainable layers; shuffle order per epoch comes from
/// cfg.shuffle. Accuracy is reported only for softmax losses.
std::vector<EpochStats> train(ModelGraph& model, const Batch& inputs, const LossSpec& loss, const SgdConfig& cfg);

/// Arg-max class per sample.
std::vector<int> predict_classes(const ModelGraph& model, const Batch& inputs);

/// Hash of layer specs and 32-bit-rounded parameters, as 16 hex digits.
std::string model_checksum(const ModelGraph& model);

/// The toy classifier used across the toolkit: two conv blocks and two dense
/// blocks over 12×12 single-channel images, then a dense head.
ModelGraph make_toy_classifier(std::size_t n_classes, const RngStream& init);

/// Candidate split blocks of the toy classifier, in depth order.
std::vector<std::string> toy_blocks();

}  // namespace smc
