#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "smc/datagen.hpp"
#include "smc/model.hpp"
#include "smc/svcca.hpp"

namespace smc {

enum class SmcVariant { incremental, cross_task, cross_domain };
enum class TaskKind { classification, segmentation, detection };
enum class PenaltyMode { analytic, finite_diff };

std::string_view to_string(SmcVariant v);
SmcVariant smc_variant_from_string(std::string_view name);
std::string_view to_string(TaskKind t);
TaskKind task_kind_from_string(std::string_view name);
std::string_view to_string(PenaltyMode m);
PenaltyMode penalty_mode_from_string(std::string_view name);

struct SmcKind {
  SmcVariant variant = SmcVariant::incremental;
  std::vector<int> old_classes;  // the base model's classes, in logit order
  std::vector<int> new_classes;  // incremental only
  TaskKind task = TaskKind::classification;
  Domain domain = Domain::A;

  /// Catalog ids in the order of the new head's logits (classification).
  std::vector<int> class_order() const;
  friend bool operator==(const SmcKind&, const SmcKind&) = default;
};

/// Base model with a frozen split and the trainable expansion: a copy of the
/// special extractor running beside the original, whose features are
/// concatenated with the original ones and fed to a new head.
struct ExpandedModel {
  ModelGraph base;
  SplitPlan split;
  SmcKind kind;
  std::string base_checksum;
  std::vector<LayerSpec> phi_s_new;
  std::vector<LayerSpec> head_new;
  ParamMap params;  // tensors of phi_s_new and head_new only
  double lambda = 0.0;
  double beta = 0.0;

  /// Names of the transmitted layers with parameters, in network order.
  std::vector<std::string> component_layers() const;
  std::size_t trainable_parameter_count() const;
  Shape split_shape() const;      // output of the generalized extractor
  std::size_t feature_width() const;  // width of one special-extractor output
  std::size_t output_width() const;
};

/// Suffix appended to the names of copied special-extractor layers.
inline constexpr std::string_view kNewSuffix = "_new";

/// Throws DimensionMismatch when the head cannot sit on the concatenated
/// features and InvalidInput for inconsistent kinds.
ExpandedModel build_expanded(const ModelGraph& base, const SplitPlan& split, const SmcKind& kind, const RngStream& init);

struct TrainConfig {
  double lambda = 0.01;
  double beta = 0.0;
  double lr = 0.05;
  std::size_t epochs = 20;
  std::size_t batch = 32;
  std::uint64_t seed = 0;
  double semantic_cap = 10.0;
  double clip_norm = 5.0;
  PenaltyMode penalty_mode = PenaltyMode::analytic;
  /// Repeat rehearsal samples so old classes appear about as often per epoch
  /// as new ones.
  bool balance_memory = true;
};

struct SmcEpochStats {
  std::size_t epoch = 0;
  double loss = 0.0;
  double ce = 0.0;
  double semdist = 0.0;
  double metric = 0.0;  // training accuracy for classification, 0 otherwise
};

/// Frozen activations of a dataset: the generalized-extractor output and the
/// original special-extractor output, each row-major per sample.
struct FrozenFeatures {
  std::size_t n = 0;
  std::vector<double> g;
  std::vector<double> f_old;
};

FrozenFeatures frozen_features(const ExpandedModel& em, const Batch& inputs);

/// Targets of the new head for a dataset (labels for classification, masks
/// for segmentation, normalised boxes for detection).
LossSpec task_loss(const ExpandedModel& em, const ShapeDataset& ds);

/// Trains phi_s_new and head_new on new_data (plus memory for incremental
/// kinds), then rounds them to 32-bit precision. The loss is
/// CE − λ·min(d, cap) + β·‖∇CE‖ where d is the distance between batch means
/// of L2-normalised new and old special features.
std::vector<SmcEpochStats> train_smc(ExpandedModel& em, const ShapeDataset& new_data, const RehearsalMemory& memory,
                                     const TrainConfig& cfg);

/// Feature semantic distance over a batch of features (n × width each).
double semantic_distance(std::span<const double> f_new, std::span<const double> f_old, std::size_t n, std::size_t width);

/// Outputs of the expanded model (n × output_width).
Batch expanded_forward(const ExpandedModel& em, const Batch& inputs);
Batch expanded_forward(const ExpandedModel& em, const FrozenFeatures& features);

std::vector<int> predict_labels(const ExpandedModel& em, const Batch& inputs);  // catalog ids
std::vector<double> predict_masks(const ExpandedModel& em, const Batch& inputs);  // n × 144, 0/1
std::vector<Box> predict_boxes(const ExpandedModel& em, const Batch& inputs);

/// Accuracy, mIoU or AP50 on a dataset according to the head's task.
double evaluate(const ExpandedModel& em, const ShapeDataset& ds);
/// Accuracy of a plain classifier whose logits follow class_order.
double evaluate_classifier(const ModelGraph& model, std::span<const int> class_order, const ShapeDataset& ds);

/// Transmitted payload of a component.
struct SmcPackage {
  SmcKind kind;
  std::string split_candidate;
  std::string split_layer;
  double lambda = 0.0;
  double beta = 0.0;
  std::string base_checksum;
  std::vector<LayerSpec> phi_s_new;
  std::vector<LayerSpec> head_new;
  ParamMap params;

  friend bool operator==(const SmcPackage&, const SmcPackage&) = default;
};

SmcPackage extract_smc(const ExpandedModel& em);

/// Rebuilds the expanded model on top of a base. Throws BaseModelMismatch
/// when checksums differ (unless force) and DimensionMismatch when the
/// layers do not fit the base.
ExpandedModel apply_smc(const ModelGraph& base, const SmcPackage& pkg, bool force = false);

/// Flat view of the component tensors (phi_s_new then head_new).
FlatParams component_params(const ExpandedModel& em);
void set_component_params(ExpandedModel& em, const FlatParams& flat);

}  // namespace smc
