#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "smc/model.hpp"

namespace smc {

inline constexpr std::size_t kImageSide = 12;
inline constexpr std::size_t kImagePixels = kImageSide * kImageSide;

/// The shape catalog; a class id is an index into it.
inline constexpr std::array<std::string_view, 10> kShapeCatalog{
    "square", "circle", "triangle", "cross", "bar-h", "bar-v", "L", "T", "diamond", "ring"};

int shape_class_id(std::string_view name);

enum class Domain { A, B };

std::string_view to_string(Domain domain);
Domain domain_from_string(std::string_view name);

/// Axis-aligned box: centre and size in pixel units. The pixel (x, y) covers
/// [x, x+1) × [y, y+1).
struct Box {
  double cx = 0.0;
  double cy = 0.0;
  double w = 0.0;
  double h = 0.0;

  friend bool operator==(const Box&, const Box&) = default;
};

struct ShapeDataset {
  std::vector<int> classes;  // catalog ids requested, in order
  Domain domain = Domain::A;
  std::uint64_t seed = 0;
  std::size_t n = 0;
  std::vector<double> images;  // n × 144, values in [0, 1]
  std::vector<int> labels;     // catalog id per sample
  std::vector<double> masks;   // n × 144, 0 or 1
  std::vector<Box> boxes;

  std::span<const double> image(std::size_t i) const { return {images.data() + i * kImagePixels, kImagePixels}; }
  std::span<const double> mask(std::size_t i) const { return {masks.data() + i * kImagePixels, kImagePixels}; }
  Batch batch() const;
  ShapeDataset subset(std::span<const std::size_t> rows) const;
};

struct ShapeSample {
  std::array<double, kImagePixels> image{};
  std::array<double, kImagePixels> mask{};
  Box box;
};

/// One sample as a pure function of (seed, class, per-class index, domain).
ShapeSample render_sample(int class_id, std::size_t index, Domain domain, std::uint64_t seed);

/// n_per_class samples of every class, interleaved class by class
/// (sample i has class classes[i % classes.size()]). Throws InvalidInput for
/// an unknown class or n_per_class == 0.
ShapeDataset generate(const std::vector<int>& classes, std::size_t n_per_class, Domain domain, std::uint64_t seed);

struct RehearsalMemory {
  std::vector<double> images;  // k × 144
  std::vector<int> labels;     // catalog ids
  std::size_t capacity = 0;
  std::uint64_t seed = 0;

  std::size_t size() const { return labels.size(); }
};

/// Per-class uniform sample without replacement; quotas are balanced within
/// one and spill over when a class runs out. Throws InvalidInput when the
/// capacity cannot cover every class.
RehearsalMemory split_rehearsal(const ShapeDataset& ds, std::size_t capacity, std::uint64_t seed);

/// Position of each catalog id in `class_order` (the logit index).
std::vector<int> map_labels(std::span<const int> catalog_labels, std::span<const int> class_order);

}  // namespace smc
