#include "smc/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>

#include "smc/error.hpp"
#include "smc/rng.hpp"

namespace smc {
namespace {

constexpr std::uint64_t kDomainBit = 1ULL << 63;
constexpr std::size_t kMinSize = 6;
constexpr std::size_t kMaxSize = 10;

// Whether local pixel (u, v) of an s×s frame belongs to the shape.
bool inside(int class_id, int u, int v, int s) {
  const double c = (s - 1) / 2.0;
  const double du = u - c;
  const double dv = v - c;
  const int t = std::max(2, s / 3);  // stroke thickness
  const int lo = (s - t) / 2;        // start of a centred stroke
  const bool mid_col = u >= lo && u < lo + t;
  const bool mid_row = v >= lo && v < lo + t;
  switch (class_id) {
    case 0:  // square
      return true;
    case 1: {  // circle
      const double r = s / 2.0;
      return du * du + dv * dv <= r * r * 0.92;
    }
    case 2:  // triangle, apex at the top
      return std::abs(du) <= (v + 1) * 0.5;
    case 3:  // cross
      return mid_col || mid_row;
    case 4:  // bar-h
      return mid_row;
    case 5:  // bar-v
      return mid_col;
    case 6:  // L
      return u < t || v >= s - t;
    case 7:  // T
      return v < t || mid_col;
    case 8:  // diamond
      return std::abs(du) + std::abs(dv) <= s / 2.0;
    case 9: {  // ring
      const double r = s / 2.0;
      const double d2 = du * du + dv * dv;
      const double inner = std::max(r - 2.0, 0.5);
      return d2 <= r * r * 0.92 && d2 > inner * inner;
    }
    default:
      return false;
  }
}

void require_class(int class_id) {
  require(class_id >= 0 && class_id < static_cast<int>(kShapeCatalog.size()), ErrorCode::InvalidInput,
          fmt::format("unknown shape class {}", class_id));
}

}  // namespace

int shape_class_id(std::string_view name) {
  for (std::size_t i = 0; i < kShapeCatalog.size(); ++i)
    if (kShapeCatalog[i] == name) return static_cast<int>(i);
  fail(ErrorCode::InvalidInput, fmt::format("unknown shape '{}'", name));
}

std::string_view to_string(Domain domain) { return domain == Domain::A ? "A" : "B"; }

Domain domain_from_string(std::string_view name) {
  if (name == "A" || name == "a") return Domain::A;
  if (name == "B" || name == "b") return Domain::B;
  fail(ErrorCode::InvalidInput, fmt::format("unknown domain '{}'", name));
}

ShapeSample render_sample(int class_id, std::size_t index, Domain domain, std::uint64_t seed) {
  require_class(class_id);
  std::uint64_t stream = (static_cast<std::uint64_t>(class_id) << 32) + index;
  if (domain == Domain::B) stream ^= kDomainBit;
  Generator gen(RngStream{seed, stream});

  const auto s = static_cast<int>(kMinSize + gen.uniform_below(kMaxSize - kMinSize + 1));
  const auto x0 = static_cast<int>(gen.uniform_below(kImageSide - static_cast<std::size_t>(s) + 1));
  const auto y0 = static_cast<int>(gen.uniform_below(kImageSide - static_cast<std::size_t>(s) + 1));
  const double ink = 0.75 + 0.25 * gen.uniform();

  ShapeSample out;
  int xmin = kImageSide, ymin = kImageSide, xmax = -1, ymax = -1;
  for (int v = 0; v < s; ++v) {
    for (int u = 0; u < s; ++u) {
      if (!inside(class_id, u, v, s)) continue;
      const int x = x0 + u;
      const int y = y0 + v;
      out.mask[static_cast<std::size_t>(y) * kImageSide + static_cast<std::size_t>(x)] = 1.0;
      xmin = std::min(xmin, x);
      xmax = std::max(xmax, x);
      ymin = std::min(ymin, y);
      ymax = std::max(ymax, y);
    }
  }
  for (std::size_t p = 0; p < kImagePixels; ++p) {
    if (domain == Domain::A) {
      out.image[p] = out.mask[p] * ink;
    } else {
      const double background = 1.0 - 0.3 * gen.uniform();
      out.image[p] = out.mask[p] > 0.0 ? 0.0 : background;
    }
  }
  out.box = {(xmin + xmax + 1) / 2.0, (ymin + ymax + 1) / 2.0, static_cast<double>(xmax + 1 - xmin),
             static_cast<double>(ymax + 1 - ymin)};
  return out;
}

ShapeDataset generate(const std::vector<int>& classes, std::size_t n_per_class, Domain domain, std::uint64_t seed) {
  require(!classes.empty(), ErrorCode::InvalidInput, "no classes requested");
  require(n_per_class >= 1, ErrorCode::InvalidInput, "n_per_class must be at least 1");
  for (int c : classes) require_class(c);
  ShapeDataset ds;
  ds.classes = classes;
  ds.domain = domain;
  ds.seed = seed;
  ds.n = classes.size() * n_per_class;
  ds.images.resize(ds.n * kImagePixels);
  ds.masks.resize(ds.n * kImagePixels);
  ds.labels.resize(ds.n);
  ds.boxes.resize(ds.n);
  for (std::size_t i = 0; i < ds.n; ++i) {
    const int c = classes[i % classes.size()];
    const ShapeSample sample = render_sample(c, i / classes.size(), domain, seed);
    std::copy(sample.image.begin(), sample.image.end(), ds.images.begin() + static_cast<std::ptrdiff_t>(i * kImagePixels));
    std::copy(sample.mask.begin(), sample.mask.end(), ds.masks.begin() + static_cast<std::ptrdiff_t>(i * kImagePixels));
    ds.labels[i] = c;
    ds.boxes[i] = sample.box;
  }
  return ds;
}

Batch ShapeDataset::batch() const { return {{1, kImageSide, kImageSide}, n, images}; }

ShapeDataset ShapeDataset::subset(std::span<const std::size_t> rows) const {
  ShapeDataset out;
  out.classes = classes;
  out.domain = domain;
  out.seed = seed;
  out.n = rows.size();
  for (auto r : rows) {
    require(r < n, ErrorCode::InvalidInput, "subset row out of range");
    auto img = image(r);
    auto msk = mask(r);
    out.images.insert(out.images.end(), img.begin(), img.end());
    out.masks.insert(out.masks.end(), msk.begin(), msk.end());
    out.labels.push_back(labels[r]);
    out.boxes.push_back(boxes[r]);
  }
  return out;
}

RehearsalMemory split_rehearsal(const ShapeDataset& ds, std::size_t capacity, std::uint64_t seed) {
  std::vector<int> present;
  for (int c : ds.labels)
    if (std::find(present.begin(), present.end(), c) == present.end()) present.push_back(c);
  std::sort(present.begin(), present.end());
  require(!present.empty(), ErrorCode::InvalidInput, "dataset is empty");
  require(capacity >= present.size(), ErrorCode::InvalidInput,
          fmt::format("capacity {} cannot cover {} classes", capacity, present.size()));

  // Per-class candidate order: a seeded permutation of that class's rows.
  std::vector<std::vector<std::size_t>> pools;
  for (int c : present) {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < ds.n; ++i)
      if (ds.labels[i] == c) rows.push_back(i);
    const auto order = permutation(RngStream{seed, 0}.derive(static_cast<std::uint64_t>(c)), rows.size());
    std::vector<std::size_t> pool;
    for (auto o : order) pool.push_back(rows[o]);
    pools.push_back(std::move(pool));
  }

  // Round-robin fill keeps quotas within one and spills over when a class runs dry.
  std::vector<std::size_t> taken(pools.size(), 0);
  std::vector<std::size_t> chosen;
  while (chosen.size() < capacity) {
    bool progressed = false;
    for (std::size_t k = 0; k < pools.size() && chosen.size() < capacity; ++k) {
      if (taken[k] >= pools[k].size()) continue;
      chosen.push_back(pools[k][taken[k]++]);
      progressed = true;
    }
    if (!progressed) break;
  }
  std::sort(chosen.begin(), chosen.end());

  RehearsalMemory mem;
  mem.capacity = capacity;
  mem.seed = seed;
  for (auto r : chosen) {
    auto img = ds.image(r);
    mem.images.insert(mem.images.end(), img.begin(), img.end());
    mem.labels.push_back(ds.labels[r]);
  }
  return mem;
}

std::vector<int> map_labels(std::span<const int> catalog_labels, std::span<const int> class_order) {
  std::vector<int> out;
  out.reserve(catalog_labels.size());
  for (int c : catalog_labels) {
    auto it = std::find(class_order.begin(), class_order.end(), c);
    require(it != class_order.end(), ErrorCode::InvalidInput, fmt::format("class {} is not in the label set", c));
    out.push_back(static_cast<int>(it - class_order.begin()));
  }
  return out;
}

}  // namespace smc
