#include "smc/metrics.hpp"

#include <algorithm>

#include "smc/error.hpp"

namespace smc {
namespace {

void check_pair(std::size_t a, std::size_t b) {
  require(b > 0, ErrorCode::InvalidInput, "empty target set");
  require(a == b, ErrorCode::DimensionMismatch, "prediction and target counts differ");
}

}  // namespace

double accuracy(std::span<const int> predicted, std::span<const int> targets) {
  check_pair(predicted.size(), targets.size());
  std::size_t correct = 0;
  for (std::size_t i = 0; i < targets.size(); ++i) correct += predicted[i] == targets[i] ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(targets.size());
}

Corners to_corners(const Box& box) {
  return {box.cx - box.w / 2.0, box.cy - box.h / 2.0, box.cx + box.w / 2.0, box.cy + box.h / 2.0};
}

double box_iou(const Corners& a, const Corners& b) {
  const double iw = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
  const double ih = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
  const double inter = iw * ih;
  const double area_a = std::max(0.0, a.x2 - a.x1) * std::max(0.0, a.y2 - a.y1);
  const double area_b = std::max(0.0, b.x2 - b.x1) * std::max(0.0, b.y2 - b.y1);
  const double uni = area_a + area_b - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

double box_iou(const Box& a, const Box& b) { return box_iou(to_corners(a), to_corners(b)); }

double mask_iou(std::span<const double> predicted, std::span<const double> target) {
  check_pair(predicted.size(), target.size());
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    const bool p = predicted[i] > 0.5;
    const bool t = target[i] > 0.5;
    inter += p && t ? 1 : 0;
    uni += p || t ? 1 : 0;
  }
  return uni > 0 ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
}

double mean_iou(std::span<const double> predicted, std::span<const double> target) {
  check_pair(predicted.size(), target.size());
  std::size_t inter[2] = {0, 0}, uni[2] = {0, 0};
  for (std::size_t i = 0; i < target.size(); ++i) {
    const int p = predicted[i] > 0.5 ? 1 : 0;
    const int t = target[i] > 0.5 ? 1 : 0;
    for (int c = 0; c < 2; ++c) {
      inter[c] += (p == c && t == c) ? 1 : 0;
      uni[c] += (p == c || t == c) ? 1 : 0;
    }
  }
  double sum = 0.0;
  int classes = 0;
  for (int c = 0; c < 2; ++c) {
    if (uni[c] == 0) continue;
    sum += static_cast<double>(inter[c]) / static_cast<double>(uni[c]);
    ++classes;
  }
  return sum / classes;
}

double average_precision(std::span<const Box> predicted, std::span<const Box> target, double tau) {
  check_pair(predicted.size(), target.size());
  std::size_t hits = 0;
  for (std::size_t i = 0; i < target.size(); ++i) hits += box_iou(predicted[i], target[i]) > tau ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(target.size());
}

}  // namespace smc
