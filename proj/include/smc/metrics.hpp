#pragma once

#include <span>
#include <vector>

#include "smc/datagen.hpp"

namespace smc {

/// correct / total. Throws InvalidInput for empty targets and
/// DimensionMismatch for length differences.
double accuracy(std::span<const int> predicted, std::span<const int> targets);

/// Box given by corners (x1, y1, x2, y2).
struct Corners {
  double x1 = 0.0;
  double y1 = 0.0;
  double x2 = 0.0;
  double y2 = 0.0;
};

Corners to_corners(const Box& box);

/// Intersection area over union area; 0 when the union is empty.
double box_iou(const Corners& a, const Corners& b);
double box_iou(const Box& a, const Box& b);

/// IoU of one binary class over paired masks (values > 0.5 count as set).
double mask_iou(std::span<const double> predicted, std::span<const double> target);

/// Mean over {background, foreground} of the per-class IoU, with
/// intersections and unions accumulated over the whole set.
double mean_iou(std::span<const double> predicted, std::span<const double> target);

/// Fraction of predicted boxes whose IoU with the paired ground truth
/// exceeds tau.
double average_precision(std::span<const Box> predicted, std::span<const Box> target, double tau);

}  // namespace smc
