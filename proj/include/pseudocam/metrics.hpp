#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace pseudocam {

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
  double threshold = 0.0;  // scores >= threshold are called positive
};

struct RocCurve {
  std::vector<RocPoint> points;  // (0, 0) first, (1, 1) last
  double auc = 0.0;
  std::size_t n_pos = 0;
  std::size_t n_neg = 0;
};

// Mann-Whitney AUC: the fraction of (positive, negative) pairs ranked
// correctly, ties worth one half. Sort-based, O(n log n). Labels are 0 or 1.
double auc(std::span<const double> scores, std::span<const int> labels);

// Thresholds swept over distinct scores, highest first.
RocCurve roc_points(std::span<const double> scores, std::span<const int> labels);

// Trapezoidal area under the curve's points.
double trapezoid_area(const std::vector<RocPoint>& points);

}  // namespace pseudocam
