#include "pseudocam/metrics.hpp"

#include <algorithm>
#include <cstdint>
#include <cmath>
#include <limits>
#include <numeric>

#include "pseudocam/error.hpp"

namespace pseudocam {

namespace {

struct Counts {
  std::size_t pos = 0;
  std::size_t neg = 0;
};

Counts validate(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) {
    throw ValidationError("auc: " + std::to_string(scores.size()) + " scores but " + std::to_string(labels.size()) +
                          " labels");
  }
  Counts c;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == 1) {
      ++c.pos;
    } else if (labels[i] == 0) {
      ++c.neg;
    } else {
      throw ValidationError("auc: label " + std::to_string(labels[i]) + " at index " + std::to_string(i) +
                            " is not 0 or 1");
    }
    if (!std::isfinite(scores[i])) throw ValidationError("auc: non-finite score at index " + std::to_string(i));
  }
  if (c.pos == 0 || c.neg == 0) throw ValidationError("auc: needs at least one positive and one negative");
  return c;
}

// Indices ordered by descending score; equal scores keep input order.
std::vector<std::size_t> descending_order(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

}  // namespace

double auc(std::span<const double> scores, std::span<const int> labels) {
  const Counts c = validate(scores, labels);
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Twice the rank sum of the positives, with tied groups at their average
  // rank; integer arithmetic keeps the result exact.
  std::uint64_t twice_rank_sum = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    std::uint64_t group_pos = 0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      group_pos += static_cast<std::uint64_t>(labels[order[j]]);
      ++j;
    }
    // Ranks i+1 .. j average to (i + 1 + j) / 2.
    twice_rank_sum += group_pos * static_cast<std::uint64_t>(i + 1 + j);
    i = j;
  }
  const auto np = static_cast<std::uint64_t>(c.pos), nn = static_cast<std::uint64_t>(c.neg);
  const std::uint64_t twice_u = twice_rank_sum - np * (np + 1);
  return static_cast<double>(twice_u) / static_cast<double>(2 * np * nn);
}

RocCurve roc_points(std::span<const double> scores, std::span<const int> labels) {
  const Counts c = validate(scores, labels);
  const std::vector<std::size_t> order = descending_order(scores);
  RocCurve curve;
  curve.n_pos = c.pos;
  curve.n_neg = c.neg;
  curve.points.push_back({0.0, 0.0, std::numeric_limits<double>::infinity()});
  std::size_t tp = 0, fp = 0, i = 0;
  while (i < order.size()) {
    const double threshold = scores[order[i]];
    while (i < order.size() && scores[order[i]] == threshold) {
      (labels[order[i]] == 1 ? tp : fp) += 1;
      ++i;
    }
    curve.points.push_back({static_cast<double>(fp) / static_cast<double>(c.neg),
                            static_cast<double>(tp) / static_cast<double>(c.pos), threshold});
  }
  curve.auc = auc(scores, labels);
  return curve;
}

double trapezoid_area(const std::vector<RocPoint>& points) {
  double area = 0.0;
  for (std::size_t i = 1; i < points.size(); ++i) {
    area += (points[i].fpr - points[i - 1].fpr) * (points[i].tpr + points[i - 1].tpr) / 2.0;
  }
  return area;
}

}  // namespace pseudocam
