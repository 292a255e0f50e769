#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include <json.hpp>

namespace segvggt::eval {

/// |A n B| / |A u B| of sorted, duplicate-free index sets; 0 for two empty sets.
double iou_3d(std::span<const std::size_t> a, std::span<const std::size_t> b);

/// A predicted or ground-truth instance as a set of reference-cloud point ids.
/// Instances of different scenes never overlap.
struct InstanceSet {
  std::size_t scene = 0;
  std::size_t id = 0;      // tie-break key among equal scores
  int class_index = 0;
  double score = 1.0;      // ignored for ground truth
  std::vector<std::size_t> points;  // sorted
};

struct PrCurve {
  std::vector<double> precision;
  std::vector<double> recall;
};

/// AP of one class at one IoU threshold: predictions in descending score
/// (ascending id on ties) greedily take the unmatched same-class gt of highest
/// IoU when it reaches the threshold; the area under the right-to-left
/// monotone precision envelope is summed over recall steps. Returns -1 when the
/// class has no ground truth.
double average_precision(const std::vector<InstanceSet>& predictions, const std::vector<InstanceSet>& gts,
                         double iou_threshold, int class_index, PrCurve* curve = nullptr);

struct ApResult {
  std::vector<double> thresholds;            // 0.50, 0.55, ..., 0.95
  std::vector<int> classes;                  // classes with ground truth
  std::vector<std::vector<double>> per_class;  // [class][threshold]
  std::vector<double> per_class_25;          // AP at 0.25 per class
  double map = 0.0;
  double map50 = 0.0;
  double map25 = 0.0;
};

/// Class means at each threshold, then the mean over thresholds. With
/// class_agnostic every instance is treated as one class.
ApResult map_suite(const std::vector<InstanceSet>& predictions, const std::vector<InstanceSet>& gts,
                   bool class_agnostic = false);

struct DepthMetrics {
  double abs_rel = 0.0;
  double delta_1_25 = 0.0;
  double scale = 1.0;
  std::size_t pixels = 0;
};

/// One median-ratio scale for the whole sequence. Entries with gt equal to the
/// -1 sentinel are skipped; any other non-positive value is a domain error.
DepthMetrics depth_metrics(std::span<const double> pred, std::span<const double> gt);

/// Shannon entropy in nats with 0 log 0 = 0.
double attention_entropy(std::span<const double> p);

inline constexpr int kReportSchemaVersion = 1;
nlohmann::json report_json(const ApResult& ap);

}  // namespace segvggt::eval
