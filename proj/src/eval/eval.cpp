#include "segvggt/eval/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <string>

namespace segvggt::eval {

double iou_3d(std::span<const std::size_t> a, std::span<const std::size_t> b) {
  std::size_t inter = 0, i = 0, j = 0;
  while (i < a.size() && j < b.size()) {
    if (a[i] == b[j]) {
      ++inter;
      ++i;
      ++j;
    } else if (a[i] < b[j]) {
      ++i;
    } else {
      ++j;
    }
  }
  const std::size_t uni = a.size() + b.size() - inter;
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

double average_precision(const std::vector<InstanceSet>& predictions, const std::vector<InstanceSet>& gts,
                         double iou_threshold, int class_index, PrCurve* curve) {
  std::vector<const InstanceSet*> gt;
  for (const auto& g : gts) {
    if (g.class_index == class_index) gt.push_back(&g);
  }
  if (gt.empty()) return -1.0;
  std::vector<const InstanceSet*> pred;
  for (const auto& p : predictions) {
    if (p.class_index == class_index) pred.push_back(&p);
  }
  std::stable_sort(pred.begin(), pred.end(), [](const InstanceSet* a, const InstanceSet* b) {
    if (a->score != b->score) return a->score > b->score;
    if (a->scene != b->scene) return a->scene < b->scene;
    return a->id < b->id;
  });

  std::vector<char> taken(gt.size(), 0);
  std::vector<double> precision, recall;
  std::size_t tp = 0;
  for (std::size_t r = 0; r < pred.size(); ++r) {
    double best = -1.0;
    std::size_t best_gt = gt.size();
    for (std::size_t g = 0; g < gt.size(); ++g) {
      if (taken[g] || gt[g]->scene != pred[r]->scene) continue;
      const double iou = iou_3d(pred[r]->points, gt[g]->points);
      if (iou > best) {
        best = iou;
        best_gt = g;
      }
    }
    if (best_gt < gt.size() && best >= iou_threshold) {
      taken[best_gt] = 1;
      ++tp;
    }
    precision.push_back(static_cast<double>(tp) / static_cast<double>(r + 1));
    recall.push_back(static_cast<double>(tp) / static_cast<double>(gt.size()));
  }
  for (std::size_t r = precision.size(); r-- > 1;) precision[r - 1] = std::max(precision[r - 1], precision[r]);
  double ap = 0.0, previous_recall = 0.0;
  for (std::size_t r = 0; r < precision.size(); ++r) {
    ap += (recall[r] - previous_recall) * precision[r];
    previous_recall = recall[r];
  }
  if (curve) *curve = {precision, recall};
  return ap;
}

ApResult map_suite(const std::vector<InstanceSet>& predictions, const std::vector<InstanceSet>& gts,
                   bool class_agnostic) {
  std::vector<InstanceSet> pred = predictions, gt = gts;
  if (class_agnostic) {
    for (auto& p : pred) p.class_index = 0;
    for (auto& g : gt) g.class_index = 0;
  }
  std::set<int> classes;
  for (const auto& g : gt) classes.insert(g.class_index);

  ApResult r;
  for (int t = 0; t < 10; ++t) r.thresholds.push_back((50.0 + 5.0 * t) / 100.0);
  r.classes.assign(classes.begin(), classes.end());
  if (r.classes.empty()) return r;

  std::vector<double> threshold_means(r.thresholds.size(), 0.0);
  for (int c : r.classes) {
    std::vector<double> row;
    for (std::size_t t = 0; t < r.thresholds.size(); ++t) {
      row.push_back(average_precision(pred, gt, r.thresholds[t], c));
      threshold_means[t] += row.back();
    }
    r.per_class.push_back(row);
    r.per_class_25.push_back(average_precision(pred, gt, 0.25, c));
  }
  const double nc = static_cast<double>(r.classes.size());
  for (auto& m : threshold_means) m /= nc;
  r.map = std::accumulate(threshold_means.begin(), threshold_means.end(), 0.0) /
          static_cast<double>(threshold_means.size());
  r.map50 = threshold_means.front();
  r.map25 = std::accumulate(r.per_class_25.begin(), r.per_class_25.end(), 0.0) / nc;
  return r;
}

DepthMetrics depth_metrics(std::span<const double> pred, std::span<const double> gt) {
  if (pred.size() != gt.size()) throw std::invalid_argument("depth_metrics: length mismatch");
  std::vector<double> ratios;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (gt[i] == -1.0) continue;
    if (!(gt[i] > 0.0)) throw std::domain_error("depth_metrics: non-positive gt depth at pixel " + std::to_string(i));
    if (!(pred[i] > 0.0)) throw std::domain_error("depth_metrics: non-positive prediction at pixel " + std::to_string(i));
    ratios.push_back(gt[i] / pred[i]);
  }
  if (ratios.empty()) throw std::invalid_argument("depth_metrics: no valid pixels");
  std::vector<double> sorted = ratios;
  const std::size_t n = sorted.size(), mid = n / 2;
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<long>(mid), sorted.end());
  double median = sorted[mid];
  if (n % 2 == 0) {
    const double lower = *std::max_element(sorted.begin(), sorted.begin() + static_cast<long>(mid));
    median = 0.5 * (lower + median);
  }
  DepthMetrics m;
  m.scale = median;
  m.pixels = n;
  std::size_t good = 0;
  double abs_rel = 0.0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (gt[i] == -1.0) continue;
    const double s = median * pred[i];
    abs_rel += std::abs(s - gt[i]) / gt[i];
    good += std::max(s / gt[i], gt[i] / s) < 1.25;
  }
  m.abs_rel = abs_rel / static_cast<double>(n);
  m.delta_1_25 = static_cast<double>(good) / static_cast<double>(n);
  return m;
}

double attention_entropy(std::span<const double> p) {
  double h = 0.0;
  for (double x : p) {
    if (x < 0.0) throw std::domain_error("attention_entropy: negative probability");
    if (x > 0.0) h -= x * std::log(x);
  }
  return std::max(h, 0.0);
}

nlohmann::json report_json(const ApResult& ap) {
  nlohmann::json per_class = nlohmann::json::object();
  for (std::size_t c = 0; c < ap.classes.size(); ++c) {
    nlohmann::json row = nlohmann::json::object();
    for (std::size_t t = 0; t < ap.thresholds.size(); ++t) {
      char key[16];
      std::snprintf(key, sizeof key, "%.2f", ap.thresholds[t]);
      row[key] = ap.per_class[c][t];
    }
    row["0.25"] = ap.per_class_25[c];
    per_class[std::to_string(ap.classes[c])] = row;
  }
  return {{"mAP", ap.map}, {"mAP50", ap.map50}, {"mAP25", ap.map25}, {"per_class", per_class}};
}

}  // namespace segvggt::eval
