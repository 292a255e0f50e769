#pragma once

#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "segvggt/fada/fada.hpp"
#include "segvggt/numerics/tensor.hpp"

namespace segvggt::assign {

using numerics::Tensor;

class CapacityError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class DegenerateSupervision : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct LossWeights {
  double camera = 5.0;
  double depth = 1.0;
  double cls = 0.5;
  double mask = 1.0;
  double js = 0.5;
  double no_object = 0.1;  // cross-entropy weight of unmatched queries
};

// Multi-view masks are flattened view-major, row-major within a view.
std::vector<double> flatten_masks(const std::vector<std::vector<double>>& views, std::size_t height,
                                  std::size_t width);
std::vector<std::vector<double>> unflatten_masks(std::span<const double> flat, std::size_t views,
                                                 std::size_t height, std::size_t width);

/// Mean binary cross-entropy of probabilities with a 1e-300 log floor.
double bce(std::span<const double> m, std::span<const double> gt);
/// 1 - (2 sum(m gt) + 1) / (sum(m) + sum(gt) + 1).
double dice(std::span<const double> m, std::span<const double> gt);

/// Row-wise BCE and Dice of sigmoid(logits) [R x P] against constant targets
/// (R*P values); results [R], differentiable in the logits.
Tensor bce_rows(const Tensor& logits, std::span<const double> gt);
Tensor dice_rows(const Tensor& logits, std::span<const double> gt);

struct CostMatrix {
  std::size_t queries = 0;
  std::size_t instances = 0;
  // Row-major [queries x instances] components.
  std::vector<double> cls;   // softmax probability of the gt class
  std::vector<double> bce;
  std::vector<double> dice;
  std::vector<double> js;    // zero when alignment costs are off
  std::vector<double> total;

  double at(std::size_t j, std::size_t k) const { return total[j * instances + k]; }
};

/// C = -w.cls * p(class) + w.mask * (bce + dice) + w.js * js.
/// class_probs [O x (C+1)], masks [O x P] probabilities, gt_masks [G x P].
CostMatrix match_cost(std::span<const double> class_probs, std::size_t num_classes,
                      std::span<const double> masks, std::span<const int> gt_classes,
                      std::span<const double> gt_masks, const fada::FadaCostBlock* js,
                      const LossWeights& weights);

struct Assignment {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (query, instance), ascending query
  double cost = 0.0;
};

/// Minimum-cost matching of every instance (column) to a distinct query (row)
/// of a row-major [rows x cols] matrix. Among optimal matchings the
/// lexicographically smallest pair sequence is returned.
Assignment hungarian(std::span<const double> cost, std::size_t rows, std::size_t cols);
Assignment hungarian(const CostMatrix& c);

struct InstanceLoss {
  Tensor total;
  Tensor cls, bce, dice;
};

/// class_logits [O x (C+1)], mask_logits [O x P]; unmatched queries target the
/// no-object class. Mask terms average over matched pairs.
InstanceLoss instance_loss(const Assignment& matches, const Tensor& class_logits,
                           const Tensor& mask_logits, std::span<const int> gt_classes,
                           std::span<const double> gt_masks, const LossWeights& weights);

struct GeometryLoss {
  Tensor total;
  Tensor camera, depth;
};

/// cameras [N x 9] vs gt N*9; depth [N x HW] vs gt N*HW with -1 marking
/// invalid pixels.
GeometryLoss geometry_loss(const Tensor& cameras, std::span<const double> gt_cameras,
                           const Tensor& depth, std::span<const double> gt_depth,
                           const LossWeights& weights);

/// L_geo + L_inst + w.js * L_js.
Tensor total_loss(const Tensor& geometry, const Tensor& instance, const Tensor& alignment,
                  const LossWeights& weights);

}  // namespace segvggt::assign
