#pragma once

#include <vector>

#include "segvggt/model/layers.hpp"

namespace segvggt::model {

/// One input view: H x W x 3 interleaved RGB in [0, 1].
using Image = std::vector<double>;

/// Wall-clock seconds spent per forward stage (filled when requested).
struct StageTimes {
  double embed = 0.0;
  double aggregator = 0.0;
  double heads = 0.0;
};

struct ForwardOptions {
  /// Keep frame/global/query self-attention maps for inspection.
  bool keep_self_attention = false;
  StageTimes* times = nullptr;
};

struct ModelOutputs {
  std::size_t views = 0;
  Tensor cameras;       // [N x 9]: unit quaternion (w first), translation, fov in (0, pi)
  Tensor depth;         // [N x H*W], row-major pixels, strictly positive
  Tensor features;      // [N*(H/2)*(W/2) x d], view-major then row-major pixels
  Tensor queries;       // final queries [O x d]
  Tensor class_logits;  // [O x (C+1)], column C is no-object
  Tensor mask_logits;   // [O x N*(H/2)*(W/2)], flattened like `features`
  /// Per layer, the head-averaged cross-attention rows [O x N*(K+5)].
  std::vector<Tensor> cross_attention;
  /// Token offsets of each view, N + 1 entries.
  std::vector<std::size_t> view_boundaries;

  std::vector<Tensor> frame_attention;   // per layer and view [heads x n x n]
  std::vector<Tensor> global_attention;  // per layer [heads x M x M]
  std::vector<Tensor> query_attention;   // per layer [heads x O x O]
};

class Model {
 public:
  explicit Model(const ModelConfig& config);
  Model(const ModelConfig& config, ParamStore params);

  const ModelConfig& config() const { return config_; }
  const ParamStore& params() const { return params_; }
  ParamStore& mutable_params() { return params_; }

  /// Requires N >= 2 images at the configured resolution.
  ModelOutputs forward(const std::vector<Image>& images, const ForwardOptions& options = {}) const;

  /// Token matrix T^(0) [N*(K+5) x d]; per view: camera token, registers, patches.
  Tensor embed(const std::vector<Image>& images) const;

  /// Heads applied to normalized final tokens.
  Tensor camera_head(const Tensor& camera_tokens) const;  // [N x d] -> [N x 9]
  Tensor depth_head(const Tensor& patch_tokens) const;    // [N*K x d] -> [N x H*W]
  Tensor feature_head(const Tensor& patch_tokens) const;  // [N*K x d] -> [N*hw x d]
  Tensor classify(const Tensor& queries) const;           // [O x d] -> [O x (C+1)]

 private:
  void check_images(const std::vector<Image>& images, std::size_t min_views) const;

  ModelConfig config_;
  ParamStore params_;
  std::vector<std::size_t> depth_order_;    // pixel -> (patch, offset) entry, one view
  std::vector<std::size_t> feature_order_;  // mask pixel -> (patch, sub-pixel) row, one view
};

/// sigmoid(q . F) for every spatial feature row: q [d] or [O x d], F [P x d].
Tensor mask_probability(const Tensor& query, const Tensor& features);

}  // namespace segvggt::model
