#pragma once

#include <cstdint>
#include <vector>

#include "segvggt/eval/eval.hpp"
#include "segvggt/train/train.hpp"

namespace segvggt::train {

/// Parameters of a synthetic benchmark split.
struct BenchmarkSpec {
  std::size_t scenes = 20;
  std::size_t views = 4;
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t min_objects = 3;
  std::size_t max_objects = 6;
  std::uint64_t seed = 0;

  void validate() const;
};

BenchmarkSpec default_train_split();
BenchmarkSpec default_eval_split();  // 5 scenes from a disjoint seed range

/// Scene s uses layout seed `seed + s`; its object count is drawn from a
/// generator seeded with `seed`.
std::vector<scenegen::SceneRecord> generate_benchmark(const BenchmarkSpec& spec);

struct ScoringOptions {
  bool superpoints = false;
  double voxel = 0.25;
  double visibility_eps = recon::kDefaultVisibilityEps;
};

/// Instances of one scene as sets of reference-cloud points. The reference
/// cloud is unprojected from the mask-resolution gt rasters; predictions reach
/// it through their 2D masks and the gt cameras.
struct SceneInstances {
  std::vector<eval::InstanceSet> predictions;
  std::vector<eval::InstanceSet> gts;
  std::size_t reference_points = 0;
  std::size_t invisible_points = 0;
};

SceneInstances score_scene(const scenegen::SceneRecord& scene,
                           const std::vector<recon::InstancePrediction>& predictions,
                           const ScoringOptions& options = {});

struct EvalSummary {
  eval::ApResult ap;
  eval::ApResult ap_agnostic;
  double abs_rel = 0.0;     // mean over scenes
  double delta_1_25 = 0.0;  // mean over scenes
  /// Mean entropy (nats) of final-layer token attention rows of queries matched
  /// to gt instances without any alignment cost.
  double matched_entropy = 0.0;
  /// Same queries, entropy of the per-view marginal.
  double matched_frame_entropy = 0.0;
  std::size_t matched_queries = 0;
  std::size_t predictions = 0;
};

EvalSummary evaluate_model(const model::Model& model, const std::vector<scenegen::SceneRecord>& scenes,
                           const ScoringOptions& options = {});

nlohmann::json to_json(const EvalSummary& s);

}  // namespace segvggt::train
