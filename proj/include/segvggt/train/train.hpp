#pragma once

#include <filesystem>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "segvggt/assign/assign.hpp"
#include "segvggt/model/model.hpp"
#include "segvggt/recon/recon.hpp"
#include "segvggt/scenegen/dataset.hpp"

namespace segvggt::train {

enum class FadaMode { off, loss_only, loss_and_cost };

std::string to_string(FadaMode mode);
/// Accepts off, loss, loss_only, loss+cost and loss_and_cost.
FadaMode parse_fada_mode(const std::string& text);

struct TrainConfig {
  model::ModelConfig model;
  std::string dataset;
  std::size_t steps = 3000;
  double learning_rate = 1e-3;
  double min_learning_rate_ratio = 0.05;  // cosine floor as a fraction of the peak
  std::size_t warmup_steps = 100;
  double weight_decay = 0.01;
  double grad_clip = 1.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  assign::LossWeights weights;
  FadaMode fada = FadaMode::loss_and_cost;
  std::uint64_t seed = 0;
  std::size_t min_views = 2;
  std::size_t max_views = 0;  // 0: every view of the scene
  std::size_t checkpoint_every = 0;  // 0: final checkpoint only

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);
/// Missing keys keep defaults; unknown keys are rejected.
TrainConfig train_config_from_json(const nlohmann::json& j);

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Supervision for a contiguous window of a scene's views.
struct WindowTargets {
  std::vector<model::Image> images;
  std::vector<scenegen::CameraParams> cameras;  // relative to the window's first view
  std::vector<double> camera_vectors;           // N*9
  std::vector<double> depth;                    // N*H*W, -1 invalid
  std::vector<int> instance_ids;                // supervised instances
  std::vector<int> classes;
  std::vector<double> masks;                    // G * N*(H/2)*(W/2), binary
  std::vector<std::vector<double>> visibility;  // G distributions over N
  std::size_t views() const { return images.size(); }
};

WindowTargets make_targets(const scenegen::SceneRecord& scene, std::size_t first, std::size_t count);

struct LossTerms {
  numerics::Tensor total;
  double camera = 0, depth = 0, cls = 0, bce = 0, dice = 0, fada = 0;
  assign::Assignment matches;
  bool fada_empty = false;
};

/// Matching and the full objective for one forward pass. A given `matches`
/// replaces the matching step (finite-difference checks hold it fixed).
LossTerms compute_loss(const model::ModelOutputs& out, const WindowTargets& targets, const TrainConfig& config,
                       const assign::Assignment* matches = nullptr);

double learning_rate_at(const TrainConfig& config, std::size_t step);

/// Scales gradients so their global norm is at most max_norm; returns the
/// norm before clipping.
double clip_gradients(const model::ParamStore& params, double max_norm);

/// Adaptive moments with decoupled weight decay. Decay applies to matrices
/// other than embeddings and query vectors.
class AdamW {
 public:
  AdamW(const model::ParamStore& params, const TrainConfig& config);
  void step(const model::ParamStore& params, double learning_rate);

 private:
  TrainConfig config_;
  std::vector<std::vector<double>> m_, v_;
  std::vector<char> decay_;
  std::size_t t_ = 0;
};

struct TrainOptions {
  std::ostream* log = nullptr;  // one JSON record per step
  std::filesystem::path checkpoint;  // final checkpoint; intermediates get ".step<k>"
  std::function<void(std::size_t step, double loss)> progress;
};

/// Deterministic in config.seed.
model::ParamStore train(const TrainConfig& config, const std::vector<scenegen::SceneRecord>& scenes,
                        const TrainOptions& options = {});

struct InferenceResult {
  model::ModelOutputs outputs;
  std::vector<recon::InstancePrediction> predictions;
  std::vector<scenegen::CameraParams> cameras;  // predicted
  recon::PointCloudSeg cloud;
};

struct InferOptions {
  model::StageTimes* times = nullptr;
  double* assembly_seconds = nullptr;
};

/// Forward pass and 3D assembly without any alignment computation. Queries
/// whose most likely class is no-object, or whose mask is empty, are dropped.
InferenceResult infer(const model::Model& model, const std::vector<model::Image>& images,
                      const InferOptions& options = {});

std::vector<model::Image> scene_images(const scenegen::SceneRecord& scene);

}  // namespace segvggt::train
