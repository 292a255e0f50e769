#include "segvggt/train/pipeline.hpp"

#include <random>
#include <stdexcept>

#include "segvggt/fada/fada.hpp"
#include "segvggt/numerics/ops.hpp"
#include "segvggt/numerics/tape.hpp"

namespace segvggt::train {

namespace nm = numerics;

void BenchmarkSpec::validate() const {
  if (scenes < 1) throw std::invalid_argument("benchmark: at least one scene");
  if (views < 2) throw std::invalid_argument("benchmark: at least two views");
  if (height == 0 || width == 0 || height % 4 || width % 4) {
    throw std::invalid_argument("benchmark: resolution must be a positive multiple of 4");
  }
  if (min_objects < 1 || max_objects < min_objects) throw std::invalid_argument("benchmark: bad object range");
}

BenchmarkSpec default_train_split() { return {}; }

BenchmarkSpec default_eval_split() {
  BenchmarkSpec s;
  s.scenes = 5;
  s.seed = 100000;
  return s;
}

std::vector<scenegen::SceneRecord> generate_benchmark(const BenchmarkSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::uniform_int_distribution<std::size_t> objects(spec.min_objects, spec.max_objects);
  std::vector<scenegen::SceneRecord> scenes;
  for (std::size_t s = 0; s < spec.scenes; ++s) {
    const std::size_t n = objects(rng);
    const auto layout = scenegen::generate_scene(spec.seed + s, n, spec.views);
    scenes.push_back(scenegen::render_scene(layout, s, spec.height, spec.width));
  }
  return scenes;
}

namespace {

std::vector<std::vector<std::size_t>> group_points(const std::vector<int>& labels, std::size_t groups) {
  std::vector<std::vector<std::size_t>> sets(groups);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= 0 && static_cast<std::size_t>(labels[i]) < groups) sets[labels[i]].push_back(i);
  }
  return sets;
}

}  // namespace

SceneInstances score_scene(const scenegen::SceneRecord& scene,
                           const std::vector<recon::InstancePrediction>& predictions,
                           const ScoringOptions& options) {
  std::vector<std::vector<double>> depths;
  std::vector<std::vector<std::int32_t>> maps;
  std::vector<scenegen::CameraParams> cameras;
  for (const auto& v : scene.half_views) {
    depths.push_back(v.depth);
    maps.push_back(v.instance_map);
    cameras.push_back(v.camera);
  }
  const std::size_t h = scene.half_views.front().height, w = scene.half_views.front().width;
  const auto cloud = recon::reference_cloud(depths, maps, cameras, h, w);
  auto mapping = recon::map_to_reference(cloud.points, predictions, cameras, depths, h, w, options.visibility_eps);
  if (options.superpoints) {
    mapping.labels = recon::superpoint_vote(mapping.labels, recon::voxel_segments(cloud, options.voxel));
  }

  SceneInstances out;
  out.reference_points = cloud.points.size();
  out.invisible_points = mapping.invisible_points;
  const auto pred_sets = group_points(mapping.labels, predictions.size());
  for (std::size_t j = 0; j < predictions.size(); ++j) {
    out.predictions.push_back({scene.index, j, predictions[j].class_index, predictions[j].score, pred_sets[j]});
  }
  for (const auto& info : scene.instances) {
    eval::InstanceSet g{scene.index, static_cast<std::size_t>(info.id), info.class_index, 1.0, {}};
    for (std::size_t i = 0; i < cloud.labels.size(); ++i) {
      if (cloud.labels[i] == info.id) g.points.push_back(i);
    }
    if (!g.points.empty()) out.gts.push_back(std::move(g));
  }
  return out;
}

EvalSummary evaluate_model(const model::Model& net, const std::vector<scenegen::SceneRecord>& scenes,
                           const ScoringOptions& options) {
  nm::NoGradScope no_grad;
  EvalSummary summary;
  std::vector<eval::InstanceSet> preds, gts;
  double entropy = 0.0, frame_entropy = 0.0;
  const auto& c = net.config();
  for (const auto& scene : scenes) {
    const auto result = infer(net, scene_images(scene));
    auto scored = score_scene(scene, result.predictions, options);
    summary.predictions += result.predictions.size();
    preds.insert(preds.end(), scored.predictions.begin(), scored.predictions.end());
    gts.insert(gts.end(), scored.gts.begin(), scored.gts.end());

    std::vector<double> gt_depth;
    for (const auto& v : scene.views) gt_depth.insert(gt_depth.end(), v.depth.begin(), v.depth.end());
    const auto d = eval::depth_metrics(result.outputs.depth.data(), gt_depth);
    summary.abs_rel += d.abs_rel;
    summary.delta_1_25 += d.delta_1_25;

    const auto targets = make_targets(scene, 0, scene.num_views());
    if (targets.classes.empty()) continue;
    const nm::Tensor cls = nm::softmax_lastdim(result.outputs.class_logits);
    const nm::Tensor masks = nm::sigmoid(result.outputs.mask_logits);
    const auto cost = assign::match_cost(cls.data(), c.classes, masks.data(), targets.classes, targets.masks,
                                         nullptr, assign::LossWeights{});
    const auto matches = assign::hungarian(cost);
    const nm::Tensor& last = result.outputs.cross_attention.back();
    const std::size_t m = last.cols();
    for (const auto& [q, _] : matches.pairs) {
      const auto row = last.data().subspan(q * m, m);
      entropy += eval::attention_entropy(row);
      frame_entropy += eval::attention_entropy(fada::marginalize_frames(row, result.outputs.view_boundaries));
      ++summary.matched_queries;
    }
  }
  const double n = static_cast<double>(scenes.size());
  summary.abs_rel /= n;
  summary.delta_1_25 /= n;
  if (summary.matched_queries) {
    summary.matched_entropy = entropy / static_cast<double>(summary.matched_queries);
    summary.matched_frame_entropy = frame_entropy / static_cast<double>(summary.matched_queries);
  }
  summary.ap = eval::map_suite(preds, gts, false);
  summary.ap_agnostic = eval::map_suite(preds, gts, true);
  return summary;
}

nlohmann::json to_json(const EvalSummary& s) {
  return {{"schema_version", eval::kReportSchemaVersion},
          {"class_aware", eval::report_json(s.ap)},
          {"class_agnostic", eval::report_json(s.ap_agnostic)},
          {"depth", {{"abs_rel", s.abs_rel}, {"delta_1_25", s.delta_1_25}}},
          {"attention",
           {{"matched_queries", s.matched_queries},
            {"token_entropy", s.matched_entropy},
            {"frame_entropy", s.matched_frame_entropy}}},
          {"predictions", s.predictions}};
}

}  // namespace segvggt::train
