#include "segvggt/train/train.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>
#include <set>

#include "segvggt/fada/fada.hpp"
#include "segvggt/io/binary.hpp"
#include "segvggt/numerics/ops.hpp"
#include "segvggt/numerics/tape.hpp"

namespace segvggt::train {

namespace nm = numerics;
using numerics::Tensor;
using nlohmann::json;

std::string to_string(FadaMode mode) {
  switch (mode) {
    case FadaMode::off: return "off";
    case FadaMode::loss_only: return "loss";
    case FadaMode::loss_and_cost: return "loss+cost";
  }
  return "?";
}

FadaMode parse_fada_mode(const std::string& text) {
  if (text == "off") return FadaMode::off;
  if (text == "loss" || text == "loss_only") return FadaMode::loss_only;
  if (text == "loss+cost" || text == "loss_and_cost") return FadaMode::loss_and_cost;
  throw std::invalid_argument("unknown fada mode \"" + text + "\" (expected off, loss or loss+cost)");
}

void TrainConfig::validate() const {
  model.validate();
  auto fail = [](const std::string& what) { throw std::invalid_argument("train config: " + what); };
  if (steps < 1) fail("steps must be >= 1");
  for (double v : {learning_rate, weight_decay, grad_clip, weights.camera, weights.depth, weights.cls,
                   weights.mask, weights.js, weights.no_object, adam_eps}) {
    if (!(v >= 0.0) || !std::isfinite(v)) fail("rates and weights must be finite and nonnegative");
  }
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) fail("betas must lie in [0, 1)");
  if (!(min_learning_rate_ratio >= 0.0 && min_learning_rate_ratio <= 1.0)) fail("min_learning_rate_ratio in [0, 1]");
  if (min_views < 2) fail("min_views must be >= 2");
  if (max_views != 0 && max_views < min_views) fail("max_views below min_views");
}

json to_json(const TrainConfig& c) {
  return {{"model", model::to_json(c.model)},
          {"dataset", c.dataset},
          {"steps", c.steps},
          {"learning_rate", c.learning_rate},
          {"min_learning_rate_ratio", c.min_learning_rate_ratio},
          {"warmup_steps", c.warmup_steps},
          {"weight_decay", c.weight_decay},
          {"grad_clip", c.grad_clip},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"adam_eps", c.adam_eps},
          {"weights",
           {{"camera", c.weights.camera},
            {"depth", c.weights.depth},
            {"cls", c.weights.cls},
            {"mask", c.weights.mask},
            {"js", c.weights.js},
            {"no_object", c.weights.no_object}}},
          {"fada", to_string(c.fada)},
          {"seed", c.seed},
          {"min_views", c.min_views},
          {"max_views", c.max_views},
          {"checkpoint_every", c.checkpoint_every}};
}

namespace {

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw std::invalid_argument(where + " must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!known.contains(key)) throw std::invalid_argument("unknown " + where + " key \"" + key + "\"");
  }
}

}  // namespace

TrainConfig train_config_from_json(const json& j) {
  reject_unknown(j,
                 {"model", "dataset", "steps", "learning_rate", "min_learning_rate_ratio", "warmup_steps",
                  "weight_decay", "grad_clip", "beta1", "beta2", "adam_eps", "weights", "fada", "seed",
                  "min_views", "max_views", "checkpoint_every"},
                 "train config");
  TrainConfig c;
  auto take = [&](const json& src, const char* key, auto& field) {
    if (src.contains(key)) field = src.at(key).get<std::remove_reference_t<decltype(field)>>();
  };
  try {
    if (j.contains("model")) c.model = model::model_config_from_json(j.at("model"));
    take(j, "dataset", c.dataset);
    take(j, "steps", c.steps);
    take(j, "learning_rate", c.learning_rate);
    take(j, "min_learning_rate_ratio", c.min_learning_rate_ratio);
    take(j, "warmup_steps", c.warmup_steps);
    take(j, "weight_decay", c.weight_decay);
    take(j, "grad_clip", c.grad_clip);
    take(j, "beta1", c.beta1);
    take(j, "beta2", c.beta2);
    take(j, "adam_eps", c.adam_eps);
    take(j, "seed", c.seed);
    take(j, "min_views", c.min_views);
    take(j, "max_views", c.max_views);
    take(j, "checkpoint_every", c.checkpoint_every);
    if (j.contains("fada")) c.fada = parse_fada_mode(j.at("fada").get<std::string>());
    if (j.contains("weights")) {
      const json& w = j.at("weights");
      reject_unknown(w, {"camera", "depth", "cls", "mask", "js", "no_object"}, "loss weight");
      take(w, "camera", c.weights.camera);
      take(w, "depth", c.weights.depth);
      take(w, "cls", c.weights.cls);
      take(w, "mask", c.weights.mask);
      take(w, "js", c.weights.js);
      take(w, "no_object", c.weights.no_object);
    }
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

WindowTargets make_targets(const scenegen::SceneRecord& scene, std::size_t first, std::size_t count) {
  if (count < 2 || first + count > scene.num_views()) {
    throw std::invalid_argument("make_targets: window [" + std::to_string(first) + ", " +
                                std::to_string(first + count) + ") does not fit the scene");
  }
  WindowTargets t;
  const auto& ref = scene.views[first].camera;
  for (std::size_t v = first; v < first + count; ++v) {
    const auto& view = scene.views[v];
    t.images.push_back(view.rgb);
    t.cameras.push_back(scenegen::relative_to(ref, view.camera));
    const auto g = t.cameras.back().to_vector();
    t.camera_vectors.insert(t.camera_vectors.end(), g.begin(), g.end());
    t.depth.insert(t.depth.end(), view.depth.begin(), view.depth.end());
  }
  const std::size_t hw = scene.half_views[first].pixels();
  for (const auto& info : scene.instances) {
    std::vector<std::size_t> counts;
    std::vector<double> mask;
    mask.reserve(count * hw);
    for (std::size_t v = first; v < first + count; ++v) {
      std::size_t c = 0;
      for (auto id : scene.half_views[v].instance_map) {
        const bool hit = id == info.id;
        mask.push_back(hit ? 1.0 : 0.0);
        c += hit;
      }
      counts.push_back(c);
    }
    std::size_t total = 0;
    for (auto c : counts) total += c;
    if (total < scenegen::kMinSupervisedPixels) continue;
    t.instance_ids.push_back(info.id);
    t.classes.push_back(info.class_index);
    t.masks.insert(t.masks.end(), mask.begin(), mask.end());
    t.visibility.push_back(scenegen::visibility_from_counts(counts).probabilities);
  }
  return t;
}

LossTerms compute_loss(const model::ModelOutputs& out, const WindowTargets& targets, const TrainConfig& config,
                       const assign::Assignment* matches) {
  const std::size_t classes = out.class_logits.cols() - 1, g = targets.classes.size();
  const auto& w = config.weights;

  std::vector<double> class_probs, mask_probs;
  {
    nm::NoGradScope no_grad;
    const Tensor cls = nm::softmax_lastdim(out.class_logits);
    class_probs.assign(cls.data().begin(), cls.data().end());
    const Tensor probs = nm::sigmoid(out.mask_logits);
    mask_probs.assign(probs.data().begin(), probs.data().end());
  }
  LossTerms terms;
  fada::FadaCostBlock block;
  const bool use_cost = config.fada == FadaMode::loss_and_cost && g > 0 && !matches;
  if (use_cost) {
    nm::NoGradScope no_grad;
    block = fada::fada_cost_matrix(out.cross_attention, out.view_boundaries, targets.visibility);
  }
  if (matches) {
    terms.matches = *matches;
  } else if (g > 0) {
    const auto cost = assign::match_cost(class_probs, classes, mask_probs, targets.classes, targets.masks,
                                         use_cost ? &block : nullptr, w);
    terms.matches = assign::hungarian(cost);
  }

  const auto inst = assign::instance_loss(terms.matches, out.class_logits, out.mask_logits, targets.classes,
                                          targets.masks, w);
  const auto geo = assign::geometry_loss(out.cameras, targets.camera_vectors, out.depth, targets.depth, w);
  Tensor alignment = Tensor::scalar(0.0);
  if (config.fada != FadaMode::off) {
    const auto f = fada::fada_loss(terms.matches.pairs, out.cross_attention, out.view_boundaries, targets.visibility);
    alignment = f.value;
    terms.fada_empty = f.no_matches;
  }
  terms.total = assign::total_loss(geo.total, inst.total, alignment, w);
  terms.camera = geo.camera.item();
  terms.depth = geo.depth.item();
  terms.cls = inst.cls.item();
  terms.bce = inst.bce.item();
  terms.dice = inst.dice.item();
  terms.fada = alignment.item();
  return terms;
}

double learning_rate_at(const TrainConfig& c, std::size_t step) {
  if (step < c.warmup_steps) {
    return c.learning_rate * static_cast<double>(step + 1) / static_cast<double>(c.warmup_steps);
  }
  const std::size_t span = c.steps > c.warmup_steps ? c.steps - c.warmup_steps : 1;
  const double progress = std::min(1.0, static_cast<double>(step - c.warmup_steps) / static_cast<double>(span));
  const double floor = c.min_learning_rate_ratio;
  return c.learning_rate * (floor + (1.0 - floor) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress)));
}

double clip_gradients(const model::ParamStore& params, double max_norm) {
  double sq = 0.0;
  for (const auto& [_, t] : params.entries()) {
    if (!t.has_grad()) continue;
    for (double g : t.grad()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double s = max_norm / norm;
    for (const auto& [_, t] : params.entries()) {
      if (!t.has_grad()) continue;
      for (auto& g : t.mutable_grad()) g *= s;
    }
  }
  return norm;
}

AdamW::AdamW(const model::ParamStore& params, const TrainConfig& config) : config_(config) {
  for (const auto& [name, t] : params.entries()) {
    m_.emplace_back(t.numel(), 0.0);
    v_.emplace_back(t.numel(), 0.0);
    const bool embedding = name == "embed.pos" || name == "embed.special" || name == "embed.special_ref" ||
                           name == "embed.ref" || name == "queries";
    decay_.push_back(t.rank() >= 2 && !embedding);
  }
}

void AdamW::step(const model::ParamStore& params, double lr) {
  ++t_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  std::size_t i = 0;
  for (const auto& [_, param] : params.entries()) {
    Tensor t = param;  // handle sharing the parameter's storage
    auto x = t.mutable_data();
    auto& m = m_[i];
    auto& v = v_[i];
    const double decay = decay_[i] ? lr * config_.weight_decay : 0.0;
    ++i;
    if (!t.has_grad()) continue;
    const auto g = t.grad();
    for (std::size_t k = 0; k < x.size(); ++k) {
      m[k] = b1 * m[k] + (1.0 - b1) * g[k];
      v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
      x[k] -= decay * x[k];
      x[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + config_.adam_eps);
    }
  }
}

namespace {

json step_record(std::size_t step, double lr, const LossTerms& t, double grad_norm, double wall) {
  return {{"step", step},       {"lr", lr},           {"total", t.total.item()}, {"camera", t.camera},
          {"depth", t.depth},   {"cls", t.cls},       {"bce", t.bce},            {"dice", t.dice},
          {"fada", t.fada},     {"matched", t.matches.pairs.size()},             {"grad_norm", grad_norm},
          {"wall", wall}};
}

std::filesystem::path step_path(const std::filesystem::path& base, std::size_t step) {
  return base.string() + ".step" + std::to_string(step);
}

}  // namespace

model::ParamStore train(const TrainConfig& config, const std::vector<scenegen::SceneRecord>& scenes,
                        const TrainOptions& options) {
  config.validate();
  if (scenes.empty()) throw std::invalid_argument("train: dataset has no scenes");
  for (const auto& s : scenes) {
    if (s.height() != config.model.height || s.width() != config.model.width) {
      throw std::invalid_argument("train: scene " + std::to_string(s.index) + " resolution does not match the model");
    }
    if (s.num_views() < config.min_views) throw std::invalid_argument("train: scene has too few views");
  }
  model::Model net(config.model);
  AdamW optimizer(net.params(), config);
  std::mt19937_64 rng(config.seed);
  const auto start = std::chrono::steady_clock::now();

  for (std::size_t step = 0; step < config.steps; ++step) {
    const auto& scene = scenes[std::uniform_int_distribution<std::size_t>(0, scenes.size() - 1)(rng)];
    const std::size_t max_views = config.max_views ? std::min(config.max_views, scene.num_views()) : scene.num_views();
    const std::size_t count = std::uniform_int_distribution<std::size_t>(config.min_views, max_views)(rng);
    const std::size_t first = std::uniform_int_distribution<std::size_t>(0, scene.num_views() - count)(rng);
    const auto targets = make_targets(scene, first, count);

    net.params().zero_grad();
    nm::Tape tape;
    LossTerms terms;
    std::string failure;
    {
      nm::TapeScope scope(tape);
      const auto out = net.forward(targets.images);
      try {
        terms = compute_loss(out, targets, config);
      } catch (const fada::DomainError& e) {
        // Non-finite attention reaches the alignment cost before the loss.
        failure = e.what();
        terms.total = Tensor::scalar(std::numeric_limits<double>::quiet_NaN());
      }
    }
    const double loss = terms.total.item();
    const double lr = learning_rate_at(config, step);
    if (!std::isfinite(loss)) {
      json diag = step_record(step, lr, terms, 0.0, 0.0);
      if (!failure.empty()) diag["error"] = failure;
      diag["scene"] = scene.index;
      diag["window_first"] = first;
      diag["window_count"] = count;
      if (!options.checkpoint.empty()) {
        io::write_text(options.checkpoint.string() + ".diagnostics.json", diag.dump(2) + "\n");
      }
      throw TrainingError("non-finite loss at step " + std::to_string(step) + ": " + diag.dump());
    }
    tape.backward(terms.total);
    const double grad_norm = clip_gradients(net.params(), config.grad_clip);
    optimizer.step(net.params(), lr);

    if (options.log) {
      const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      *options.log << step_record(step, lr, terms, grad_norm, wall).dump() << "\n";
    }
    if (options.progress) options.progress(step, loss);
    if (!options.checkpoint.empty() && config.checkpoint_every && (step + 1) % config.checkpoint_every == 0 &&
        step + 1 < config.steps) {
      model::save_checkpoint(step_path(options.checkpoint, step + 1), config.model, net.params());
    }
  }
  net.params().zero_grad();
  model::ParamStore params = net.params().clone();
  if (!options.checkpoint.empty()) model::save_checkpoint(options.checkpoint, config.model, params);
  return params;
}

std::vector<model::Image> scene_images(const scenegen::SceneRecord& scene) {
  std::vector<model::Image> images;
  for (const auto& v : scene.views) images.push_back(v.rgb);
  return images;
}

InferenceResult infer(const model::Model& net, const std::vector<model::Image>& images, const InferOptions& options) {
  nm::NoGradScope no_grad;
  InferenceResult r;
  model::ForwardOptions fo;
  fo.times = options.times;
  r.outputs = net.forward(images, fo);

  const auto t0 = std::chrono::steady_clock::now();
  const auto& c = net.config();
  const std::size_t n = images.size(), o = c.queries, classes = c.classes;
  const std::size_t p = n * c.mask_pixels(), hw = c.height * c.width;
  const Tensor class_probs = nm::softmax_lastdim(r.outputs.class_logits);
  const Tensor mask_probs = nm::sigmoid(r.outputs.mask_logits);
  const auto cp = class_probs.data();
  const auto mp = mask_probs.data();
  for (std::size_t j = 0; j < o; ++j) {
    const auto row = cp.subspan(j * (classes + 1), classes + 1);
    std::size_t best = 0;
    for (std::size_t k = 1; k <= classes; ++k) {
      if (row[k] > row[best]) best = k;
    }
    if (best == classes) continue;
    const auto probs = mp.subspan(j * p, p);
    recon::InstancePrediction pred;
    pred.query = j;
    pred.class_index = static_cast<int>(best);
    pred.class_probability = row[best];
    pred.masks = recon::binarize(probs, c.mask_threshold);
    bool any = false;
    for (auto b : pred.masks) any |= b != 0;
    if (!any) continue;
    pred.score = recon::score(row[best], probs, c.mask_threshold);
    r.predictions.push_back(std::move(pred));
  }

  const auto cams = r.outputs.cameras.data();
  const auto depth = r.outputs.depth.data();
  std::vector<std::vector<double>> depths;
  for (std::size_t v = 0; v < n; ++v) {
    scenegen::CameraParams cam = scenegen::CameraParams::from_vector(cams.subspan(v * 9, 9));
    // The head normalizes the quaternion; renormalize away rounding.
    double norm = 0.0;
    for (double q : cam.rotation) norm += q * q;
    norm = std::sqrt(norm);
    for (double& q : cam.rotation) q /= norm;
    r.cameras.push_back(cam);
    depths.emplace_back(depth.begin() + v * hw, depth.begin() + (v + 1) * hw);
  }
  r.cloud = recon::assemble_instances(r.predictions, depths, r.cameras, c.height, c.width);
  if (options.assembly_seconds) {
    *options.assembly_seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
  return r;
}

}  // namespace segvggt::train
