// Command-line front end: gen, train, infer, eval, attn, bench.

#include <sys/resource.h>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "segvggt/eval/eval.hpp"
#include "segvggt/fada/fada.hpp"
#include "segvggt/numerics/tape.hpp"
#include "segvggt/train/pipeline.hpp"

namespace {

using namespace segvggt;
using nlohmann::json;
namespace fs = std::filesystem;

class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

void emit(const json& j) { std::cout << j.dump(2) << std::endl; }

std::pair<std::size_t, std::size_t> parse_pair(const std::string& text, const std::string& sep,
                                               const std::string& flag) {
  const auto at = text.find(sep);
  try {
    if (at == std::string::npos) throw std::invalid_argument("");
    std::size_t used = 0;
    const std::string a = text.substr(0, at), b = text.substr(at + sep.size());
    const long x = std::stol(a, &used);
    if (used != a.size()) throw std::invalid_argument("");
    const long y = std::stol(b, &used);
    if (used != b.size() || x < 0 || y < 0) throw std::invalid_argument("");
    return {static_cast<std::size_t>(x), static_cast<std::size_t>(y)};
  } catch (const std::exception&) {
    throw UsageError(flag + " expects A" + sep + "B with nonnegative integers, got \"" + text + "\"");
  }
}

// ---------------------------------------------------------------- gen

struct GenArgs {
  std::string out;
  std::size_t scenes = 20, views = 4;
  std::string res = "64x64", objects = "3..6";
  std::uint64_t seed = 0;
};

int run_gen(const GenArgs& a) {
  train::BenchmarkSpec spec;
  spec.scenes = a.scenes;
  spec.views = a.views;
  std::tie(spec.height, spec.width) = parse_pair(a.res, "x", "--res");
  std::tie(spec.min_objects, spec.max_objects) = parse_pair(a.objects, "..", "--objects");
  spec.seed = a.seed;
  try {
    spec.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  emit({{"command", "gen"},
        {"config",
         {{"out", a.out},
          {"scenes", spec.scenes},
          {"views", spec.views},
          {"res", std::to_string(spec.height) + "x" + std::to_string(spec.width)},
          {"objects", std::to_string(spec.min_objects) + ".." + std::to_string(spec.max_objects)},
          {"seed", spec.seed}}}});
  const auto scenes = train::generate_benchmark(spec);
  scenegen::write_dataset(scenes, a.out);
  std::size_t instances = 0;
  json per_scene = json::array();
  for (const auto& s : scenes) {
    instances += s.instances.size();
    per_scene.push_back({{"index", s.index}, {"instances", s.instances.size()}});
  }
  emit({{"manifest", (fs::path(a.out) / "manifest.json").string()},
        {"scenes", scenes.size()},
        {"instances", instances},
        {"per_scene", per_scene}});
  return 0;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  std::string config, fada, out, log;
};

int run_train(const TrainArgs& a) {
  json raw;
  try {
    raw = json::parse(io::read_text(a.config));
  } catch (const json::parse_error& e) {
    throw UsageError("config " + a.config + ": " + e.what());
  }
  train::TrainConfig cfg;
  try {
    cfg = train::train_config_from_json(raw);
    if (!a.fada.empty()) cfg.fada = train::parse_fada_mode(a.fada);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  if (cfg.dataset.empty()) throw UsageError("config has no dataset path");
  fs::path dataset = cfg.dataset;
  if (dataset.is_relative()) dataset = fs::path(a.config).parent_path() / dataset;
  cfg.dataset = dataset.lexically_normal().string();
  const std::string log_path = a.log.empty() ? a.out + ".log" : a.log;

  emit({{"command", "train"}, {"config", train::to_json(cfg)}, {"out", a.out}, {"log", log_path}});
  const auto scenes = scenegen::read_dataset(cfg.dataset);
  std::ofstream log(log_path);
  if (!log) throw std::runtime_error("cannot open log " + log_path);
  train::TrainOptions options;
  options.log = &log;
  options.checkpoint = a.out;
  const auto t0 = std::chrono::steady_clock::now();
  train::train(cfg, scenes, options);
  emit({{"checkpoint", a.out},
        {"steps", cfg.steps},
        {"seconds", std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()}});
  return 0;
}

// ---------------------------------------------------------------- infer

model::Model load_model(const std::string& path) {
  auto ckpt = model::load_checkpoint(path);
  return model::Model(ckpt.config, std::move(ckpt.params));
}

void check_resolution(const model::Model& net, const scenegen::SceneRecord& scene) {
  const auto& c = net.config();
  if (scene.height() != c.height || scene.width() != c.width) {
    throw std::runtime_error("scene is " + std::to_string(scene.height()) + "x" + std::to_string(scene.width()) +
                             " but the checkpoint expects " + std::to_string(c.height) + "x" +
                             std::to_string(c.width));
  }
}

struct InferArgs {
  std::string ckpt, scene, out;
};

int run_infer(const InferArgs& a) {
  const auto net = load_model(a.ckpt);
  emit({{"command", "infer"},
        {"config", {{"ckpt", a.ckpt}, {"scene", a.scene}, {"out", a.out}, {"model", model::to_json(net.config())}}}});
  const auto scene = scenegen::read_scene(a.scene);
  check_resolution(net, scene);
  const auto r = train::infer(net, train::scene_images(scene));
  const auto& c = net.config();
  recon::write_predictions(a.out, recon::make_prediction_file(r.predictions, r.cloud, scene.num_views(),
                                                              c.mask_height(), c.mask_width()));
  json instances = json::array();
  for (const auto& p : r.predictions) {
    instances.push_back({{"query", p.query}, {"class", p.class_index}, {"score", p.score}});
  }
  emit({{"predictions", a.out}, {"instances", instances}, {"points", r.cloud.points.size()}});
  return 0;
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
  std::string pred, gt;
  bool class_agnostic = false, superpoints = false;
};

int run_eval(const EvalArgs& a) {
  emit({{"command", "eval"},
        {"config",
         {{"pred", a.pred}, {"gt", a.gt}, {"class_agnostic", a.class_agnostic}, {"superpoints", a.superpoints}}}});
  const auto file = recon::read_predictions(a.pred);
  const auto scene = scenegen::read_scene(a.gt);
  if (!file.classes.empty() && file.masks.empty()) {
    throw std::runtime_error(a.pred + " carries no masks; the mapping protocol needs them");
  }
  if (!file.masks.empty() && (file.views != scene.num_views() || file.mask_height != scene.half_views[0].height ||
                              file.mask_width != scene.half_views[0].width)) {
    throw std::runtime_error("prediction masks do not match the scene layout");
  }
  train::ScoringOptions options;
  options.superpoints = a.superpoints;
  const auto scored = train::score_scene(scene, recon::predictions_from_file(file), options);
  const auto ap = eval::map_suite(scored.predictions, scored.gts, a.class_agnostic);
  json report = eval::report_json(ap);
  report["schema_version"] = eval::kReportSchemaVersion;
  report["reference_points"] = scored.reference_points;
  report["invisible_points"] = scored.invisible_points;
  emit(report);
  return 0;
}

// ---------------------------------------------------------------- attn

struct AttnArgs {
  std::string ckpt, scene, out;
  std::size_t query = 0, layer = 0;
};

int run_attn(const AttnArgs& a) {
  const auto net = load_model(a.ckpt);
  const auto& c = net.config();
  emit({{"command", "attn"},
        {"config",
         {{"ckpt", a.ckpt}, {"scene", a.scene}, {"out", a.out}, {"query", a.query}, {"layer", a.layer}}}});
  if (a.layer >= c.layers) {
    throw UsageError("--layer " + std::to_string(a.layer) + " out of range (model has " +
                     std::to_string(c.layers) + " layers)");
  }
  if (a.query >= c.queries) {
    throw UsageError("--query " + std::to_string(a.query) + " out of range (model has " +
                     std::to_string(c.queries) + " queries)");
  }
  const auto scene = scenegen::read_scene(a.scene);
  check_resolution(net, scene);
  numerics::NoGradScope no_grad;
  const auto out = net.forward(train::scene_images(scene));
  fs::create_directories(a.out);

  const std::size_t m = out.cross_attention[a.layer].cols();
  const auto row = out.cross_attention[a.layer].data().subspan(a.query * m, m);
  const auto marginal = fada::marginalize_frames(row, out.view_boundaries);
  const std::string stem = "l" + std::to_string(a.layer) + "_q" + std::to_string(a.query);
  scenegen::write_depth_raster(fs::path(a.out) / (stem + ".marginal"), 1, marginal.size(), marginal);
  const std::size_t hp = c.height / c.patch, wp = c.width / c.patch;
  json views = json::array();
  for (std::size_t v = 0; v < out.views; ++v) {
    const auto b = out.view_boundaries[v], e = out.view_boundaries[v + 1];
    const auto tokens = row.subspan(b, e - b);
    const std::string name = stem + "_view" + std::to_string(v);
    scenegen::write_depth_raster(fs::path(a.out) / (name + ".tokens"), 1, tokens.size(), tokens);
    scenegen::write_depth_raster(fs::path(a.out) / (name + ".patches"), hp, wp,
                                 tokens.subspan(model::kSpecialTokens));
    double special = 0.0;
    for (std::size_t t = 0; t < model::kSpecialTokens; ++t) special += tokens[t];
    views.push_back({{"view", v}, {"marginal", marginal[v]}, {"special_mass", special}});
  }
  json entropy = json::array();
  for (std::size_t l = 0; l < out.cross_attention.size(); ++l) {
    const auto r = out.cross_attention[l].data().subspan(a.query * m, m);
    entropy.push_back({{"layer", l},
                       {"token_entropy", eval::attention_entropy(r)},
                       {"frame_entropy", eval::attention_entropy(fada::marginalize_frames(r, out.view_boundaries))}});
  }
  json table = {{"layer", a.layer}, {"query", a.query}, {"views", views}, {"entropy", entropy}};
  io::write_text(fs::path(a.out) / (stem + ".entropy.json"), table.dump(2) + "\n");
  emit(table);
  return 0;
}

// ---------------------------------------------------------------- bench

struct BenchArgs {
  std::string ckpt, frames = "2,4,8";
  std::size_t repeats = 3;
};

double peak_rss_mb() {
  rusage usage{};
  getrusage(RUSAGE_SELF, &usage);
  return static_cast<double>(usage.ru_maxrss) / 1024.0;
}

int run_bench(const BenchArgs& a) {
  std::vector<std::size_t> frames;
  {
    std::stringstream ss(a.frames);
    std::string item;
    while (std::getline(ss, item, ',')) {
      std::size_t used = 0;
      long n = -1;
      try {
        n = std::stol(item, &used);
      } catch (const std::exception&) {
      }
      if (n < 2 || used != item.size()) throw UsageError("--frames expects a list of integers >= 2");
      frames.push_back(static_cast<std::size_t>(n));
    }
  }
  if (frames.empty()) throw UsageError("--frames is empty");
  if (a.repeats < 1) throw UsageError("--repeats must be >= 1");
  const auto net = load_model(a.ckpt);
  const auto& c = net.config();
  emit({{"command", "bench"},
        {"config", {{"ckpt", a.ckpt}, {"frames", frames}, {"repeats", a.repeats}, {"model", model::to_json(c)}}}});

  json results = json::array();
  for (std::size_t n : frames) {
    const auto layout = scenegen::generate_scene(7, 4, n);
    const auto scene = scenegen::render_scene(layout, 0, c.height, c.width);
    const auto images = train::scene_images(scene);
    model::StageTimes sum;
    double assembly = 0.0, total = 0.0;
    for (std::size_t r = 0; r <= a.repeats; ++r) {  // run 0 is the warmup
      model::StageTimes t;
      double asm_seconds = 0.0;
      train::InferOptions options{&t, &asm_seconds};
      const auto t0 = std::chrono::steady_clock::now();
      train::infer(net, images, options);
      const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      if (r == 0) continue;
      sum.embed += t.embed;
      sum.aggregator += t.aggregator;
      sum.heads += t.heads;
      assembly += asm_seconds;
      total += wall;
    }
    const double k = static_cast<double>(a.repeats);
    results.push_back({{"frames", n},
                       {"embed", sum.embed / k},
                       {"aggregator", sum.aggregator / k},
                       {"heads", sum.heads / k},
                       {"assembly", assembly / k},
                       {"total", total / k},
                       {"peak_rss_mb", peak_rss_mb()}});
  }
  emit({{"warmup_runs", 1}, {"repeats", a.repeats}, {"results", results}});
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Joint multi-view geometry and 3D instance segmentation"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen", "Generate a synthetic dataset");
  g->add_option("--out", gen.out, "Output directory")->required();
  g->add_option("--scenes", gen.scenes, "Number of scenes")->capture_default_str();
  g->add_option("--views", gen.views, "Views per scene")->capture_default_str();
  g->add_option("--res", gen.res, "Resolution HxW")->capture_default_str();
  g->add_option("--objects", gen.objects, "Object count range LO..HI")->capture_default_str();
  g->add_option("--seed", gen.seed, "Base seed")->capture_default_str();

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train a model");
  t->add_option("--config", tr.config, "Training config (JSON)")->required()->check(CLI::ExistingFile);
  t->add_option("--fada", tr.fada, "Alignment mode: off, loss or loss+cost (overrides the config)")
      ->check(CLI::IsMember({"off", "loss", "loss+cost"}));
  t->add_option("--out", tr.out, "Checkpoint path")->required();
  t->add_option("--log", tr.log, "Per-step JSON log (default: <out>.log)");

  InferArgs inf;
  auto* i = app.add_subcommand("infer", "Predict instances for one scene");
  i->add_option("--ckpt", inf.ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  i->add_option("--scene", inf.scene, "Scene directory")->required()->check(CLI::ExistingDirectory);
  i->add_option("--out", inf.out, "Prediction file")->required();

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Score predictions against ground truth");
  e->add_option("--pred", ev.pred, "Prediction file")->required()->check(CLI::ExistingFile);
  e->add_option("--gt", ev.gt, "Scene directory")->required()->check(CLI::ExistingDirectory);
  e->add_flag("--class-agnostic", ev.class_agnostic, "Treat all instances as one class");
  e->add_flag("--superpoints", ev.superpoints, "Majority vote inside voxel segments");

  AttnArgs at;
  auto* a = app.add_subcommand("attn", "Dump cross-attention of one query");
  a->add_option("--ckpt", at.ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  a->add_option("--scene", at.scene, "Scene directory")->required()->check(CLI::ExistingDirectory);
  a->add_option("--query", at.query, "Query index")->required();
  a->add_option("--layer", at.layer, "Layer index")->required();
  a->add_option("--out", at.out, "Output directory")->required();

  BenchArgs be;
  auto* b = app.add_subcommand("bench", "Time inference stages");
  b->add_option("--ckpt", be.ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  b->add_option("--frames", be.frames, "Comma-separated view counts")->capture_default_str();
  b->add_option("--repeats", be.repeats, "Timed runs after one warmup")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (g->parsed()) return run_gen(gen);
    if (t->parsed()) return run_train(tr);
    if (i->parsed()) return run_infer(inf);
    if (e->parsed()) return run_eval(ev);
    if (a->parsed()) return run_attn(at);
    if (b->parsed()) return run_bench(be);
  } catch (const UsageError& err) {
    std::cerr << "usage error: " << err.what() << "\n";
    return 2;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 1;
  }
  return 2;
}
