#include <cmath>
#include <filesystem>
#include <limits>
#include <numbers>
#include <sstream>

#include <gtest/gtest.h>

#include "segvggt/fada/fada.hpp"
#include "segvggt/numerics/ops.hpp"
#include "segvggt/numerics/tape.hpp"
#include "segvggt/train/train.hpp"

namespace tr = segvggt::train;
namespace md = segvggt::model;
namespace nm = segvggt::numerics;
namespace sg = segvggt::scenegen;
using nm::Tensor;

namespace {

tr::TrainConfig small_config() {
  tr::TrainConfig c;
  c.model = md::ModelConfig::minimal();
  c.model.classes = sg::kDefaultClassCount;
  c.steps = 6;
  c.warmup_steps = 2;
  return c;
}

std::vector<sg::SceneRecord> small_scenes(std::size_t count, std::size_t views = 3) {
  std::vector<sg::SceneRecord> out;
  for (std::size_t s = 0; s < count; ++s) {
    out.push_back(sg::render_scene(sg::generate_scene(20 + s, 3, views), s, 16, 16));
  }
  return out;
}

// Loss and gradients of one forward/backward pass.
std::pair<tr::LossTerms, std::vector<std::vector<double>>> loss_and_grads(const md::Model& net,
                                                                          const tr::WindowTargets& targets,
                                                                          const tr::TrainConfig& config) {
  net.params().zero_grad();
  nm::Tape tape;
  tr::LossTerms terms;
  {
    nm::TapeScope scope(tape);
    terms = tr::compute_loss(net.forward(targets.images), targets, config);
  }
  tape.backward(terms.total);
  std::vector<std::vector<double>> grads;
  for (const auto& [_, t] : net.params().entries()) {
    grads.emplace_back(t.has_grad() ? std::vector<double>(t.grad().begin(), t.grad().end())
                                    : std::vector<double>(t.numel(), 0.0));
  }
  return {terms, grads};
}

}  // namespace

TEST(TrainConfig, JsonRoundTripAndRejects) {
  auto c = small_config();
  c.fada = tr::FadaMode::loss_only;
  c.weights.js = 0.25;
  c.seed = 9;
  const auto back = tr::train_config_from_json(tr::to_json(c));
  EXPECT_EQ(tr::to_json(back), tr::to_json(c));

  auto j = tr::to_json(c);
  j["bogus"] = 1;
  EXPECT_ANY_THROW(tr::train_config_from_json(j));
  j = tr::to_json(c);
  j["weights"]["bogus"] = 1;
  EXPECT_ANY_THROW(tr::train_config_from_json(j));

  EXPECT_EQ(tr::parse_fada_mode("off"), tr::FadaMode::off);
  EXPECT_EQ(tr::parse_fada_mode("loss"), tr::FadaMode::loss_only);
  EXPECT_EQ(tr::parse_fada_mode("loss+cost"), tr::FadaMode::loss_and_cost);
  EXPECT_ANY_THROW(tr::parse_fada_mode("sometimes"));

  c.min_views = 1;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = small_config();
  c.learning_rate = -1;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = small_config();
  c.beta2 = 1.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(Schedule, WarmupThenCosineToFloor) {
  tr::TrainConfig c;
  c.learning_rate = 2e-3;
  c.warmup_steps = 10;
  c.steps = 110;
  c.min_learning_rate_ratio = 0.05;
  EXPECT_NEAR(tr::learning_rate_at(c, 0), 2e-4, 1e-18);
  EXPECT_NEAR(tr::learning_rate_at(c, 9), 2e-3, 1e-18);
  EXPECT_NEAR(tr::learning_rate_at(c, 10), 2e-3, 1e-18);
  EXPECT_NEAR(tr::learning_rate_at(c, 60), 2e-3 * (0.05 + 0.95 * 0.5), 1e-15);
  EXPECT_NEAR(tr::learning_rate_at(c, 110), 2e-3 * 0.05, 1e-15);
  double prev = tr::learning_rate_at(c, 10);
  for (std::size_t s = 11; s < 110; ++s) {
    const double lr = tr::learning_rate_at(c, s);
    EXPECT_LE(lr, prev);
    EXPECT_GE(lr, 2e-3 * 0.05);
    prev = lr;
  }
}

TEST(ClipGradients, ScalesToMaxNorm) {
  md::ParamStore store;
  const Tensor a = store.add("a", Tensor({2, 2}, {1, 2, 3, 4}, true));
  const Tensor b = store.add("b", Tensor({3}, {0.5, -1, 2}, true));
  auto backward = [&] {
    store.zero_grad();
    nm::Tape tape;
    Tensor loss;
    {
      nm::TapeScope scope(tape);
      // Gradients are 3a and b.
      loss = nm::add(nm::scale(nm::sum(nm::square(a)), 1.5), nm::scale(nm::sum(nm::square(b)), 0.5));
    }
    tape.backward(loss);
  };
  backward();
  double expected = 0;
  for (double x : a.data()) expected += 9 * x * x;
  for (double x : b.data()) expected += x * x;
  expected = std::sqrt(expected);
  EXPECT_NEAR(tr::clip_gradients(store, 1.0), expected, 1e-12);
  double after = 0;
  for (const auto& t : store.tensors()) {
    for (double g : t.grad()) after += g * g;
  }
  EXPECT_LE(std::sqrt(after), 1.0 + 1e-9);
  EXPECT_NEAR(a.grad()[0] / b.grad()[0], 3.0 * 1.0 / 0.5, 1e-12);

  backward();
  EXPECT_NEAR(tr::clip_gradients(store, 1e6), expected, 1e-12);
  EXPECT_EQ(a.grad()[3], 12.0);
}

TEST(AdamW, MatchesReferenceUpdates) {
  md::ParamStore store;
  const Tensor w = store.add("w", Tensor({2, 2}, {1.0, -2.0, 0.5, 3.0}, true));
  const Tensor q = store.add("queries", Tensor({1, 2}, {0.25, -0.75}, true));
  const Tensor b = store.add("b", Tensor({2}, {0.1, 0.2}, true));
  tr::TrainConfig c;
  c.weight_decay = 0.1;
  tr::AdamW opt(store, c);

  // Reference copies, updated by the textbook rule.
  std::vector<std::vector<double>> x{{1.0, -2.0, 0.5, 3.0}, {0.25, -0.75}, {0.1, 0.2}}, m(3), v(3);
  for (std::size_t i = 0; i < 3; ++i) m[i] = v[i] = std::vector<double>(x[i].size(), 0.0);
  const std::vector<bool> decays{true, false, false};
  const std::vector<double> lrs{1e-2, 5e-3, 2e-2};

  for (std::size_t step = 0; step < lrs.size(); ++step) {
    store.zero_grad();
    nm::Tape tape;
    Tensor loss;
    {
      nm::TapeScope scope(tape);
      // d/dx of sum(x^3) / 3 is x^2 (plus a linear term so signs vary).
      loss = nm::add(nm::add(nm::sum(nm::mul(nm::square(w), w)), nm::sum(nm::mul(nm::square(q), q))),
                     nm::sum(nm::mul(nm::square(b), b)));
      loss = nm::add(nm::scale(loss, 1.0 / 3.0), nm::scale(nm::add(nm::sum(w), nm::sum(b)), -0.5));
    }
    tape.backward(loss);
    std::vector<std::vector<double>> grads;
    for (const auto& t : store.tensors()) grads.emplace_back(t.grad().begin(), t.grad().end());
    opt.step(store, lrs[step]);

    const double t = static_cast<double>(step + 1);
    for (std::size_t i = 0; i < 3; ++i) {
      for (std::size_t k = 0; k < x[i].size(); ++k) {
        const double g = grads[i][k];
        m[i][k] = 0.9 * m[i][k] + 0.1 * g;
        v[i][k] = 0.999 * v[i][k] + 0.001 * g * g;
        const double mh = m[i][k] / (1 - std::pow(0.9, t)), vh = v[i][k] / (1 - std::pow(0.999, t));
        if (decays[i]) x[i][k] *= 1 - lrs[step] * 0.1;
        x[i][k] -= lrs[step] * mh / (std::sqrt(vh) + 1e-8);
      }
    }
    const auto tensors = store.tensors();
    for (std::size_t i = 0; i < 3; ++i) {
      for (std::size_t k = 0; k < x[i].size(); ++k) EXPECT_NEAR(tensors[i].data()[k], x[i][k], 1e-14);
    }
  }
}

TEST(MakeTargets, WindowSupervision) {
  const auto scene = small_scenes(1, 4)[0];
  const auto t = tr::make_targets(scene, 1, 3);
  ASSERT_EQ(t.views(), 3u);
  EXPECT_EQ(t.camera_vectors.size(), 27u);
  // The first camera of the window is the identity.
  EXPECT_NEAR(t.camera_vectors[0], 1.0, 1e-12);
  for (int i = 1; i < 7; ++i) EXPECT_NEAR(t.camera_vectors[i], 0.0, 1e-12);
  EXPECT_EQ(t.depth.size(), 3u * 256);
  EXPECT_EQ(t.masks.size(), t.classes.size() * 3 * 64);
  for (std::size_t g = 0; g < t.classes.size(); ++g) {
    double mass = 0;
    for (std::size_t i = 0; i < 3 * 64; ++i) mass += t.masks[g * 3 * 64 + i];
    EXPECT_GE(mass, static_cast<double>(sg::kMinSupervisedPixels));
    double s = 0;
    for (double p : t.visibility[g]) s += p;
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
  EXPECT_THROW(tr::make_targets(scene, 3, 2), std::invalid_argument);
  EXPECT_THROW(tr::make_targets(scene, 0, 1), std::invalid_argument);
}

TEST(ComputeLoss, OffModeIgnoresVisibilityTargets) {
  auto c = small_config();
  c.fada = tr::FadaMode::off;
  const auto scene = small_scenes(1)[0];
  const md::Model net(c.model);
  auto targets = tr::make_targets(scene, 0, 3);
  ASSERT_FALSE(targets.visibility.empty());
  const auto [a, ga] = loss_and_grads(net, targets, c);
  EXPECT_EQ(a.fada, 0.0);
  for (auto& p : targets.visibility) {
    std::fill(p.begin(), p.end(), 0.0);
    p.back() = 1.0;
  }
  const auto [b, gb] = loss_and_grads(net, targets, c);
  EXPECT_EQ(a.total.item(), b.total.item());
  EXPECT_EQ(ga, gb);

  // With alignment on, the same change moves the loss.
  c.fada = tr::FadaMode::loss_only;
  const auto on = loss_and_grads(net, targets, c).first;
  EXPECT_GT(on.fada, 0.0);
  EXPECT_EQ(on.matches.pairs, a.matches.pairs);
}

TEST(ComputeLoss, TermsComposeIntoTotal) {
  auto c = small_config();
  const auto scene = small_scenes(1)[0];
  const md::Model net(c.model);
  const auto targets = tr::make_targets(scene, 0, 3);
  nm::NoGradScope no_grad;
  const auto t = tr::compute_loss(net.forward(targets.images), targets, c);
  const auto& w = c.weights;
  const double want = w.camera * t.camera + w.depth * t.depth + w.cls * t.cls + w.mask * (t.bce + t.dice) + w.js * t.fada;
  EXPECT_NEAR(t.total.item(), want, 1e-12 * std::max(1.0, std::abs(want)));
  EXPECT_EQ(t.matches.pairs.size(), targets.classes.size());
}

TEST(Train, SameSeedIsBitwiseDeterministic) {
  const auto c = small_config();
  const auto scenes = small_scenes(3);
  std::ostringstream log_a, log_b;
  tr::TrainOptions oa, ob;
  oa.log = &log_a;
  ob.log = &log_b;
  const auto a = tr::train(c, scenes, oa);
  const auto b = tr::train(c, scenes, ob);
  EXPECT_TRUE(a.same_values(b));
  std::size_t lines = 0;
  std::istringstream in(log_a.str());
  for (std::string line; std::getline(in, line); ++lines) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j["step"], lines);
    EXPECT_TRUE(j.contains("fada") && j.contains("grad_norm"));
  }
  EXPECT_EQ(lines, c.steps);

  auto other = c;
  other.seed = 1;
  EXPECT_FALSE(tr::train(other, scenes).same_values(a));
}

TEST(Train, LossFallsOnAFixedBatch) {
  auto c = small_config();
  c.learning_rate = 3e-3;
  c.warmup_steps = 5;
  c.steps = 50;
  const auto scene = small_scenes(1)[0];
  const auto targets = tr::make_targets(scene, 0, 3);
  md::Model net(c.model);
  tr::AdamW opt(net.params(), c);
  double first = 0, last = 0;
  for (std::size_t step = 0; step < c.steps; ++step) {
    net.params().zero_grad();
    nm::Tape tape;
    tr::LossTerms terms;
    {
      nm::TapeScope scope(tape);
      terms = tr::compute_loss(net.forward(targets.images), targets, c);
    }
    if (step == 0) first = terms.total.item();
    last = terms.total.item();
    tape.backward(terms.total);
    tr::clip_gradients(net.params(), c.grad_clip);
    opt.step(net.params(), tr::learning_rate_at(c, step));
  }
  EXPECT_LT(last, 0.8 * first);
}

TEST(Train, NonFiniteLossAbortsWithDiagnostics) {
  auto scenes = small_scenes(1);
  for (auto& v : scenes[0].views) v.rgb[5] = std::numeric_limits<double>::quiet_NaN();
  const auto dir = std::filesystem::temp_directory_path() / "segvggt_train_nan";
  std::filesystem::create_directories(dir);
  tr::TrainOptions o;
  o.checkpoint = dir / "model.ckpt";
  std::filesystem::remove(dir / "model.ckpt.diagnostics.json");
  EXPECT_THROW(tr::train(small_config(), scenes, o), tr::TrainingError);
  EXPECT_TRUE(std::filesystem::exists(dir / "model.ckpt.diagnostics.json"));
  EXPECT_FALSE(std::filesystem::exists(dir / "model.ckpt"));
}

TEST(Train, RejectsMismatchedData) {
  auto c = small_config();
  EXPECT_THROW(tr::train(c, {}), std::invalid_argument);
  auto scenes = small_scenes(1);
  c.model.height = c.model.width = 32;
  EXPECT_THROW(tr::train(c, scenes), std::invalid_argument);
}

TEST(Infer, DeterministicAndAlignmentFree) {
  const auto c = small_config();
  const md::Model net(c.model, tr::train(c, small_scenes(2)));
  const auto scene = small_scenes(1)[0];
  const auto images = tr::scene_images(scene);
  segvggt::fada::reset_instrumentation();
  const auto a = tr::infer(net, images);
  const auto b = tr::infer(net, images);
  EXPECT_EQ(segvggt::fada::instrumentation_count(), 0u);
  ASSERT_EQ(a.predictions.size(), b.predictions.size());
  for (std::size_t i = 0; i < a.predictions.size(); ++i) {
    EXPECT_EQ(a.predictions[i].masks, b.predictions[i].masks);
    EXPECT_EQ(a.predictions[i].score, b.predictions[i].score);
    EXPECT_LT(a.predictions[i].class_index, static_cast<int>(c.model.classes));
  }
  EXPECT_EQ(a.cloud.labels, b.cloud.labels);
  EXPECT_EQ(a.cameras.size(), images.size());
  EXPECT_ANY_THROW(tr::infer(net, {images[0]}));
}
