#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "../support/oracles.hpp"
#include "segvggt/assign/assign.hpp"
#include "segvggt/numerics/grad_check.hpp"
#include "segvggt/numerics/ops.hpp"
#include "segvggt/numerics/tape.hpp"

namespace as = segvggt::assign;
namespace fa = segvggt::fada;
namespace nm = segvggt::numerics;
using nm::Tensor;
using Pairs = std::vector<std::pair<std::size_t, std::size_t>>;

namespace {

std::vector<double> uniform(std::mt19937_64& rng, std::size_t n, double lo = 0.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

std::vector<double> binary(std::mt19937_64& rng, std::size_t n) {
  std::vector<double> v(n);
  for (auto& x : v) x = static_cast<double>(rng() % 2);
  return v;
}

double logit(double p) { return std::log(p / (1.0 - p)); }

// Direct formulas, written independently of the library.
double bce_ref(const std::vector<double>& m, const std::vector<double>& g) {
  double s = 0;
  for (std::size_t i = 0; i < m.size(); ++i) s -= g[i] * std::log(m[i]) + (1 - g[i]) * std::log(1 - m[i]);
  return s / static_cast<double>(m.size());
}

double dice_ref(const std::vector<double>& m, const std::vector<double>& g) {
  double inter = 0, sm = 0, sg = 0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    inter += m[i] * g[i];
    sm += m[i];
    sg += g[i];
  }
  return 1 - (2 * inter + 1) / (sm + sg + 1);
}

}  // namespace

TEST(Flatten, ViewMajorOrderAndRoundTrip) {
  const std::vector<std::vector<double>> views{{0.1, 0.2}, {0.3, 0.4}};
  const auto flat = as::flatten_masks(views, 1, 2);
  EXPECT_EQ(flat, (std::vector<double>{0.1, 0.2, 0.3, 0.4}));
  EXPECT_EQ(as::unflatten_masks(flat, 2, 1, 2), views);
  EXPECT_THROW(as::flatten_masks({{0.1}, {0.2, 0.3}}, 1, 2), std::invalid_argument);
}

TEST(Bce, Examples) {
  const double eps = 1e-12;
  EXPECT_NEAR(as::bce(std::vector<double>{1 - eps, eps}, std::vector<double>{1, 0}), 0.0, 1e-11);
  std::mt19937_64 rng(1);
  const auto g = binary(rng, 20);
  EXPECT_NEAR(as::bce(std::vector<double>(20, 0.5), g), std::log(2.0), 1e-15);
  EXPECT_NEAR(as::bce(std::vector<double>{0.9, 0.1}, std::vector<double>{1, 0}), -std::log(0.9), 1e-15);
  EXPECT_NEAR(-std::log(0.9), 0.10536, 1e-5);
}

TEST(Dice, Examples) {
  EXPECT_EQ(as::dice(std::vector<double>(5, 1.0), std::vector<double>(5, 1.0)), 0.0);
  EXPECT_EQ(as::dice(std::vector<double>(5, 0.0), std::vector<double>(5, 0.0)), 0.0);
  EXPECT_NEAR(as::dice(std::vector<double>{1, 1, 0, 0}, std::vector<double>{0, 0, 1, 1}), 0.8, 1e-15);
}

TEST(Losses, RangesOnRandomInputs) {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 300; ++t) {
    const std::size_t n = 1 + rng() % 30;
    const auto m = uniform(rng, n, 1e-6, 1 - 1e-6);
    const auto g = binary(rng, n);
    const double b = as::bce(m, g), d = as::dice(m, g);
    EXPECT_GT(b, 0.0);
    EXPECT_GE(d, 0.0);
    EXPECT_LT(d, 1.0);
    EXPECT_NEAR(b, bce_ref(m, g), 1e-12);
    EXPECT_NEAR(d, dice_ref(m, g), 1e-12);
  }
}

TEST(Losses, FlatEqualsLengthWeightedPerViewMerge) {
  std::mt19937_64 rng(3);
  const auto m = uniform(rng, 24, 0.01, 0.99);
  const auto g = binary(rng, 24);
  const auto mv = as::unflatten_masks(m, 3, 2, 4), gv = as::unflatten_masks(g, 3, 2, 4);
  double merged = 0;
  for (std::size_t v = 0; v < 3; ++v) merged += as::bce(mv[v], gv[v]) * 8.0 / 24.0;
  EXPECT_NEAR(merged, as::bce(m, g), 1e-12);
}

TEST(RowLosses, MatchProbabilityForms) {
  std::mt19937_64 rng(4);
  const auto p = uniform(rng, 12, 0.05, 0.95);
  std::vector<double> z;
  for (double x : p) z.push_back(logit(x));
  const auto g = binary(rng, 12);
  const Tensor logits({3, 4}, z);
  nm::NoGradScope ng;
  const Tensor b = as::bce_rows(logits, g), d = as::dice_rows(logits, g);
  for (std::size_t r = 0; r < 3; ++r) {
    const std::vector<double> pr(p.begin() + r * 4, p.begin() + r * 4 + 4), gr(g.begin() + r * 4, g.begin() + r * 4 + 4);
    EXPECT_NEAR(b.data()[r], bce_ref(pr, gr), 1e-12);
    EXPECT_NEAR(d.data()[r], dice_ref(pr, gr), 1e-12);
  }
}

TEST(RowLosses, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(5);
  Tensor z({2, 6}, uniform(rng, 12, -3, 3), true);
  const auto g = binary(rng, 12);
  EXPECT_LT(nm::grad_check([&] { return nm::sum(as::bce_rows(z, g)); }, {z}, 1e-5), 1e-6);
  EXPECT_LT(nm::grad_check([&] { return nm::sum(as::dice_rows(z, g)); }, {z}, 1e-5), 1e-6);
}

TEST(MatchCost, PerfectPredictionCostsMinusClassWeight) {
  const double eps = 1e-12;
  const std::vector<double> probs{1.0, 0.0, 0.0};  // C = 2, class 0
  const std::vector<double> gt{1, 0, 1, 1};
  std::vector<double> m;
  for (double x : gt) m.push_back(x > 0 ? 1 - eps : eps);
  const fa::FadaCostBlock js{1, 1, {0.0}};
  const auto c = as::match_cost(probs, 2, m, std::vector<int>{0}, gt, &js, {});
  EXPECT_NEAR(c.at(0, 0), -0.5, 1e-9);
}

TEST(MatchCost, ComposesComponentOracles) {
  std::mt19937_64 rng(6);
  const std::size_t o = 3, g = 2, p = 8;
  const std::vector<double> probs(o * 3, 1.0 / 3.0);
  const std::vector<double> m(o * p, 0.5);
  std::vector<double> gt(g * p, 0.0);
  for (std::size_t k = 0; k < g; ++k) {
    for (std::size_t i = 0; i < p / 2; ++i) gt[k * p + i + k] = 1.0;
  }
  const fa::FadaCostBlock js{o, g, uniform(rng, o * g, 0, 0.3)};
  const as::LossWeights w;
  const auto c = as::match_cost(probs, 2, m, std::vector<int>{0, 1}, gt, &js, w);
  const std::vector<double> half(p, 0.5);
  for (std::size_t j = 0; j < o; ++j) {
    for (std::size_t k = 0; k < g; ++k) {
      const std::vector<double> gk(gt.begin() + k * p, gt.begin() + (k + 1) * p);
      const double expected = -w.cls / 3.0 + w.mask * (bce_ref(half, gk) + dice_ref(half, gk)) + w.js * js.at(j, k);
      EXPECT_NEAR(c.at(j, k), expected, 1e-12);
      const std::size_t e = j * g + k;
      EXPECT_NEAR(c.total[e], -w.cls * c.cls[e] + w.mask * (c.bce[e] + c.dice[e]) + w.js * c.js[e], 1e-12);
    }
  }
}

TEST(MatchCost, ZeroWeightsGiveZeroMatrixAndNoJsColumnWhenOff) {
  std::mt19937_64 rng(7);
  const auto probs = uniform(rng, 2 * 3);
  const auto m = uniform(rng, 2 * 5, 0.1, 0.9);
  const auto gt = binary(rng, 5);
  as::LossWeights zero{0, 0, 0, 0, 0, 0};
  const fa::FadaCostBlock js{2, 1, {0.1, 0.2}};
  const auto c = as::match_cost(probs, 2, m, std::vector<int>{1}, gt, &js, zero);
  for (double x : c.total) EXPECT_EQ(x, 0.0);
  const auto off = as::match_cost(probs, 2, m, std::vector<int>{1}, gt, nullptr, {});
  for (double x : off.js) EXPECT_EQ(x, 0.0);
}

TEST(Hungarian, Examples) {
  const auto diag = as::hungarian(std::vector<double>{0, 9, 9, 0}, 2, 2);
  EXPECT_EQ(diag.pairs, (Pairs{{0, 0}, {1, 1}}));
  EXPECT_EQ(diag.cost, 0.0);
  const auto tie = as::hungarian(std::vector<double>{1, 2, 3, 4}, 2, 2);
  EXPECT_EQ(tie.pairs, (Pairs{{0, 0}, {1, 1}}));
  EXPECT_EQ(tie.cost, 5.0);
  const auto empty = as::hungarian(std::vector<double>{}, 3, 0);
  EXPECT_TRUE(empty.pairs.empty());
  EXPECT_THROW(as::hungarian(std::vector<double>(6, 0.0), 2, 3), as::CapacityError);
}

TEST(Hungarian, MatchesBruteForceOnRandomMatrices) {
  std::mt19937_64 rng(8);
  for (int t = 0; t < 400; ++t) {
    const std::size_t rows = 1 + rng() % 7, cols = 1 + rng() % rows;
    const bool ties = t % 2 == 1;
    std::vector<double> c = ties ? std::vector<double>(rows * cols) : uniform(rng, rows * cols, -2, 2);
    if (ties) {
      for (auto& x : c) x = static_cast<double>(rng() % 3);
    }
    const auto got = as::hungarian(c, rows, cols);
    const auto want = oracle::brute_assignment(c, rows, cols);
    ASSERT_EQ(got.cost, want.cost) << rows << "x" << cols;
    ASSERT_EQ(got.pairs, want.pairs) << rows << "x" << cols;
  }
}

TEST(Hungarian, ColumnShiftLeavesAssignmentUnchanged) {
  std::mt19937_64 rng(9);
  for (int t = 0; t < 200; ++t) {
    const std::size_t rows = 2 + rng() % 6, cols = 1 + rng() % rows;
    auto c = uniform(rng, rows * cols);
    const auto base = as::hungarian(c, rows, cols);
    const std::size_t k = rng() % cols;
    for (std::size_t j = 0; j < rows; ++j) c[j * cols + k] += 0.75;
    EXPECT_EQ(as::hungarian(c, rows, cols).pairs, base.pairs);
  }
}

TEST(InstanceLoss, PerfectPredictionIsNearZero) {
  // Two queries: one matched perfectly, one confidently no-object.
  const Tensor cls({2, 3}, {40, 0, 0, 0, 0, 40});
  const std::vector<double> gt{1, 0, 0, 1};
  const Tensor masks({2, 4}, {40, -40, -40, 40, 0, 0, 0, 0});
  const as::Assignment m{{{0, 0}}, 0.0};
  nm::NoGradScope ng;
  const auto l = as::instance_loss(m, cls, masks, std::vector<int>{0}, gt, {});
  EXPECT_LT(l.total.item(), 1e-6);
}

TEST(InstanceLoss, SinglePairComposesOracles) {
  std::mt19937_64 rng(10);
  const auto zc = uniform(rng, 2 * 3, -1, 1), pm = uniform(rng, 2 * 6, 0.1, 0.9);
  std::vector<double> zm;
  for (double x : pm) zm.push_back(logit(x));
  const auto gt = binary(rng, 6);
  as::LossWeights w;
  nm::NoGradScope ng;
  const auto l = as::instance_loss({{{1, 0}}, 0}, Tensor({2, 3}, zc), Tensor({2, 6}, zm), std::vector<int>{1}, gt, w);
  auto log_softmax = [&](std::size_t row, std::size_t c) {
    double z = 0;
    for (std::size_t i = 0; i < 3; ++i) z += std::exp(zc[row * 3 + i]);
    return zc[row * 3 + c] - std::log(z);
  };
  // Weighted mean: matched query weight 1 on class 1, unmatched weight 0.1 on no-object.
  const double ce = -(1.0 * log_softmax(1, 1) + w.no_object * log_softmax(0, 2)) / (1.0 + w.no_object);
  const std::vector<double> p1(pm.begin() + 6, pm.end());
  EXPECT_NEAR(l.cls.item(), ce, 1e-12);
  EXPECT_NEAR(l.bce.item(), bce_ref(p1, gt), 1e-12);
  EXPECT_NEAR(l.dice.item(), dice_ref(p1, gt), 1e-12);
  EXPECT_NEAR(l.total.item(), w.cls * ce + w.mask * (bce_ref(p1, gt) + dice_ref(p1, gt)), 1e-12);

  as::LossWeights doubled = w;
  doubled.mask *= 2;
  const auto l2 = as::instance_loss({{{1, 0}}, 0}, Tensor({2, 3}, zc), Tensor({2, 6}, zm), std::vector<int>{1}, gt,
                                    doubled);
  EXPECT_NEAR(l2.total.item() - l.total.item(), w.mask * (l.bce.item() + l.dice.item()), 1e-12);
}

TEST(InstanceLoss, InvariantToQueryPermutationWithRematching) {
  std::mt19937_64 rng(11);
  const std::size_t o = 4, g = 2, p = 5;
  const auto zc = uniform(rng, o * 3, -2, 2), zm = uniform(rng, o * p, -2, 2);
  const auto gt = binary(rng, g * p);
  const std::vector<int> classes{0, 1};
  auto evaluate = [&](const std::vector<double>& c, const std::vector<double>& m) {
    nm::NoGradScope ng;
    const Tensor cl({o, 3}, c), ml({o, p}, m);
    const Tensor probs = nm::softmax_lastdim(cl), mp = nm::sigmoid(ml);
    const auto cost = as::match_cost(probs.data(), 2, mp.data(), classes, gt, nullptr, {});
    return as::instance_loss(as::hungarian(cost), cl, ml, classes, gt, {}).total.item();
  };
  const std::vector<std::size_t> perm{2, 0, 3, 1};
  std::vector<double> zc2, zm2;
  for (auto j : perm) {
    zc2.insert(zc2.end(), zc.begin() + j * 3, zc.begin() + j * 3 + 3);
    zm2.insert(zm2.end(), zm.begin() + j * p, zm.begin() + j * p + p);
  }
  EXPECT_NEAR(evaluate(zc, zm), evaluate(zc2, zm2), 1e-12);
}

TEST(GeometryLoss, Examples) {
  const std::vector<double> cam{0.5, 0.5, 0.5, 0.5, 1, 2, 3, 0.8, 0.8};
  const std::vector<double> depth{2, 3, -1, 4};
  nm::NoGradScope ng;
  const auto same = as::geometry_loss(Tensor({1, 9}, cam), cam, Tensor({1, 4}, {2, 3, 7, 4}), depth, {});
  EXPECT_EQ(same.camera.item(), 0.0);
  EXPECT_EQ(same.depth.item(), 0.0);

  std::vector<double> flipped = cam;
  for (int i = 0; i < 4; ++i) flipped[i] = -flipped[i];
  EXPECT_EQ(as::geometry_loss(Tensor({1, 9}, flipped), cam, Tensor({1, 4}, {2, 3, 1, 4}), depth, {}).camera.item(),
            0.0);

  const auto doubled = as::geometry_loss(Tensor({1, 9}, cam), cam, Tensor({1, 4}, {4, 6, 1, 8}), depth, {});
  EXPECT_NEAR(doubled.depth.item(), std::log(2.0), 1e-15);
  EXPECT_THROW(as::geometry_loss(Tensor({1, 9}, cam), cam, Tensor({1, 2}, {1, 1}), std::vector<double>{-1, -1}, {}),
               as::DegenerateSupervision);
}

TEST(TotalLoss, Arithmetic) {
  as::LossWeights w;
  EXPECT_EQ(as::total_loss(Tensor::scalar(0), Tensor::scalar(0), Tensor::scalar(0), w).item(), 0.0);
  EXPECT_EQ(as::total_loss(Tensor::scalar(1), Tensor::scalar(2), Tensor::scalar(4), w).item(), 5.0);
}

TEST(InstanceLoss, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(12);
  Tensor cls({3, 3}, uniform(rng, 9, -2, 2), true), masks({3, 6}, uniform(rng, 18, -2, 2), true);
  Tensor cams({2, 9}, uniform(rng, 18, -1, 1), true), depth({2, 3}, uniform(rng, 6, 0.5, 3), true);
  const auto gt = binary(rng, 12);
  const auto gt_cam = uniform(rng, 18, -1, 1);
  const std::vector<double> gt_depth{1, 2, -1, 3, 0.5, 2};
  const as::Assignment m{{{0, 1}, {2, 0}}, 0};
  auto f = [&] {
    const auto inst = as::instance_loss(m, cls, masks, std::vector<int>{1, 0}, gt, {});
    const auto geo = as::geometry_loss(cams, gt_cam, depth, gt_depth, {});
    return as::total_loss(geo.total, inst.total, Tensor::scalar(0.0), {});
  };
  EXPECT_LT(nm::grad_check(f, {cls, masks, cams, depth}, 1e-5), 1e-4);
}
