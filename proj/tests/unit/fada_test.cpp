#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "../support/oracles.hpp"
#include "segvggt/fada/fada.hpp"
#include "segvggt/numerics/grad_check.hpp"
#include "segvggt/numerics/ops.hpp"
#include "segvggt/numerics/tape.hpp"

namespace fa = segvggt::fada;
namespace nm = segvggt::numerics;
using nm::Tensor;

namespace {

std::vector<double> random_simplex(std::mt19937_64& rng, std::size_t n, double zero_rate = 0.0) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> p(n);
  double s = 0;
  for (auto& x : p) s += (x = u(rng) < zero_rate ? 0.0 : u(rng));
  if (s == 0) {
    p[0] = s = 1.0;
  }
  for (auto& x : p) x /= s;
  return p;
}

Tensor softmax_rows(std::mt19937_64& rng, std::size_t rows, std::size_t cols, double scale = 2.0) {
  std::normal_distribution<double> n(0.0, scale);
  std::vector<double> z(rows * cols);
  for (auto& x : z) x = n(rng);
  return nm::softmax_lastdim(Tensor({rows, cols}, z));
}

const double kLn2 = std::log(2.0);

}  // namespace

TEST(Marginalize, UniformTwoViews) {
  const std::vector<double> row(10, 0.1);
  const std::vector<std::size_t> b{0, 5, 10};
  const auto p = fa::marginalize_frames(row, b);
  EXPECT_NEAR(p[0], 0.5, 1e-15);
  EXPECT_NEAR(p[1], 0.5, 1e-15);
}

TEST(Marginalize, OneHotToken) {
  std::vector<double> row(12, 0.0);
  row[9] = 1.0;
  const auto p = fa::marginalize_frames(row, std::vector<std::size_t>{0, 3, 6, 10, 12});
  EXPECT_EQ(p, (std::vector<double>{0, 0, 1, 0}));
}

TEST(Marginalize, MatchesPerViewSummation) {
  std::mt19937_64 rng(1);
  const std::vector<std::size_t> b{0, 5, 12, 21};
  for (int t = 0; t < 200; ++t) {
    const auto row = random_simplex(rng, 21);
    const auto p = fa::marginalize_frames(row, b);
    EXPECT_EQ(p, oracle::view_sums(row, b));
    EXPECT_NEAR(p[0] + p[1] + p[2], 1.0, 1e-12);
  }
}

TEST(Marginalize, TensorFormAgreesAndRejectsBadPartitions) {
  std::mt19937_64 rng(2);
  const Tensor a = softmax_rows(rng, 3, 9);
  const std::vector<std::size_t> b{0, 4, 9};
  const Tensor m = fa::marginalize_frames(a, b);
  for (std::size_t r = 0; r < 3; ++r) {
    const auto want = oracle::view_sums(a.data().subspan(r * 9, 9), b);
    EXPECT_NEAR(m.data()[r * 2], want[0], 1e-15);
    EXPECT_NEAR(m.data()[r * 2 + 1], want[1], 1e-15);
  }
  EXPECT_THROW(fa::marginalize_frames(a, std::vector<std::size_t>{0, 4, 8}), fa::PartitionError);
  EXPECT_THROW(fa::marginalize_frames(a, std::vector<std::size_t>{0, 4, 4, 9}), fa::PartitionError);
  EXPECT_THROW(fa::marginalize_frames(a, std::vector<std::size_t>{1, 9}), fa::PartitionError);
}

TEST(JsDivergence, Examples) {
  EXPECT_EQ(fa::js_divergence(std::vector<double>{0.3, 0.7}, std::vector<double>{0.3, 0.7}), 0.0);
  EXPECT_NEAR(fa::js_divergence(std::vector<double>{1, 0}, std::vector<double>{0, 1}), kLn2, 1e-15);
  EXPECT_NEAR(fa::js_divergence(std::vector<double>{1, 0}, std::vector<double>{0.5, 0.5}), 0.215762, 1e-6);
  // Direct evaluation: 1/2 ln(4/3) + 1/2 (1/2 ln(2/3) + 1/2 ln 2).
  const double direct = 0.5 * std::log(4.0 / 3.0) + 0.25 * std::log(2.0 / 3.0) + 0.25 * std::log(2.0);
  EXPECT_NEAR(fa::js_divergence(std::vector<double>{1, 0}, std::vector<double>{0.5, 0.5}), direct, 1e-15);
}

TEST(JsDivergence, PropertiesOnRandomPairs) {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 3000; ++t) {
    const std::size_t n = 2 + rng() % 8;
    const auto p = random_simplex(rng, n, 0.3), q = random_simplex(rng, n, 0.3);
    const double a = fa::js_divergence(p, q);
    EXPECT_LT(std::abs(a - fa::js_divergence(q, p)), 1e-12);
    EXPECT_GE(a, 0.0);
    EXPECT_LE(a, kLn2 + 1e-12);
    EXPECT_NEAR(a, oracle::js(p, q), 1e-13);
    EXPECT_LT(fa::js_divergence(p, p), 1e-12);
  }
}

TEST(JsDivergence, PositiveWhenDistributionsDiffer) {
  std::mt19937_64 rng(4);
  for (int t = 0; t < 500; ++t) {
    auto p = random_simplex(rng, 4);
    auto q = p;
    q[0] += 1e-3;
    q[1] = std::max(0.0, q[1] - 1e-3);
    double s = 0;
    for (double x : q) s += x;
    for (auto& x : q) x /= s;
    EXPECT_GT(fa::js_divergence(p, q), 0.0);
  }
}

TEST(JsDivergence, Contracts) {
  EXPECT_THROW(fa::js_divergence(std::vector<double>{0.5, 0.5}, std::vector<double>{1.0}), fa::DomainError);
  EXPECT_THROW(fa::js_divergence(std::vector<double>{-0.1, 1.1}, std::vector<double>{0.5, 0.5}), fa::DomainError);
  EXPECT_THROW(fa::js_divergence(std::vector<double>{0.5, 0.6}, std::vector<double>{0.5, 0.5}), fa::DomainError);
}

TEST(CostMatrix, AlignedAttentionCostsZero) {
  // Two views of 3 tokens; attention mass per view equals the target.
  const std::vector<std::size_t> b{0, 3, 6};
  const Tensor a({1, 6}, {0.1, 0.1, 0.1, 0.2, 0.3, 0.2});
  const auto block = fa::fada_cost_matrix({a, a}, b, {{0.3, 0.7}});
  EXPECT_NEAR(block.at(0, 0), 0.0, 1e-15);
}

TEST(CostMatrix, DisjointSupportsAttainBound) {
  const std::vector<std::size_t> b{0, 2, 4};
  const Tensor a({1, 4}, {0.5, 0.5, 0.0, 0.0});
  const auto block = fa::fada_cost_matrix({a}, b, {{0.0, 1.0}});
  EXPECT_NEAR(block.at(0, 0), kLn2 / 2.0, 1e-15);
}

TEST(CostMatrix, LayerAverageMatchesHandComputation) {
  std::mt19937_64 rng(5);
  const std::vector<std::size_t> b{0, 4, 9, 11};
  const Tensor a0 = softmax_rows(rng, 2, 11), a1 = softmax_rows(rng, 2, 11);
  const std::vector<std::vector<double>> targets{{0.2, 0.5, 0.3}, {0.0, 1.0, 0.0}};
  const auto block = fa::fada_cost_matrix({a0, a1}, b, targets);
  for (std::size_t j = 0; j < 2; ++j) {
    for (std::size_t k = 0; k < 2; ++k) {
      const double x = oracle::js(targets[k], oracle::view_sums(a0.data().subspan(j * 11, 11), b));
      const double y = oracle::js(targets[k], oracle::view_sums(a1.data().subspan(j * 11, 11), b));
      EXPECT_NEAR(block.at(j, k), (x + y) / (2.0 * 3.0), 1e-13);
      EXPECT_GE(block.at(j, k), 0.0);
      EXPECT_LE(block.at(j, k), kLn2 / 3.0 + 1e-12);
    }
  }
}

TEST(FadaLoss, MeanOfMatchedCostEntries) {
  std::mt19937_64 rng(6);
  const std::vector<std::size_t> b{0, 3, 7};
  const std::vector<Tensor> layers{softmax_rows(rng, 4, 7), softmax_rows(rng, 4, 7)};
  const std::vector<std::vector<double>> targets{{0.4, 0.6}, {1.0, 0.0}, {0.5, 0.5}};
  const auto block = fa::fada_cost_matrix(layers, b, targets);
  const std::vector<std::pair<std::size_t, std::size_t>> one{{2, 1}};
  EXPECT_NEAR(fa::fada_loss(one, layers, b, targets).value.item(), block.at(2, 1), 1e-12);
  const std::vector<std::pair<std::size_t, std::size_t>> two{{0, 2}, {3, 0}};
  EXPECT_NEAR(fa::fada_loss(two, layers, b, targets).value.item(), (block.at(0, 2) + block.at(3, 0)) / 2, 1e-12);
  const auto none = fa::fada_loss({}, layers, b, targets);
  EXPECT_TRUE(none.no_matches);
  EXPECT_EQ(none.value.item(), 0.0);
}

TEST(FadaLoss, PerfectAlignmentIsZero) {
  const std::vector<std::size_t> b{0, 2, 4};
  const Tensor a({1, 4}, {0.25, 0.25, 0.4, 0.1});
  EXPECT_NEAR(fa::fada_loss({{0, 0}}, {a}, b, {{0.5, 0.5}}).value.item(), 0.0, 1e-15);
}

TEST(FadaLoss, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> n(0.0, 1.5);
  const std::vector<std::size_t> b{0, 3, 5, 9};
  std::vector<Tensor> logits;
  for (int l = 0; l < 2; ++l) {
    std::vector<double> z(3 * 9);
    for (auto& x : z) x = n(rng);
    logits.emplace_back(nm::Shape{3, 9}, z, true);
  }
  // One target has a zero entry to exercise the 0 log 0 convention.
  const std::vector<std::vector<double>> targets{{0.2, 0.3, 0.5}, {0.0, 0.4, 0.6}};
  const std::vector<std::pair<std::size_t, std::size_t>> matches{{0, 1}, {2, 0}};
  auto f = [&] {
    std::vector<Tensor> att;
    for (const auto& z : logits) att.push_back(nm::softmax_lastdim(z));
    return fa::fada_loss(matches, att, b, targets).value;
  };
  EXPECT_LT(nm::grad_check(f, logits, 1e-5), 1e-4);
}

TEST(Instrumentation, CountsAlignmentCalls) {
  fa::reset_instrumentation();
  EXPECT_EQ(fa::instrumentation_count(), 0u);
  fa::js_divergence(std::vector<double>{1, 0}, std::vector<double>{0, 1});
  fa::marginalize_frames(std::vector<double>{0.5, 0.5}, std::vector<std::size_t>{0, 1, 2});
  EXPECT_EQ(fa::instrumentation_count(), 2u);
}
