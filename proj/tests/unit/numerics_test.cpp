#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "segvggt/numerics/grad_check.hpp"
#include "segvggt/numerics/ops.hpp"
#include "segvggt/numerics/tape.hpp"

using namespace segvggt::numerics;

namespace {

Tensor random_tensor(std::mt19937_64& rng, Shape shape, double lo = -1.0, double hi = 1.0,
                     bool requires_grad = true) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = u(rng);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

void expect_values(const Tensor& t, std::initializer_list<double> expected, double tol = 0.0) {
  ASSERT_EQ(t.numel(), expected.size());
  std::size_t i = 0;
  for (double e : expected) {
    EXPECT_NEAR(t[i], e, tol) << "entry " << i;
    ++i;
  }
}

}  // namespace

TEST(Matmul, IdentityAndZeroRow) {
  const auto id = Tensor::matrix(2, 2, {1, 0, 0, 1});
  const auto m = Tensor::matrix(2, 2, {1, 2, 3, 4});
  expect_values(matmul(id, m), {1, 2, 3, 4});
  const auto z = matmul(Tensor::matrix(2, 2, {1, 0, 0, 0}), Tensor::matrix(2, 1, {0, 5}));
  expect_values(z, {0, 0});
}

TEST(Matmul, HandExpansion) {
  // 1*5+2*7, 1*6+2*8, 3*5+4*7, 3*6+4*8
  const auto c = matmul(Tensor::matrix(2, 2, {1, 2, 3, 4}), Tensor::matrix(2, 2, {5, 6, 7, 8}));
  expect_values(c, {19, 22, 43, 50});
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  try {
    matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3}));
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3] x [2x3]"), std::string::npos) << msg;
  }
}

TEST(Softmax, Examples) {
  expect_values(softmax_lastdim(Tensor::vector({0, 0})), {0.5, 0.5}, 1e-15);
  for (double c : {-700.0, -3.0, 0.0, 12.5, 900.0}) {
    expect_values(softmax_lastdim(Tensor::vector({c, c, c})), {1.0 / 3, 1.0 / 3, 1.0 / 3}, 1e-15);
  }
  // exp(ln 3) / (exp(ln 1) + exp(ln 3)) = 3 / 4
  expect_values(softmax_lastdim(Tensor::vector({std::log(1.0), std::log(3.0)})), {0.25, 0.75}, 1e-15);
}

TEST(Softmax, RowsSumToOneAndShiftInvariant) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> shift(-50.0, 50.0);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t rows = 1 + trial % 5, n = 1 + (trial * 7) % 13;
    const auto x = random_tensor(rng, {rows, n}, -30.0, 30.0, false);
    const auto y = softmax_lastdim(x);
    const auto ys = softmax_lastdim(add_scalar(x, shift(rng)));
    for (std::size_t r = 0; r < rows; ++r) {
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += y[r * n + j];
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
    for (std::size_t i = 0; i < y.numel(); ++i) EXPECT_NEAR(y[i], ys[i], 1e-12);
  }
}

TEST(Backward, SumGivesOnes) {
  auto x = Tensor::zeros({3, 4}, true);
  Tape tape;
  Tensor loss;
  {
    TapeScope scope(tape);
    loss = sum(x);
  }
  tape.backward(loss);
  for (double g : x.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Backward, SigmoidAtZero) {
  auto w = Tensor::scalar(0.0, true);
  Tape tape;
  Tensor loss;
  {
    TapeScope scope(tape);
    loss = sigmoid(w);
  }
  tape.backward(loss);
  EXPECT_DOUBLE_EQ(w.grad()[0], 0.25);
}

TEST(Backward, NonScalarLossRejected) {
  auto x = Tensor::zeros({2}, true);
  Tape tape;
  Tensor y;
  {
    TapeScope scope(tape);
    y = scale(x, 2.0);
  }
  EXPECT_THROW(tape.backward(y), ContractError);
}

TEST(Backward, NoRecordingWithoutTape) {
  auto x = Tensor::zeros({2}, true);
  const auto y = scale(x, 2.0);
  EXPECT_FALSE(y.requires_grad());
}

namespace {

// Two stacked single-head attention layers with an MLP readout.
struct AttentionToy {
  Tensor tokens, wq, wk, wv, w1, w2;
  explicit AttentionToy(std::mt19937_64& rng) {
    tokens = random_tensor(rng, {5, 4});
    wq = random_tensor(rng, {4, 4});
    wk = random_tensor(rng, {4, 4});
    wv = random_tensor(rng, {4, 4});
    w1 = random_tensor(rng, {4, 6});
    w2 = random_tensor(rng, {6, 1});
  }
  Tensor operator()() const {
    Tensor x = tokens;
    for (int layer = 0; layer < 2; ++layer) {
      const auto q = matmul(x, wq);
      const auto k = matmul(x, wk);
      const auto v = matmul(x, wv);
      const auto p = softmax_lastdim(mha_scores(q, k, 1));
      x = add(x, mha_combine(p, v));
    }
    return mean(matmul(gelu(matmul(x, w1)), w2));
  }
  std::vector<Tensor> params() const { return {tokens, wq, wk, wv, w1, w2}; }
};

}  // namespace

TEST(GradCheck, AttentionToyMatchesFiniteDifferences) {
  std::mt19937_64 rng(3);
  AttentionToy toy(rng);
  EXPECT_LT(grad_check([&] { return toy(); }, toy.params(), 1e-5), 1e-4);
}

TEST(GradCheck, QuadraticIsExact) {
  auto w = Tensor::scalar(3.0, true);
  EXPECT_LT(grad_check([&] { return square(w); }, {w}, 1e-5), 1e-8);
}

TEST(GradCheck, NonDeterministicFunctionRejected) {
  auto w = Tensor::scalar(1.0, true);
  int calls = 0;
  EXPECT_THROW(grad_check([&] { return scale(w, static_cast<double>(++calls)); }, {w}, 1e-5),
               CheckError);
}

TEST(GradCheck, RejectsNonPositiveEps) {
  auto w = Tensor::scalar(1.0, true);
  EXPECT_THROW(grad_check([&] { return square(w); }, {w}, 0.0), ContractError);
}

// Every primitive against central differences at random points.
TEST(GradCheck, EveryPrimitive) {
  std::mt19937_64 rng(21);
  const auto a = random_tensor(rng, {3, 4});
  const auto b = random_tensor(rng, {4, 5});
  const auto c = random_tensor(rng, {3, 4});
  const auto bt = random_tensor(rng, {5, 4});
  const auto bias = random_tensor(rng, {5});
  const auto pos = random_tensor(rng, {3, 4}, 0.2, 2.0);
  const auto gain = random_tensor(rng, {4});
  const auto beta = random_tensor(rng, {4});
  const auto probe = random_tensor(rng, {3, 4}, -1, 1, false);
  const auto probe5 = random_tensor(rng, {3, 5}, -1, 1, false);
  const auto weights = random_tensor(rng, {12}, -1, 1, false);
  auto dot = [&](const Tensor& t) { return weighted_sum(t, probe.data()); };
  auto dot5 = [&](const Tensor& t) { return weighted_sum(t, probe5.data()); };

  struct Case {
    const char* name;
    std::function<Tensor()> f;
    std::vector<Tensor> params;
  };
  const std::vector<std::size_t> idx{2, 0, 1};
  const std::vector<double> pick_w{0.5, -1.0, 2.0};
  const std::vector<std::size_t> bounds{0, 1, 4};
  std::vector<Case> cases{
      {"matmul", [&] { return dot5(matmul(a, b)); }, {a, b}},
      {"matmul_nt", [&] { return dot5(matmul_nt(a, bt)); }, {a, bt}},
      {"linear", [&] { return dot5(linear(a, b, bias)); }, {a, b, bias}},
      {"transpose", [&] { return sum(matmul(transpose(a), c)); }, {a, c}},
      {"add", [&] { return dot(add(a, c)); }, {a, c}},
      {"sub", [&] { return dot(sub(a, c)); }, {a, c}},
      {"mul", [&] { return dot(mul(a, c)); }, {a, c}},
      {"scale", [&] { return dot(scale(a, -1.7)); }, {a}},
      {"add_scalar", [&] { return sum(square(add_scalar(a, 0.3))); }, {a}},
      {"sigmoid", [&] { return dot(sigmoid(a)); }, {a}},
      {"exp", [&] { return dot(exp(a)); }, {a}},
      {"log", [&] { return dot(log(pos)); }, {pos}},
      {"abs", [&] { return dot(abs(a)); }, {a}},
      {"square", [&] { return dot(square(a)); }, {a}},
      {"gelu", [&] { return dot(gelu(a)); }, {a}},
      {"huber", [&] { return dot(huber(scale(a, 3.0), 0.4)); }, {a}},
      {"mean", [&] { return mean(square(a)); }, {a}},
      {"weighted_sum", [&] { return weighted_sum(square(a), weights.data()); }, {a}},
      {"pick", [&] { return pick(square(a), idx, pick_w); }, {a}},
      {"stack", [&] { return dot5(reshape(stack_scalars({sum(a), mean(c), sum(square(a)), mean(a), sum(c),
                                                          sum(abs(a)), mean(exp(a)), sum(gelu(c)), mean(sigmoid(a)),
                                                          sum(c), sum(a), mean(c), sum(mul(a, c)), mean(square(c)),
                                                          sum(exp(c))}),
                                             {3, 5})); },
       {a, c}},
      {"softmax", [&] { return dot(softmax_lastdim(scale(a, 2.0))); }, {a}},
      {"log_softmax", [&] { return dot(log_softmax_lastdim(a)); }, {a}},
      {"layer_norm", [&] { return dot(layer_norm(a, gain, beta)); }, {a, gain, beta}},
      {"normalize_rows", [&] { return dot(normalize_rows(a)); }, {a}},
      {"reshape", [&] { return sum(matmul(reshape(a, {4, 3}), a)); }, {a}},
      {"slice_rows", [&] { return sum(square(slice_rows(a, 1, 3))); }, {a}},
      {"concat_rows", [&] { return sum(mul(concat_rows({a, c}), concat_rows({c, a}))); }, {a, c}},
      {"slice_cols", [&] { return sum(square(slice_cols(a, 1, 3))); }, {a}},
      {"concat_cols", [&] { return sum(mul(concat_cols({a, c}), concat_cols({c, square(a)}))); }, {a, c}},
      {"gather_rows", [&] { return dot(gather_rows(square(a), idx)); }, {a}},
      {"mha", [&] {
         const auto p = softmax_lastdim(mha_scores(a, c, 2));
         return dot(mha_combine(p, square(c)));
       }, {a, c}},
      {"mean_leading", [&] { return sum(square(mean_leading(softmax_lastdim(mha_scores(a, c, 2))))); }, {a, c}},
      {"segment_sum", [&] { return sum(square(segment_sum_cols(a, bounds))); }, {a}},
  };
  for (auto& tc : cases) {
    const auto report = grad_check_report(tc.f, tc.params, 1e-5);
    EXPECT_LT(report.max_relative_error, 1e-4) << tc.name;
  }
}

TEST(Backward, DeterministicBitwise) {
  std::mt19937_64 rng(5);
  AttentionToy toy(rng);
  auto run = [&] {
    std::vector<std::vector<double>> grads;
    for (auto p : toy.params()) p.zero_grad();
    Tape tape;
    Tensor loss;
    {
      TapeScope scope(tape);
      loss = toy();
    }
    tape.backward(loss);
    for (const auto& p : toy.params()) grads.emplace_back(p.grad().begin(), p.grad().end());
    return grads;
  };
  EXPECT_EQ(run(), run());
}

TEST(Tensor, InvariantsEnforced) {
  EXPECT_THROW(Tensor({2, 2}, {1, 2, 3}), DimensionError);
  EXPECT_THROW(Tensor({0}, {}), DimensionError);
  auto t = Tensor::zeros({2, 3});
  EXPECT_FALSE(t.has_grad());
  EXPECT_EQ(t.mutable_grad().size(), t.numel());
  EXPECT_THROW(Tensor().shape(), ContractError);
}
