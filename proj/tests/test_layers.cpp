#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <memory>

#include "trainspeed/errors.hpp"
#include "trainspeed/nn/layers.hpp"
#include "trainspeed/nn/optim.hpp"
#include "trainspeed/rng.hpp"

using namespace trainspeed;
using namespace trainspeed::nn;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = scale * (2.0 * uniform01(rng) - 1.0);
  return t;
}

void init(Layer& layer, std::uint64_t seed) {
  Rng rng(seed);
  layer.initialize(rng);
}

// Perturbs parameters away from their initial values so zero-initialized
// biases and unit batch-norm scales are checked at generic points.
void jitter(Layer& layer, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Parameter*> params;
  layer.collect_parameters(params);
  for (auto* p : params)
    for (auto& v : p->value.values()) v += 0.2 * (2.0 * uniform01(rng) - 1.0);
}

constexpr double kTolerance = 1e-4;

}  // namespace

TEST(GradientCheck, Conv2D) {
  Rng rng(1);
  Conv2D conv(2, 3, 3, 2);
  init(conv, 2);
  jitter(conv, 3);
  const auto x = random_tensor({2, 6, 3, 2}, rng);
  const auto t = random_tensor({2, 6, 3, 3}, rng);
  EXPECT_LT(gradient_check(conv, x, t).max_relative_error, kTolerance);
  EXPECT_LT(input_gradient_check(conv, x, t).max_relative_error, kTolerance);
}

TEST(GradientCheck, Conv1DBothPaddings) {
  for (auto padding : {Padding::same, Padding::valid}) {
    Rng rng(4);
    Conv1D conv(3, 4, 3, padding);
    init(conv, 5);
    jitter(conv, 6);
    const auto x = random_tensor({3, 9, 3}, rng);
    const Shape out{3, padding == Padding::same ? 9u : 7u, 4};
    const auto t = random_tensor(out, rng);
    EXPECT_LT(gradient_check(conv, x, t).max_relative_error, kTolerance);
    EXPECT_LT(input_gradient_check(conv, x, t).max_relative_error, kTolerance);
  }
}

TEST(GradientCheck, Dense) {
  Rng rng(7);
  Dense dense(5, 3);
  init(dense, 8);
  jitter(dense, 9);
  const auto x = random_tensor({4, 5}, rng);
  const auto t = random_tensor({4, 3}, rng);
  EXPECT_LT(gradient_check(dense, x, t).max_relative_error, kTolerance);
  EXPECT_LT(input_gradient_check(dense, x, t).max_relative_error, kTolerance);
}

TEST(GradientCheck, BatchNormTrainingMode) {
  Rng rng(10);
  BatchNorm bn(3);
  init(bn, 11);
  jitter(bn, 12);
  const auto x = random_tensor({4, 5, 3}, rng, 2.0);
  const auto t = random_tensor({4, 5, 3}, rng);
  EXPECT_LT(gradient_check(bn, x, t).max_relative_error, kTolerance);
  EXPECT_LT(input_gradient_check(bn, x, t).max_relative_error, kTolerance);
}

TEST(GradientCheck, ReluPoolsFlattenReshape) {
  Rng rng(13);
  Sequential seq;
  seq.emplace<Reshape>(Shape{12, 2});
  seq.emplace<ReLU>();
  seq.emplace<MaxPool1D>(3, 2);
  seq.emplace<GlobalMaxPool1D>();
  seq.emplace<Flatten>();
  // Distinct values keep every max and ReLU away from a kink.
  Tensor x({2, 24});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::sin(1.7 * i + 0.3) + 0.01 * i;
  const auto t = random_tensor({2, 2}, rng);
  EXPECT_LT(input_gradient_check(seq, x, t).max_relative_error, kTolerance);
}

TEST(GradientCheck, MultiBranch) {
  Rng rng(14);
  std::vector<std::unique_ptr<Sequential>> branches;
  for (int i = 0; i < 3; ++i) {
    auto b = std::make_unique<Sequential>();
    b->emplace<Conv1D>(1, 2, 2);
    b->emplace<ReLU>();
    b->emplace<GlobalMaxPool1D>();
    branches.push_back(std::move(b));
  }
  Sequential net;
  net.emplace<MultiBranch>(std::move(branches));
  net.emplace<Dense>(6, 1);
  init(net, 15);
  jitter(net, 16);
  const auto x = random_tensor({4, 8, 3}, rng);
  const auto t = random_tensor({4, 1}, rng);
  EXPECT_LT(gradient_check(net, x, t).max_relative_error, kTolerance);
  EXPECT_LT(input_gradient_check(net, x, t).max_relative_error, kTolerance);
}

TEST(BatchNorm, InferenceUsesRunningStatistics) {
  BatchNorm bn(1, 0.0, 0.9);
  Rng rng(0);
  bn.initialize(rng);
  const Tensor x({4, 1}, {1.0, 2.0, 3.0, 4.0});
  const auto y = bn.forward(x, Context::train());
  // batch mean 2.5, biased variance 1.25
  EXPECT_NEAR(y[0], (1.0 - 2.5) / std::sqrt(1.25), 1e-12);
  EXPECT_NEAR(bn.running_mean()[0], 0.1 * 2.5, 1e-12);
  EXPECT_NEAR(bn.running_var()[0], 0.9 + 0.1 * 1.25, 1e-12);
  const auto z = bn.forward(x, Context::infer());
  EXPECT_NEAR(z[0], (1.0 - 0.25) / std::sqrt(1.025), 1e-12);
}

TEST(BatchNorm, TrainingNeedsTwoSamples) {
  BatchNorm bn(2);
  Rng rng(0);
  bn.initialize(rng);
  EXPECT_THROW(bn.forward(Tensor({1, 2}), Context::train()), DimensionError);
  EXPECT_NO_THROW(bn.forward(Tensor({1, 2}), Context::infer()));
}

TEST(Dropout, InvertedScalingAndInferenceIdentity) {
  Dropout d(0.5, 3);
  Tensor x({1, 10000}, 1.0);
  const auto y = d.forward(x, Context::train());
  double sum = 0.0;
  std::size_t zeros = 0;
  for (double v : y.values()) {
    EXPECT_TRUE(v == 0.0 || v == 2.0);
    zeros += v == 0.0;
    sum += v;
  }
  EXPECT_NEAR(sum / 10000.0, 1.0, 0.05);
  EXPECT_NEAR(zeros / 10000.0, 0.5, 0.03);
  EXPECT_EQ(d.forward(x, Context::infer()), x);
  EXPECT_EQ(d.forward(x, Context::deterministic_train()), x);
  const auto g = d.backward(Tensor({1, 10000}, 1.0));
  EXPECT_EQ(g, d.forward(x, Context::deterministic_train()));
}

TEST(Dropout, RateOutsideRangeIsAConfigError) {
  EXPECT_THROW(Dropout(1.0), ConfigError);
  EXPECT_THROW(Dropout(-0.1), ConfigError);
  EXPECT_NO_THROW(Dropout(0.0));
}

TEST(Relu, ForwardBackward) {
  ReLU r;
  const auto y = r.forward(Tensor({1, 4}, {-1.0, 0.0, 2.0, -3.0}), Context::infer());
  EXPECT_EQ(y.buffer(), (std::vector<double>{0.0, 0.0, 2.0, 0.0}));
  EXPECT_EQ(r.backward(Tensor({1, 4}, 1.0)).buffer(), (std::vector<double>{0.0, 0.0, 1.0, 0.0}));
}

TEST(Sequential, NonFiniteActivationIsReported) {
  Sequential s;
  s.emplace<ReLU>();
  Tensor x({1, 2}, {1.0, std::numeric_limits<double>::infinity()});
  EXPECT_THROW(s.forward(x, Context::infer()), NonFiniteError);
}

TEST(Shapes, OutputShapes) {
  EXPECT_EQ(Conv1D(3, 8, 5).output_shape({20, 3}), (Shape{20, 8}));
  EXPECT_EQ(Conv1D(3, 8, 5, Padding::valid).output_shape({20, 3}), (Shape{16, 8}));
  EXPECT_EQ(Conv2D(1, 4, 7, 2).output_shape({20, 3, 1}), (Shape{20, 3, 4}));
  EXPECT_EQ(MaxPool1D(5, 5).output_shape({100, 32}), (Shape{20, 32}));
  EXPECT_EQ(GlobalMaxPool1D().output_shape({17, 6}), (Shape{6}));
  EXPECT_EQ(Flatten().output_shape({4, 32}), (Shape{128}));
  EXPECT_EQ(Dense(128, 1).output_shape({128}), (Shape{1}));
}

TEST(Shapes, DimensionMismatchThrows) {
  Dense d(4, 2);
  Rng rng(0);
  d.initialize(rng);
  EXPECT_THROW(d.forward(Tensor({2, 5}), Context::infer()), DimensionError);
  Conv1D c(2, 3, 3);
  c.initialize(rng);
  EXPECT_THROW(c.forward(Tensor({1, 5, 3}), Context::infer()), DimensionError);
}

TEST(Init, KaimingUniformBoundsAndZeroBias) {
  Dense d(24, 100);
  Rng rng(17);
  d.initialize(rng);
  const double bound = std::sqrt(6.0 / 24.0);
  double lo = 0.0, hi = 0.0;
  for (double v : d.weights().value.values()) {
    EXPECT_LE(std::abs(v), bound);
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  EXPECT_GT(hi, 0.9 * bound);
  EXPECT_LT(lo, -0.9 * bound);
  for (double v : d.bias().value.values()) EXPECT_EQ(v, 0.0);
}

TEST(Loss, MseValueAndGradient) {
  const Tensor p({2, 1}, {1.0, 3.0});
  const Tensor t({2, 1}, {0.0, 1.0});
  const auto l = mse_loss(p, t);
  EXPECT_DOUBLE_EQ(l.value, (1.0 + 4.0) / 2.0);
  EXPECT_EQ(l.grad.buffer(), (std::vector<double>{1.0, 2.0}));
  EXPECT_THROW(mse_loss(p, Tensor({3, 1})), DimensionError);
}

TEST(Sgd, StepIsThetaMinusEtaGrad) {
  Parameter p{"w", Tensor({2}, {1.0, 2.0}), Tensor({2}, {0.5, -1.0})};
  std::vector<Parameter*> ps{&p};
  sgd_step(ps, 0.1);
  EXPECT_DOUBLE_EQ(p.value[0], 0.95);
  EXPECT_DOUBLE_EQ(p.value[1], 2.1);
  EXPECT_EQ(p.grad[0], 0.0);
  Parameter q{"q", Tensor({2}), Tensor()};
  std::vector<Parameter*> qs{&q};
  EXPECT_THROW(sgd_step(qs, 0.1), DimensionError);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  Parameter p{"w", Tensor({2}, {1.0, 2.0}), Tensor({2}, {0.5, -3.0})};
  std::vector<Parameter*> ps{&p};
  Optimizer opt(OptimizerKind::adam, 0.01);
  opt.step(ps);
  EXPECT_NEAR(p.value[0], 1.0 - 0.01, 1e-8);
  EXPECT_NEAR(p.value[1], 2.0 + 0.01, 1e-8);
}

TEST(State, SaveLoadRoundTrip) {
  Sequential a;
  a.emplace<Conv1D>(3, 4, 2);
  a.emplace<BatchNorm>(4);
  a.emplace<Flatten>();
  a.emplace<Dense>(20, 1);
  init(a, 1);
  Rng rng(2);
  a.forward(random_tensor({3, 5, 3}, rng), Context::train());  // moves running stats
  Sequential b;
  b.emplace<Conv1D>(3, 4, 2);
  b.emplace<BatchNorm>(4);
  b.emplace<Flatten>();
  b.emplace<Dense>(20, 1);
  init(b, 99);
  load_state(b, save_state(a));
  const auto x = random_tensor({2, 5, 3}, rng);
  EXPECT_EQ(a.forward(x, Context::infer()), b.forward(x, Context::infer()));

  Sequential c;
  c.emplace<Dense>(15, 1);
  EXPECT_THROW(load_state(c, save_state(a)), ParseError);
}
