#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "mkelab/netcore.hpp"
#include "mkelab/perturb.hpp"
#include "support.hpp"

using namespace mkelab;

TEST(Mlp, ShapesFollowLayerSizes) {
  MLP teacher({1, 32, 32, 2}, Activation::tanh, 0);
  ASSERT_EQ(teacher.num_layers(), 3);
  EXPECT_EQ(teacher.weight(0).rows(), 32);
  EXPECT_EQ(teacher.weight(0).cols(), 1);
  EXPECT_EQ(teacher.weight(2).rows(), 2);
  EXPECT_EQ(teacher.bias(1).size(), 32);
  MLP student({2, 16, 16, 2}, Activation::tanh, 0);
  EXPECT_EQ(student.weight(0).cols(), 2);
  EXPECT_EQ(student.weight(1).rows(), 16);
}

TEST(Mlp, GlorotRangeAndZeroBias) {
  MLP m({3, 7, 2}, Activation::tanh, 9);
  const double lim0 = std::sqrt(6.0 / 10.0);
  EXPECT_LE(m.weight(0).cwiseAbs().maxCoeff(), lim0);
  EXPECT_EQ(m.bias(0).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Mlp, InvalidArchitectures) {
  EXPECT_THROW(MLP({2}, Activation::tanh, 0), Error);
  EXPECT_THROW(MLP({}, Activation::tanh, 0), Error);
  EXPECT_THROW(MLP({2, 0, 2}, Activation::tanh, 0), Error);
  EXPECT_THROW(MLP({2, 3, 1}, Activation::tanh, 0), Error);
  try {
    MLP({2}, Activation::tanh, 0);
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::invalid_architecture);
  }
}

TEST(Mlp, SeedDeterminism) {
  EXPECT_TRUE(MLP({2, 5, 2}, Activation::tanh, 3) == MLP({2, 5, 2}, Activation::tanh, 3));
  EXPECT_FALSE(MLP({2, 5, 2}, Activation::tanh, 3) == MLP({2, 5, 2}, Activation::tanh, 4));
}

TEST(Forward, ZeroNetGivesZeroLogits) {
  MLP m({2, 4, 3}, Activation::tanh, 1);
  m.set_zero();
  Mat x(2, 1);
  x << 0.3, -2.0;
  EXPECT_EQ(forward(m, x).logits.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Forward, EvalIsDeterministic) {
  MLP m({2, 6, 2}, Activation::tanh, 2);
  Mat x = Mat::Random(2, 5);
  EXPECT_EQ(forward(m, x).logits, forward(m, x).logits);
}

TEST(Forward, ZeroVarianceNoiseIsIdentity) {
  MLP m({2, 6, 2}, Activation::tanh, 2);
  Mat x = Mat::Random(2, 5);
  Rng rng(1);
  EXPECT_EQ(forward(m, x, Mode::train, Transform::input_gaussian(0.0), rng).logits,
            forward(m, x).logits);
}

TEST(Forward, ShapeAndModeErrors) {
  MLP m({2, 6, 2}, Activation::tanh, 2);
  Rng rng(1);
  try {
    forward(m, Mat::Zero(3, 1));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::shape);
  }
  EXPECT_THROW(forward(m, Mat(Mat::Zero(2, 1)), Mode::eval, Transform::input_gaussian(1.0), rng), Error);
}

TEST(Forward, BatchMatchesPerSample) {
  MLP m({2, 5, 3}, Activation::relu, 4);
  Mat x = Mat::Random(2, 4);
  Mat batch = forward(m, x).logits;
  for (int c = 0; c < 4; ++c)
    EXPECT_LT((forward(m, Mat(x.col(c))).logits - batch.col(c)).norm(), 1e-14);
}

TEST(Backward, ZeroUpstreamGivesZeroGradients) {
  MLP m({2, 5, 3}, Activation::tanh, 1);
  auto f = forward(m, Mat::Random(2, 3));
  EXPECT_EQ(backward(m, f.tape, Mat::Zero(3, 3)).max_abs(), 0.0);
}

TEST(Backward, StaleTapeIsRejected) {
  MLP m({2, 5, 3}, Activation::tanh, 1);
  auto f = forward(m, Mat::Random(2, 3));
  m.weight_mut(0)(0, 0) += 1.0;
  try {
    backward(m, f.tape, Mat::Zero(3, 3));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::tape);
  }
  MLP other({2, 5, 3}, Activation::tanh, 1);
  EXPECT_THROW(backward(other, forward(m, Mat::Random(2, 3)).tape, Mat::Zero(3, 3)), Error);
}

TEST(Backward, DroppedUnitsGetNoGradient) {
  MLP m({2, 8, 2}, Activation::tanh, 5);
  Rng rng(3);
  Mat x = Mat::Random(2, 1);
  auto f = forward(m, x, Mode::train, Transform::dropout(0.5), rng);
  Mat up(2, 1);
  up << 1.0, -1.0;
  const Gradients g = backward(m, f.tape, up);
  for (int u = 0; u < 8; ++u)
    if (f.tape.masks[0](u, 0) == 0.0) {
      EXPECT_EQ(g.weights[0].row(u).cwiseAbs().maxCoeff(), 0.0);
      EXPECT_EQ(g.biases[0][u], 0.0);
      EXPECT_EQ(g.weights[1].col(u).cwiseAbs().maxCoeff(), 0.0);
    }
}

// Central differences on every parameter of the scalar loss
// sum_c cls_loss(y_c, f(x_c)), replaying the same perturbation draws.
TEST(Backward, MatchesFiniteDifferences) {
  struct Case {
    std::vector<int> sizes;
    Activation act;
    Transform t;
  };
  const std::vector<Case> cases = {
      {{2, 5, 3}, Activation::tanh, Transform::none()},
      {{1, 32, 32, 2}, Activation::tanh, Transform::none()},
      {{2, 16, 16, 2}, Activation::tanh, Transform::input_gaussian(0.5)},
      {{2, 16, 16, 2}, Activation::tanh, Transform::hidden_gaussian(2.0, 0)},
      {{2, 16, 16, 2}, Activation::tanh, Transform::dropout(0.4, 0)},
      {{3, 6, 4, 5}, Activation::tanh, Transform::dropout(0.3, -1)},
      {{2, 7, 2}, Activation::relu, Transform::hidden_gaussian(0.5, 0)},
  };
  for (std::size_t k = 0; k < cases.size(); ++k) {
    const auto& cs = cases[k];
    const double err = test::max_fd_relative_error(cs.sizes, cs.act, cs.t, 100 + k);
    EXPECT_LT(err, 1e-4) << "case " << k;
  }
}

TEST(Softmax, Examples) {
  Vec p(2);
  p << 0.0, 0.0;
  EXPECT_NEAR(softmax(p)[0], 0.5, 1e-15);
  p << std::log(3.0), 0.0;
  EXPECT_NEAR(softmax(p)[0], 0.75, 1e-15);
  EXPECT_NEAR(softmax(p)[1], 0.25, 1e-15);
  p << 1000.0, 0.0;
  EXPECT_NEAR(softmax(p)[0], 1.0, 1e-15);
  EXPECT_TRUE(std::isfinite(softmax(p)[1]));
  p << std::nan(""), 0.0;
  try {
    softmax(p);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::numeric);
  }
}

TEST(Softmax, ShiftInvarianceAndNormalization) {
  Rng rng(2);
  std::normal_distribution<double> n(0.0, 3.0);
  for (int i = 0; i < 200; ++i) {
    Vec p(5);
    for (int k = 0; k < 5; ++k) p[k] = n(rng);
    const Vec a = softmax(p).values();
    const Vec b = softmax((p.array() + 17.5).matrix()).values();
    EXPECT_LT((a - b).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_NEAR(a.sum(), 1.0, 1e-9);
  }
}

TEST(ClsLoss, Examples) {
  Vec z = Vec::Zero(2);
  Vec y(2);
  y << 1.0, 0.0;
  EXPECT_NEAR(cls_loss(ProbVector(y), z), std::log(2.0), 1e-12);
  y << 0.5, 0.5;
  EXPECT_NEAR(cls_loss(ProbVector(y), z), 0.0, 1e-12);
  y << 0.8, 0.2;
  // independent scalar evaluation of KL([0.8,0.2] || [0.5,0.5])
  const double kl = 0.8 * std::log(0.8 / 0.5) + 0.2 * std::log(0.2 / 0.5);
  EXPECT_NEAR(kl, 0.192745, 1e-6);
  EXPECT_NEAR(cls_loss(ProbVector(y), z), kl, 1e-12);
  EXPECT_THROW(cls_loss(ProbVector(y), Vec::Zero(3)), Error);
}

TEST(ClsLoss, NonNegativeAndZeroAtMatch) {
  Rng rng(4);
  for (int i = 0; i < 300; ++i) {
    const Vec p = test::random_logits(4, rng);
    const ProbVector y = test::random_prob(4, rng);
    EXPECT_GE(cls_loss(y, p), 0.0);
    EXPECT_LT(cls_loss(softmax(p), p), 1e-12);
  }
}

TEST(ClsLossGrad, Examples) {
  Vec y(2);
  y << 1.0, 0.0;
  const Vec g = cls_loss_grad(ProbVector(y), Vec::Zero(2));
  EXPECT_NEAR(g[0], -0.5, 1e-15);
  EXPECT_NEAR(g[1], 0.5, 1e-15);
  Vec p(3);
  p << 0.2, -1.0, 2.0;
  EXPECT_LT(cls_loss_grad(softmax(p), p).norm(), 1e-15);
}

TEST(ClsLossGrad, LipschitzBound) {
  Rng rng(6);
  for (int K : {2, 5, 10}) {
    int violations = 0;
    for (int i = 0; i < 1000; ++i) {
      const Vec p = test::random_logits(K, rng);
      const ProbVector y = test::random_prob(K, rng);
      if (cls_loss_grad(y, p).norm() > std::sqrt(static_cast<double>(K)) + 1e-9) ++violations;
    }
    EXPECT_EQ(violations, 0) << "K=" << K;
  }
}

TEST(ClsLossGrad, MatchesFiniteDifferenceOfLoss) {
  Rng rng(8);
  for (int i = 0; i < 50; ++i) {
    const Vec p = test::random_logits(4, rng);
    const ProbVector y = test::random_prob(4, rng);
    const Vec g = cls_loss_grad(y, p);
    for (int k = 0; k < 4; ++k) {
      Vec a = p, b = p;
      a[k] += 1e-6;
      b[k] -= 1e-6;
      EXPECT_NEAR((cls_loss(y, a) - cls_loss(y, b)) / 2e-6, g[k], 1e-7);
    }
  }
}

TEST(L2Distance, Properties) {
  Vec a(2), b(2);
  a << 0.0, 0.0;
  b << 3.0, 4.0;
  EXPECT_DOUBLE_EQ(l2_distance(a, b), 5.0);
  EXPECT_EQ(l2_distance(b, b), 0.0);
  EXPECT_THROW(l2_distance(a, Vec::Zero(3)), Error);
  Rng rng(1);
  for (int i = 0; i < 200; ++i) {
    const Vec p = test::random_logits(3, rng), q = test::random_logits(3, rng),
              r = test::random_logits(3, rng);
    EXPECT_DOUBLE_EQ(l2_distance(p, q), l2_distance(q, p));
    EXPECT_LE(l2_distance(p, r), l2_distance(p, q) + l2_distance(q, r) + 1e-12);
  }
}

TEST(ProbVector, Validation) {
  Vec v(2);
  v << 0.7, 0.2;
  EXPECT_THROW(ProbVector{v}, Error);
  v << 1.2, -0.2;
  EXPECT_THROW(ProbVector{v}, Error);
  v << 0.5, 0.5;
  EXPECT_EQ(ProbVector(v).argmax(), 0);
  EXPECT_EQ(ProbVector::one_hot(1, 3).values()[1], 1.0);
}

TEST(Optimizer, ZeroGradientLeavesParameters) {
  MLP m({2, 3, 2}, Activation::tanh, 1);
  const MLP before = m;
  OptState st;
  OptimizerConfig sgd{OptimizerKind::sgd, 0.1};
  optimizer_step(m, m.zero_gradients(), st, sgd);
  EXPECT_TRUE(m == before);
}

TEST(Optimizer, DescentStepOnSquare) {
  // f(w) = w^2 at w = 1: gradient 2, lr 0.1 -> 0.8
  MLP m({1, 2}, Activation::tanh, 1);
  m.weight_mut(0)(0, 0) = 1.0;
  Gradients g = m.zero_gradients();
  g.weights[0](0, 0) = 2.0 * m.weight(0)(0, 0);
  OptState st;
  optimizer_step(m, g, st, {OptimizerKind::sgd, 0.1});
  EXPECT_DOUBLE_EQ(m.weight(0)(0, 0), 0.8);
}

TEST(Optimizer, NonFiniteGradientIsNumericError) {
  MLP m({1, 2}, Activation::tanh, 1);
  Gradients g = m.zero_gradients();
  g.biases[0][0] = std::nan("");
  OptState st;
  try {
    optimizer_step(m, g, st, {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::numeric);
  }
}

TEST(Optimizer, AdamFirstStepHasLearningRateMagnitude) {
  MLP m({1, 2}, Activation::tanh, 1);
  const double w0 = m.weight(0)(0, 0);
  Gradients g = m.zero_gradients();
  g.weights[0](0, 0) = 0.37;
  OptState st;
  optimizer_step(m, g, st, {});
  EXPECT_NEAR(m.weight(0)(0, 0), w0 - 1e-3, 1e-10);
}

TEST(Optimizer, LossDecreasesOnSeparableSet) {
  MLP m({2, 8, 2}, Activation::tanh, 3);
  Mat x(2, 20);
  std::vector<int> y;
  for (int i = 0; i < 20; ++i) {
    x(0, i) = i < 10 ? -1.0 - 0.1 * i : 1.0 + 0.1 * i;
    x(1, i) = 0.05 * i;
    y.push_back(i < 10 ? 0 : 1);
  }
  auto loss = [&](Mat* grad) {
    auto f = forward(m, x);
    double total = 0.0;
    Mat up(2, 20);
    for (int i = 0; i < 20; ++i) {
      const auto t = ProbVector::one_hot(y[i], 2);
      total += cls_loss(t, f.logits.col(i));
      up.col(i) = cls_loss_grad(t, f.logits.col(i));
    }
    if (grad) *grad = up;
    return total;
  };
  OptState st;
  OptimizerConfig sgd{OptimizerKind::sgd, 0.05};
  double prev = loss(nullptr);
  for (int s = 0; s < 10; ++s) {
    Mat up;
    loss(&up);
    optimizer_step(m, backward(m, forward(m, x).tape, up), st, sgd);
    const double now = loss(nullptr);
    EXPECT_LT(now, prev);
    prev = now;
  }
}

TEST(Training, BitReproducible) {
  const Mat x = Mat::Random(2, 10);
  auto run = [&x] {
    MLP m({2, 6, 2}, Activation::tanh, 11);
    Rng rng(5);
    OptState st;
    for (int s = 0; s < 20; ++s) {
      auto f = forward(m, x, Mode::train, Transform::dropout(0.3), rng);
      optimizer_step(m, backward(m, f.tape, f.logits), st, {});
    }
    return m;
  };
  EXPECT_TRUE(run() == run());
}
