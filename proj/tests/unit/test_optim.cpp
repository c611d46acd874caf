// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace uni4eye;

namespace {

/// Scalar AdamW with decoupled weight decay, written out step by step.
struct ScalarAdamW {
  double m = 0, v = 0, w;
  long t = 0;
  void step(double g, double lr, double decay, bool decayed) {
    ++t;
    if (decayed)
      w -= lr * decay * w;
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    double mhat = m / (1 - std::pow(0.9, t));
    double vhat = v / (1 - std::pow(0.999, t));
    w -= lr * mhat / (std::sqrt(vhat) + 1e-8);
  }
};

} // namespace

TEST(LrSchedule, WarmupAndCosineEndpoints) {
  const long total = 200;
  const double lr0 = 5e-4;
  EXPECT_EQ(learning_rate(0, total, lr0, 0.05), 0.0);
  EXPECT_DOUBLE_EQ(learning_rate(5, total, lr0, 0.05), 0.5 * lr0);
  EXPECT_DOUBLE_EQ(learning_rate(10, total, lr0, 0.05), lr0);
  EXPECT_LT(learning_rate(total - 1, total, lr0, 0.05), 1e-3 * lr0);
  EXPECT_NEAR(learning_rate(total, total, lr0, 0.05), 0.0, 1e-20);
  EXPECT_DOUBLE_EQ(learning_rate(105, total, lr0, 0.05), 0.5 * lr0);
}

TEST(LrSchedule, MonotoneAfterWarmupAndWithinBounds) {
  double prev = learning_rate(7, 137, 1.0, 0.05);
  for (long s = 8; s <= 137; ++s) {
    double lr = learning_rate(s, 137, 1.0, 0.05);
    EXPECT_LE(lr, prev + 1e-15);
    EXPECT_GE(lr, 0.0);
    prev = lr;
  }
}

TEST(LrSchedule, ZeroWarmupStartsAtPeak) {
  EXPECT_EQ(learning_rate(0, 10, 2.0, 0.0), 2.0);
  EXPECT_EQ(learning_rate(3, 0, 2.0, 0.1), 2.0);
}

TEST(AdamW, MatchesScalarReference) {
  Rng rng(0);
  Param<double> w, b;
  w.init("w", 3, 2, true);
  b.init("b", 1, 2, false);
  w.init_normal(rng, 1.0);
  b.init_normal(rng, 1.0);
  std::vector<ScalarAdamW> ref;
  for (auto *p : {&w, &b})
    for (Eigen::Index i = 0; i < p->value.size(); ++i)
      ref.push_back({0, 0, p->value.data()[i]});
  AdamW<double> opt({0.9, 0.999, 1e-8, 0.05});
  for (int step = 0; step < 25; ++step) {
    const double lr = 1e-2 * (1 + step % 3);
    std::size_t k = 0;
    for (auto *p : {&w, &b})
      for (Eigen::Index i = 0; i < p->value.size(); ++i) {
        double g = uniform(rng, -1, 1);
        p->grad.data()[i] = g;
        ref[k++].step(g, lr, 0.05, p->decay);
      }
    opt.step({&w, &b}, lr);
  }
  std::size_t k = 0;
  for (auto *p : {&w, &b})
    for (Eigen::Index i = 0; i < p->value.size(); ++i)
      EXPECT_NEAR(p->value.data()[i], ref[k++].w, 1e-12);
  EXPECT_EQ(opt.steps_taken(), 25);
}

TEST(AdamW, ZeroLearningRateLeavesParametersUnchanged) {
  Rng rng(1);
  Param<float> w;
  w.init("w", 4, 4, true);
  w.init_normal(rng);
  Mat<float> before = w.value;
  w.grad.setConstant(0.7f);
  AdamW<float> opt;
  opt.step({&w}, 0.0);
  EXPECT_EQ(w.value, before);
}

TEST(AdamW, ParameterListMustNotChange) {
  Param<double> a, b;
  a.init("a", 1, 1);
  b.init("b", 1, 1);
  AdamW<double> opt;
  opt.step({&a}, 0.1);
  EXPECT_THROW(opt.step({&a, &b}, 0.1), ShapeError);
}

TEST(AdamW, DecaysOnlyFlaggedParameters) {
  Param<double> w, b;
  w.init("w", 1, 1, true);
  b.init("b", 1, 1, false);
  w.value(0, 0) = 1.0;
  b.value(0, 0) = 1.0;
  AdamW<double> opt({0.9, 0.999, 1e-8, 0.5});
  opt.step({&w, &b}, 0.1);
  EXPECT_DOUBLE_EQ(w.value(0, 0), 0.95);
  EXPECT_DOUBLE_EQ(b.value(0, 0), 1.0);
}
