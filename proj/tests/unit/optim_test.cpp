// Copyright 2026 The MoLF Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "molf/optim.hpp"

namespace molf {
namespace {

TEST(AdamW, FirstStepMovesByLearningRate) {
  AdamWSlot<double> slot;
  Tensor<double> p = Tensor<double>::vector({0.5});
  const Tensor<double> g = Tensor<double>::vector({1.0});
  adamw_step(slot, p, g, AdamWOptions{0.1, 0.9, 0.999, 1e-8, 0.0});
  // m_hat = 1, v_hat = 1 -> step = lr / (1 + eps)
  EXPECT_NEAR(p[0] - 0.5, -0.1, 1e-8);
  EXPECT_EQ(slot.step, 1u);
}

TEST(AdamW, ZeroGradientNoDecayIsStationary) {
  AdamWSlot<double> slot;
  Tensor<double> p = Tensor<double>::vector({1.25, -3.0});
  adamw_step(slot, p, Tensor<double>(Shape{2}), AdamWOptions{0.1, 0.9, 0.999, 1e-8, 0.0});
  EXPECT_EQ(p[0], 1.25);
  EXPECT_EQ(p[1], -3.0);
}

TEST(AdamW, DecoupledDecay) {
  AdamWSlot<double> slot;
  Tensor<double> p = Tensor<double>::vector({1.0});
  adamw_step(slot, p, Tensor<double>(Shape{1}), AdamWOptions{0.1, 0.9, 0.999, 1e-8, 0.01});
  EXPECT_NEAR(p[0], 0.999, 1e-12);
}

TEST(AdamW, ShapeMismatchIsContractViolation) {
  AdamWSlot<float> slot;
  Tensor<float> p(Shape{2});
  EXPECT_THROW(adamw_step(slot, p, Tensor<float>(Shape{3}), AdamWOptions{}),
               ContractViolation);
}

TEST(AdamW, MomentsTrackParameterShapeAndStepIncrements) {
  AdamWSlot<float> slot;
  Tensor<float> p(Shape{2, 3}, 1.f);
  Tensor<float> g(Shape{2, 3}, 0.5f);
  for (int i = 1; i <= 3; ++i) {
    adamw_step(slot, p, g, AdamWOptions{});
    EXPECT_EQ(slot.step, static_cast<std::uint64_t>(i));
    EXPECT_EQ(slot.m.shape(), p.shape());
    EXPECT_EQ(slot.v.shape(), p.shape());
  }
}

// Independent transcription of the recurrences over several steps.
TEST(AdamW, MatchesReferenceRecurrence) {
  const AdamWOptions o{0.01, 0.8, 0.99, 1e-6, 0.05};
  AdamWSlot<double> slot;
  Tensor<double> p = Tensor<double>::vector({0.3});
  double ref = 0.3, m = 0, v = 0;
  const double grads[] = {0.7, -1.2, 0.05, 2.0};
  for (int t = 1; t <= 4; ++t) {
    const double g = grads[t - 1];
    adamw_step(slot, p, Tensor<double>::vector({g}), o);
    m = o.beta1 * m + (1 - o.beta1) * g;
    v = o.beta2 * v + (1 - o.beta2) * g * g;
    const double mh = m / (1 - std::pow(o.beta1, t));
    const double vh = v / (1 - std::pow(o.beta2, t));
    ref -= o.lr * (mh / (std::sqrt(vh) + o.eps) + o.weight_decay * ref);
    EXPECT_NEAR(p[0], ref, 1e-14);
  }
}

TEST(AdamW, GroupLearningRatesAndFrozenSkip) {
  ad::ParameterStore<double> store;
  auto& a = store.add("a", Tensor<double>::vector({0.0}));
  auto& b = store.add("b", Tensor<double>::vector({0.0}), "gate");
  auto& c = store.add("c", Tensor<double>::vector({0.0}));
  c.set_frozen(true);
  for (auto* p : {&a, &b, &c}) p->grad()[0] = 1.0;
  AdamW<double> opt(AdamWOptions{5e-5, 0.9, 0.999, 1e-8, 0.0});
  opt.set_group_lr("gate", 1e-5);
  opt.step(store);
  EXPECT_NEAR(a.value()[0], -5e-5, 1e-12);
  EXPECT_NEAR(b.value()[0], -1e-5, 1e-12);
  EXPECT_EQ(c.value()[0], 0.0);
  EXPECT_EQ(opt.steps(), 1u);
}

}  // namespace
}  // namespace molf
