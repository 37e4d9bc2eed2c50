// Copyright 2026 The MoLF Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <set>

#include "molf/grad_check.hpp"
#include "molf/nn.hpp"
#include "support/gen.hpp"

namespace molf {
namespace {

using testing::random_tensor;

// Straight transcription of the textbook sinusoid, used as the oracle.
double reference_pe(double v, std::size_t channel, std::size_t width,
                    double base) {
  const std::size_t i = channel / 2;
  const double w = 1.0 / std::pow(base, 2.0 * static_cast<double>(i) /
                                            static_cast<double>(width));
  return channel % 2 == 0 ? std::sin(v * w) : std::cos(v * w);
}

TEST(SinusoidalPe, OriginAlternates) {
  auto pe = nn::sinusoidal_pe<double>(0.0, 0.0, 16);
  for (std::size_t i = 0; i < pe.size(); ++i)
    EXPECT_EQ(pe[i], i % 2 == 0 ? 0.0 : 1.0);
}

TEST(SinusoidalPe, AxesAreIndependent) {
  EXPECT_NE(nn::sinusoidal_pe<double>(2.0, 5.0, 8),
            nn::sinusoidal_pe<double>(5.0, 2.0, 8));
  EXPECT_EQ(nn::sinusoidal_pe<double>(4.0, 4.0, 8),
            nn::sinusoidal_pe<double>(4.0, 4.0, 8));
}

TEST(SinusoidalPe, MatchesTranscription) {
  auto pe = nn::sinusoidal_pe<double>(3.0, 7.0, 8, 10000.0);
  for (std::size_t c = 0; c < 4; ++c) {
    EXPECT_NEAR(pe[c], reference_pe(3.0, c, 4, 10000.0), 1e-15);
    EXPECT_NEAR(pe[4 + c], reference_pe(7.0, c, 4, 10000.0), 1e-15);
  }
}

TEST(SinusoidalPe, BoundedAndRejectsBadDim) {
  Rng rng(2);
  for (int i = 0; i < 50; ++i)
    for (double v : nn::sinusoidal_pe<double>(rng.uniform(-1e3, 1e3),
                                              rng.uniform(-1e3, 1e3), 32))
      EXPECT_LE(std::abs(v), 1.0);
  EXPECT_THROW(nn::sinusoidal_pe<double>(1, 1, 6), ContractViolation);
}

TEST(TimeEmbed, ZeroAlternates) {
  auto e = nn::time_embed<double>(0.0, 12);
  for (std::size_t i = 0; i < e.size(); ++i)
    EXPECT_EQ(e[i], i % 2 == 0 ? 0.0 : 1.0);
  EXPECT_NE(e, nn::time_embed<double>(1.0, 12));
}

TEST(TimeEmbed, InjectiveOnGrid) {
  std::set<std::vector<double>> seen;
  for (int i = 0; i < 1000; ++i)
    seen.insert(nn::time_embed<double>(i / 999.0, 32));
  EXPECT_EQ(seen.size(), 1000u);
}

TEST(TimeEmbed, MatchesTranscription) {
  auto e = nn::time_embed<double>(0.5, 8, 10000.0, 1000.0);
  for (std::size_t c = 0; c < 8; ++c)
    EXPECT_NEAR(e[c], reference_pe(500.0, c, 8, 10000.0), 1e-15);
}

TEST(TimeEmbed, OutOfRangeIsContractViolation) {
  EXPECT_THROW(nn::time_embed<double>(-0.01, 8), ContractViolation);
  EXPECT_THROW(nn::time_embed<double>(1.01, 8), ContractViolation);
}

class AttentionBlock : public ::testing::Test {
 protected:
  static constexpr std::size_t kDim = 8;
  ad::ParameterStore<double> store;
  Rng rng{17};

  nn::AttentionLayer<double> make(bool cross, std::size_t ctx = 0) {
    nn::AttentionConfig cfg{kDim, 2, 2, ctx, cross};
    nn::AttentionLayer<double> layer(store, cross ? "cross" : "self", cfg, rng);
    // Leave the identity-at-init regime so the tests see real attention.
    nn::randomize(store, rng, 0.4, cross ? "cross" : "self");
    return layer;
  }

  template <class F>
  Tensor<double> run(F&& f) {
    ad::Graph<double> g(false);
    return f(g).value();
  }
};

TEST_F(AttentionBlock, FreshBlockIsIdentity) {
  nn::AttentionLayer<double> layer(store, "id", nn::AttentionConfig{kDim, 2, 2},
                                   rng);
  auto x = random_tensor(rng, Shape{3, kDim});
  auto y = run([&](auto& g) {
    return layer.self_attention(g, g.constant(x), ad::one_segment(3));
  });
  EXPECT_EQ(y, x);
}

TEST_F(AttentionBlock, SingleTokenDependsOnlyOnItself) {
  auto layer = make(false);
  auto x = random_tensor(rng, Shape{1, kDim});
  auto alone = run([&](auto& g) {
    return layer.self_attention(g, g.constant(x), ad::one_segment(1));
  });
  // The same token as its own segment next to an unrelated one.
  Tensor<double> two(Shape{2, kDim});
  std::copy_n(x.data(), kDim, two.data());
  for (std::size_t i = 0; i < kDim; ++i) two[kDim + i] = rng.uniform(-3, 3);
  auto both = run([&](auto& g) {
    return layer.self_attention(g, g.constant(two), ad::Segments{1, 1});
  });
  for (std::size_t i = 0; i < kDim; ++i) EXPECT_NEAR(both[i], alone[i], 1e-14);
}

TEST_F(AttentionBlock, IdenticalTokensGiveIdenticalOutputs) {
  auto layer = make(false);
  auto row = random_tensor(rng, Shape{1, kDim});
  Tensor<double> x(Shape{2, kDim});
  std::copy_n(row.data(), kDim, x.data());
  std::copy_n(row.data(), kDim, x.data() + kDim);
  auto y = run([&](auto& g) {
    return layer.self_attention(g, g.constant(x), ad::one_segment(2));
  });
  for (std::size_t i = 0; i < kDim; ++i) EXPECT_EQ(y[i], y[kDim + i]);
}

TEST(SelfAttention, PermutationEquivariantAt32Bit) {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    ad::ParameterStore<float> store;
    nn::AttentionLayer<float> layer(store, "l", nn::AttentionConfig{16, 4, 2},
                                    rng);
    nn::randomize(store, rng, 0.3);
    const std::size_t n = testing::random_size(rng, 3, 6);
    auto x = random_tensor<float>(rng, Shape{n, 16}, -2, 2);
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    ad::Graph<float> g(false);
    auto y = layer.self_attention(g, g.constant(x), ad::one_segment(n));
    auto yp = layer.self_attention(g, ad::gather_rows(g.constant(x), perm),
                                   ad::one_segment(n));
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < 16; ++c)
        EXPECT_NEAR(yp.value().at(r, c), y.value().at(perm[r], c), 1e-5);
  }
}

TEST_F(AttentionBlock, SelfAttentionWidthMismatch) {
  auto layer = make(false);
  ad::Graph<double> g(false);
  EXPECT_THROW(layer.self_attention(g, g.constant(Tensor<double>(Shape{2, 5})),
                                    ad::one_segment(2)),
               ContractViolation);
}

TEST_F(AttentionBlock, CrossAttentionSingleContextIgnoresOtherSegments) {
  auto layer = make(true, 6);
  auto q = random_tensor(rng, Shape{3, kDim});
  auto c = random_tensor(rng, Shape{1, 6});
  auto a = run([&](auto& g) {
    return layer.cross_attention(g, g.constant(q), g.constant(c),
                                 ad::Segments{3}, ad::Segments{1});
  });
  EXPECT_EQ(a.rows(), 3u);
}

TEST_F(AttentionBlock, DuplicateContextEqualsSingle) {
  auto layer = make(true, 6);
  auto q = random_tensor(rng, Shape{4, kDim});
  auto c = random_tensor(rng, Shape{2, 6});
  // Every entry duplicated: softmax mass splits evenly across the copies.
  Tensor<double> all_dup(Shape{4, 6});
  std::copy_n(c.data(), 12, all_dup.data());
  std::copy_n(c.data(), 12, all_dup.data() + 12);
  auto single = run([&](auto& g) {
    return layer.cross_attention(g, g.constant(q), g.constant(c),
                                 ad::Segments{4}, ad::Segments{2});
  });
  auto doubled = run([&](auto& g) {
    return layer.cross_attention(g, g.constant(q), g.constant(all_dup),
                                 ad::Segments{4}, ad::Segments{4});
  });
  for (std::size_t i = 0; i < single.size(); ++i)
    EXPECT_NEAR(single[i], doubled[i], 1e-12);
  // One context vector repeated three times equals the vector alone.
  Tensor<double> one(Shape{1, 6}), three(Shape{3, 6});
  std::copy_n(c.data(), 6, one.data());
  for (int k = 0; k < 3; ++k) std::copy_n(c.data(), 6, three.data() + 6 * k);
  auto s1 = run([&](auto& g) {
    return layer.cross_attention(g, g.constant(q), g.constant(one),
                                 ad::Segments{4}, ad::Segments{1});
  });
  auto s3 = run([&](auto& g) {
    return layer.cross_attention(g, g.constant(q), g.constant(three),
                                 ad::Segments{4}, ad::Segments{3});
  });
  for (std::size_t i = 0; i < s1.size(); ++i) EXPECT_NEAR(s1[i], s3[i], 1e-12);
}

TEST_F(AttentionBlock, ZeroQueryProjectionGivesUniformAttention) {
  auto layer = make(true, 6);
  store.at("cross.wq.weight").value().fill(0.0);
  store.at("cross.wq.bias").value().fill(0.0);
  auto q = random_tensor(rng, Shape{2, kDim});
  auto c = random_tensor(rng, Shape{5, 6});
  std::vector<Tensor<double>> w;
  ad::Graph<double> g(false);
  layer.cross_attention(g, g.constant(q), g.constant(c), ad::Segments{2},
                        ad::Segments{5}, &w);
  for (const auto& m : w)
    for (double v : m.values()) EXPECT_NEAR(v, 0.2, 1e-15);
}

TEST_F(AttentionBlock, EmptyContextIsContractViolation) {
  auto layer = make(true, 6);
  ad::Graph<double> g(false);
  EXPECT_THROW(layer.cross_attention(g, g.constant(Tensor<double>(Shape{2, kDim})),
                                     g.constant(Tensor<double>(Shape{0, 6})),
                                     ad::Segments{2}, ad::Segments{0}),
               ContractViolation);
}

TEST_F(AttentionBlock, FiniteForBoundedInputs) {
  auto layer = make(false);
  auto x = random_tensor(rng, Shape{6, kDim}, -10, 10);
  auto y = run([&](auto& g) {
    return layer.self_attention(g, g.constant(x), ad::one_segment(6));
  });
  EXPECT_TRUE(y.all_finite());
}

TEST_F(AttentionBlock, ParameterGradients) {
  auto layer = make(false);
  auto x = random_tensor(rng, Shape{5, kDim});
  auto rep = grad_check_params(store, [&](ad::Graph<double>& g) {
    auto y = layer.self_attention(g, g.constant(x), ad::Segments{2, 3});
    return ad::sum(ad::square(y));
  });
  EXPECT_LT(rep.max_rel_error, 1e-4);
}

TEST_F(AttentionBlock, CrossParameterGradients) {
  auto layer = make(true, 6);
  auto q = random_tensor(rng, Shape{3, kDim});
  auto c = random_tensor(rng, Shape{4, 6});
  auto rep = grad_check_params(store, [&](ad::Graph<double>& g) {
    auto y = layer.cross_attention(g, g.constant(q), g.constant(c),
                                   ad::Segments{1, 2}, ad::Segments{3, 1});
    return ad::sum(ad::square(y));
  });
  EXPECT_LT(rep.max_rel_error, 1e-4);
}

TEST(Mlp, ZeroInitLastLayerOutputsZero) {
  ad::ParameterStore<float> store;
  Rng rng(1);
  nn::Mlp<float> mlp(store, "m", {3, 8, 5}, rng, true);
  ad::Graph<float> g(false);
  auto y = mlp(g, g.constant(random_tensor<float>(rng, Shape{4, 3})));
  for (float v : y.value().values()) EXPECT_EQ(v, 0.f);
}

TEST(Init, UniformFanInBound) {
  Rng rng(6);
  auto w = nn::uniform_fan_in<double>(rng, Shape{64, 10}, 64);
  for (double v : w.values()) EXPECT_LE(std::abs(v), 1.0 / 8.0);
}

}  // namespace
}  // namespace molf
