// Copyright 2026 The MoLF Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "molf/flow.hpp"
#include "molf/grad_check.hpp"
#include "support/gen.hpp"

namespace molf {
namespace {

using testing::random_tensor;

TEST(OtPath, EndpointsAndMidpoint) {
  auto z0 = Tensor<double>::matrix(1, 2, {0.0, 4.0});
  auto z1 = Tensor<double>::matrix(1, 2, {2.0, -2.0});
  EXPECT_EQ(ot_path(z0, z1, 0.0), z0);
  EXPECT_EQ(ot_path(z0, z1, 1.0), z1);
  EXPECT_EQ(ot_path(z0, z1, 0.5), Tensor<double>::matrix(1, 2, {1.0, 1.0}));
  EXPECT_THROW(ot_path(z0, z1, 1.01), ContractViolation);
  EXPECT_THROW(ot_path(z0, z1, -0.1), ContractViolation);
  EXPECT_EQ(target_velocity(z0, z1), Tensor<double>::matrix(1, 2, {2.0, -6.0}));
}

TEST(OtPath, PerRowTimesAndTerminalEstimate) {
  Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t b = testing::random_size(rng, 1, 6), l = testing::random_size(rng, 1, 5);
    auto z0 = random_tensor(rng, Shape{b, l}, -3, 3);
    auto z1 = random_tensor(rng, Shape{b, l}, -3, 3);
    std::vector<double> t(b);
    for (auto& v : t) v = rng.uniform();
    auto zt = ot_path(z0, z1, std::span<const double>(t));
    for (std::size_t r = 0; r < b; ++r)
      for (std::size_t c = 0; c < l; ++c)
        EXPECT_NEAR(zt.at(r, c), (1 - t[r]) * z0.at(r, c) + t[r] * z1.at(r, c), 1e-12);
    // The exact velocity carries every point of the path to z1.
    auto zhat = terminal_estimate(zt, std::span<const double>(t), target_velocity(z0, z1));
    for (std::size_t i = 0; i < zhat.size(); ++i) EXPECT_NEAR(zhat[i], z1[i], 1e-12);
  }
}

TEST(CfmLoss, ExampleAndGradient) {
  ad::Graph<double> g;
  auto v = g.variable(Tensor<double>::matrix(1, 2, {0.0, 0.0}));
  auto z0 = Tensor<double>::matrix(1, 2, {0.0, 0.0});
  auto z1 = Tensor<double>::matrix(1, 2, {1.0, 1.0});
  auto loss = cfm_loss(v, target_velocity(z0, z1));
  EXPECT_DOUBLE_EQ(loss.value().item(), 2.0);
  g.backward(loss);
  EXPECT_EQ(g.grad_of(v), Tensor<double>::matrix(1, 2, {-2.0, -2.0}));

  // Mean over rows, not over elements.
  ad::Graph<double> h(false);
  auto two = cfm_loss(h.constant(Tensor<double>(Shape{2, 3}, 1.0)),
                      Tensor<double>(Shape{2, 3}, 0.0));
  EXPECT_DOUBLE_EQ(two.value().item(), 3.0);
  EXPECT_THROW(cfm_loss(h.constant(Tensor<double>(Shape{2, 3})),
                        Tensor<double>(Shape{2, 2})),
               ContractViolation);
}

TEST(TerminalEstimate, GradCheck) {
  Rng rng(2);
  auto zt = random_tensor(rng, Shape{3, 2});
  std::vector<double> t{0.1, 0.5, 0.9};
  auto rep = grad_check(
      [&](ad::Graph<double>& g, ad::Var<double> v) {
        auto zhat = terminal_estimate(g.constant(zt), std::span<const double>(t), v);
        return ad::sum(ad::square(zhat));
      },
      random_tensor(rng, Shape{3, 2}));
  EXPECT_LT(rep.max_rel_error, 1e-8);
}

VaeConfig tiny_vae() {
  VaeConfig c;
  c.gene_dim = 5;
  c.latent_dim = 2;
  c.tokens = 1;
  c.hidden = 4;
  c.heads = 1;
  c.ffn_mult = 2;
  c.decoder_hidden = {6};
  return c;
}

TEST(GeneConsistency, FrozenDecoderGetsNoGradient) {
  auto vae = VaeModel<double>::create(tiny_vae(), 3);
  Rng rng(3);
  nn::randomize(vae.params, rng, 0.3);
  vae.params.set_frozen(true);
  auto x = random_tensor(rng, Shape{4, 5});
  ad::Graph<double> g;
  const auto zval = random_tensor(rng, Shape{4, 2});
  auto z = g.variable(zval);
  auto loss = gene_consistency_loss(x, z, vae.net);
  // value oracle: mean over rows of the squared reconstruction error
  ad::Graph<double> plain(false);
  auto recon = vae.net.decode(plain, plain.constant(zval));
  double ref = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i)
    ref += (x[i] - recon.value()[i]) * (x[i] - recon.value()[i]);
  EXPECT_NEAR(loss.value().item(), ref / 4.0, 1e-12);

  g.backward(loss);
  double zgrad = 0.0;
  for (double v : g.grad_of(z).values()) zgrad += std::abs(v);
  EXPECT_GT(zgrad, 0.0);
  for (std::size_t i = 0; i < vae.params.size(); ++i)
    for (double v : vae.params[i].grad().values()) EXPECT_EQ(v, 0.0) << vae.params[i].name();
}

TEST(GeneConsistency, UnfrozenDecoderIsRejected) {
  auto vae = VaeModel<double>::create(tiny_vae(), 3);
  ad::Graph<double> g;
  EXPECT_THROW(gene_consistency_loss(Tensor<double>(Shape{1, 5}),
                                     g.variable(Tensor<double>(Shape{1, 2})), vae.net),
               ContractViolation);
}

TEST(GeneConsistency, GradCheckThroughFrozenDecoder) {
  auto vae = VaeModel<double>::create(tiny_vae(), 4);
  Rng rng(4);
  nn::randomize(vae.params, rng, 0.3);
  vae.params.set_frozen(true);
  auto x = random_tensor(rng, Shape{3, 5});
  auto rep = grad_check(
      [&](ad::Graph<double>&, ad::Var<double> z) {
        return gene_consistency_loss(x, z, vae.net);
      },
      random_tensor(rng, Shape{3, 2}));
  EXPECT_LT(rep.max_rel_error, 1e-4);
}

TEST(ConditionDropout, NullFrequency) {
  ConditionBundle c;
  c.image = {1.f, 2.f};
  c.type = 1;
  c.num_types = 3;
  Rng rng(99);
  std::size_t nulls = 0;
  const std::size_t draws = 100000;
  for (std::size_t i = 0; i < draws; ++i)
    nulls += apply_condition_dropout(c, 0.1, rng).is_null;
  const double frac = static_cast<double>(nulls) / draws;
  EXPECT_GE(frac, 0.094);
  EXPECT_LE(frac, 0.106);
}

TEST(ConditionDropout, Edges) {
  ConditionBundle c;
  c.type = 2;
  c.num_types = 3;
  Rng rng(1);
  for (int i = 0; i < 100; ++i) {
    EXPECT_FALSE(apply_condition_dropout(c, 0.0, rng).is_null);
    EXPECT_TRUE(apply_condition_dropout(c, 1.0, rng).is_null);
  }
  EXPECT_THROW(apply_condition_dropout(c, 1.5, rng), ContractViolation);
  EXPECT_EQ(c.type_one_hot(), (std::vector<float>{0.f, 0.f, 1.f}));
  c.is_null = true;
  EXPECT_EQ(c.type_one_hot(), (std::vector<float>{0.f, 0.f, 0.f}));
}

TEST(TotalLoss, WeightedSum) {
  ad::Graph<double> g;
  auto cfm = g.variable(Tensor<double>::scalar(2.0));
  auto gene = g.variable(Tensor<double>::scalar(3.0));
  auto aux = g.variable(Tensor<double>::scalar(0.5));
  LossBreakdown b;
  EXPECT_DOUBLE_EQ(total_loss(cfm, gene, aux, LossWeights{}, &b).value().item(), 5.5);
  EXPECT_DOUBLE_EQ(b.gene, 3.0);
  EXPECT_DOUBLE_EQ(b.total, 5.5);
  auto t = total_loss(cfm, gene, aux, LossWeights{1.0, 0.5, 2.0});
  EXPECT_DOUBLE_EQ(t.value().item(), 2.0 + 1.5 + 1.0);
  g.backward(t);
  EXPECT_DOUBLE_EQ(g.grad_of(gene).item(), 0.5);
  EXPECT_DOUBLE_EQ(g.grad_of(aux).item(), 2.0);
  ad::Graph<double> h;
  EXPECT_DOUBLE_EQ(total_loss(h.variable(Tensor<double>::scalar(2.0)), ad::Var<double>{},
                              ad::Var<double>{}, LossWeights{})
                       .value()
                       .item(),
                   2.0);
  EXPECT_THROW(total_loss(cfm, gene, aux, LossWeights{1.0, -1.0, 1.0}), ConfigError);
}

// ---------------------------------------------------------------------------

VelocityConfig toy_velocity(bool moe) {
  VelocityConfig c;
  c.latent_dim = 2;
  c.condition_dim = 2;
  c.spatial = false;
  c.moe = moe;
  c.experts = 3;
  c.top_k = 1;
  c.expert_dim = 16;
  c.expert_heads = 1;
  c.ffn_mult = 2;
  c.gate_hidden = {8};
  c.gate_time_dim = 4;
  return c;
}

// z1 is an affine function of the condition, so the optimal velocity field
// is exactly representable and the loss can approach zero.
FlowDataset affine_dataset(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  FlowDataset d;
  d.condition = random_tensor<float>(rng, Shape{n, 2}, -1, 1);
  d.z1 = Tensor<float>(Shape{n, 2});
  for (std::size_t r = 0; r < n; ++r) {
    const float a = d.condition.at(r, 0), b = d.condition.at(r, 1);
    d.z1.at(r, 0) = 1.5f * a - 0.5f * b + 0.3f;
    d.z1.at(r, 1) = 0.5f * a + 1.0f * b - 0.2f;
  }
  return d;
}

FlowTrainOptions toy_options(std::size_t epochs) {
  FlowTrainOptions o;
  o.epochs = epochs;
  o.lr = 3e-3;
  o.gate_lr = 6e-4;
  o.p_drop = 0.0;
  o.batch_size = 128;
  o.steps_per_epoch = 2;
  o.seed = 5;
  return o;
}

TEST(TrainFlow, AffineOracleIsLearnable) {
  auto train = affine_dataset(512, 1);
  auto res = train_flow(train, FlowDataset{}, toy_velocity(false), nullptr,
                        toy_options(200));
  ASSERT_EQ(res.log.size(), 200u);
  EXPECT_LT(res.log.back().cfm, 0.25 * res.log.front().cfm)
      << res.log.front().cfm << " -> " << res.log.back().cfm;
}

TEST(TrainFlow, Deterministic) {
  auto train = affine_dataset(128, 2);
  auto o = toy_options(3);
  auto a = train_flow(train, FlowDataset{}, toy_velocity(true), nullptr, o);
  auto b = train_flow(train, FlowDataset{}, toy_velocity(true), nullptr, o);
  EXPECT_EQ(a.model.params.checksum(), b.model.params.checksum());
  o.seed = 6;
  auto c = train_flow(train, FlowDataset{}, toy_velocity(true), nullptr, o);
  EXPECT_NE(a.model.params.checksum(), c.model.params.checksum());
}

TEST(TrainFlow, EarlyStoppingKeepsBestValidation) {
  auto train = affine_dataset(128, 3), val = affine_dataset(64, 4);
  auto o = toy_options(30);
  o.lr = 0.05;  // noisy enough that validation stalls
  o.patience = 2;
  auto res = train_flow(train, val, toy_velocity(false), nullptr, o);
  double best = 1e300;
  std::size_t best_epoch = 0;
  for (const auto& l : res.log)
    if (l.val_total < best) {
      best = l.val_total;
      best_epoch = l.epoch;
    }
  EXPECT_EQ(res.best_epoch, best_epoch);
  EXPECT_LE(res.epochs_run, o.epochs);
  if (res.epochs_run < o.epochs) EXPECT_EQ(res.epochs_run, best_epoch + o.patience + 1);
  auto again = flow_validation_loss(res.model, nullptr, val, o.weights, o.chunk_cap,
                                    o.batch_size, o.seed);
  EXPECT_NEAR(again.total, best, 1e-6 * std::max(1.0, best));
}

TEST(TrainFlow, GeneTermNeedsStageOne) {
  auto train = affine_dataset(16, 5);
  train.expression = Tensor<float>(Shape{16, 5}, 1.f);
  EXPECT_THROW(train_flow(train, FlowDataset{}, toy_velocity(false), nullptr,
                          toy_options(1)),
               ConfigError);
  try {
    train_flow(train, FlowDataset{}, toy_velocity(false), nullptr, toy_options(1));
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("--vae-checkpoint"), std::string::npos);
  }
  // Unfrozen decoder.
  auto vae = VaeModel<float>::create(tiny_vae(), 1);
  EXPECT_THROW(train_flow(train, FlowDataset{}, toy_velocity(false), &vae,
                          toy_options(1)),
               ContractViolation);
  vae.params.set_frozen(true);
  auto res = train_flow(train, FlowDataset{}, toy_velocity(false), &vae, toy_options(1));
  EXPECT_GT(res.log[0].gene, 0.0);
  // Zero gene weight needs no decoder.
  auto o = toy_options(1);
  o.weights.gene = 0.0;
  EXPECT_NO_THROW(train_flow(train, FlowDataset{}, toy_velocity(false), nullptr, o));
}

FlowDataset spatial_dataset(std::uint64_t seed) {
  Rng rng(seed);
  FlowDataset d;
  const std::size_t n = 9;
  d.z1 = random_tensor<float>(rng, Shape{n, 3});
  d.condition = random_tensor<float>(rng, Shape{n, 4});
  d.coords = random_tensor<float>(rng, Shape{n, 2}, 0, 20);
  for (std::size_t r = 0; r < n; ++r) d.types.push_back(rng.below(2));
  d.slides = {5, 4};
  return d;
}

VelocityConfig spatial_velocity() {
  VelocityConfig c;
  c.latent_dim = 3;
  c.condition_dim = 4;
  c.num_types = 2;
  c.hidden = 8;
  c.heads = 2;
  c.experts = 2;
  c.top_k = 1;
  c.expert_dim = 8;
  c.expert_heads = 2;
  c.ffn_mult = 2;
  c.gate_hidden = {4};
  c.gate_time_dim = 4;
  return c;
}

TEST(TrainFlow, SpatialChunksPerSlide) {
  auto d = spatial_dataset(1);
  auto chunks = dataset_chunks(d, 3);
  // 5 -> 3 + 2, 4 -> 2 + 2
  ASSERT_EQ(chunks.size(), 4u);
  EXPECT_EQ(chunks[0], (std::pair<std::size_t, std::size_t>{0, 3}));
  EXPECT_EQ(chunks[1], (std::pair<std::size_t, std::size_t>{3, 2}));
  EXPECT_EQ(chunks[2], (std::pair<std::size_t, std::size_t>{5, 2}));
  EXPECT_EQ(chunks[3], (std::pair<std::size_t, std::size_t>{7, 2}));
  FlowTrainOptions o;
  o.epochs = 2;
  o.chunk_cap = 3;
  auto res = train_flow(d, FlowDataset{}, spatial_velocity(), nullptr, o);
  EXPECT_EQ(res.steps, 8u);
  for (const auto& l : res.log) {
    EXPECT_TRUE(std::isfinite(l.total));
    EXPECT_GT(l.aux, -1e-12);
  }
}

TEST(TrainFlow, LossCsv) {
  std::vector<FlowEpochLog> log{{1, 1.0, 0.5, 0.25, 1.75, 1.5}};
  std::ostringstream os;
  write_loss_csv(os, log);
  std::istringstream is(os.str());
  std::string header, row;
  std::getline(is, header);
  std::getline(is, row);
  EXPECT_EQ(header, "epoch,L_CFM,L_gene,L_aux,total,val_total");
  EXPECT_EQ(row.substr(0, 2), "1,");
}

TEST(RoutingTrace, RowsAreDistributionsAndDeterministic) {
  auto d = spatial_dataset(2);
  auto model = FlowModel::create(spatial_velocity(), 3);
  auto a = routing_trace(model, d, 0.0, 11, 4);
  auto b = routing_trace(model, d, 0.0, 11, 4);
  ASSERT_EQ(a.probs.rows(), d.rows());
  for (std::size_t r = 0; r < d.rows(); ++r) {
    double s = 0.0;
    for (std::size_t e = 0; e < 2; ++e) s += a.probs.at(r, e);
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
  EXPECT_EQ(a.indices, b.indices);
  EXPECT_EQ(a.probs, b.probs);
  auto dense = FlowModel::create([] {
    auto c = spatial_velocity();
    c.moe = false;
    return c;
  }(), 3);
  EXPECT_THROW(routing_trace(dense, d, 0.0, 1), ContractViolation);
}

}  // namespace
}  // namespace molf
