// Copyright 2026 The MoLF Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <sstream>

#include "molf/sampler.hpp"
#include "support/gen.hpp"

namespace molf {
namespace {

using testing::random_tensor;

TEST(Cfg, Examples) {
  auto vc = Tensor<double>::vector({1.0, 2.0});
  auto vu = Tensor<double>::vector({0.5, -1.0});
  EXPECT_EQ(cfg_velocity(vc, vu, 1.0), vc);
  EXPECT_EQ(cfg_velocity(vc, vu, 0.0), vu);
  EXPECT_EQ(cfg_velocity(vc, vu, 2.0), Tensor<double>::vector({1.5, 5.0}));
  EXPECT_THROW(cfg_velocity(vc, vu, -0.5), ContractViolation);
}

TEST(Cfg, AffineInW) {
  Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    auto vc = random_tensor(rng, Shape{3, 2}), vu = random_tensor(rng, Shape{3, 2});
    const double a = rng.uniform(0, 5), b = rng.uniform(0, 5);
    auto va = cfg_velocity(vc, vu, a), vb = cfg_velocity(vc, vu, b),
         mid = cfg_velocity(vc, vu, 0.5 * (a + b));
    for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(mid[i], 0.5 * (va[i] + vb[i]), 1e-12);
  }
}

TEST(Euler, SingleStepAndConstantField) {
  auto z0 = Tensor<double>::vector({1.0, -1.0});
  VelocityFn<double> v = [](const Tensor<double>& z, double t) {
    EXPECT_EQ(t, 0.0);
    Tensor<double> out = z;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = 3.0 * z[i] + 1.0;
    return out;
  };
  EXPECT_EQ(euler_integrate(z0, v, 1), Tensor<double>::vector({5.0, -3.0}));

  Rng rng(2);
  auto c = random_tensor(rng, Shape{2, 3});
  VelocityFn<double> constant = [&](const Tensor<double>&, double) { return c; };
  for (std::size_t steps : {1, 3, 10, 64}) {
    auto z = euler_integrate(Tensor<double>(Shape{2, 3}), constant, steps);
    for (std::size_t i = 0; i < z.size(); ++i) EXPECT_NEAR(z[i], c[i], 1e-12);
  }
  EXPECT_THROW(euler_integrate(z0, v, 0), ContractViolation);
}

TEST(Euler, LinearFieldApproachesExponential) {
  auto z0 = Tensor<float>::vector({1.0f, -2.0f, 0.5f});
  VelocityFn<float> v = [](const Tensor<float>& z, double) { return z; };
  auto z = euler_integrate(z0, v, 100);
  for (std::size_t i = 0; i < 3; ++i) {
    const double want = std::exp(1.0) * z0[i];
    EXPECT_LE(std::abs(z[i] - want), 0.02 * std::abs(want));
    // and exactly (1 + 1/100)^100 up to float rounding
    EXPECT_NEAR(z[i], std::pow(1.01, 100) * z0[i], 1e-4);
  }
}

TEST(Euler, TrajectoryTimes) {
  Trajectory<double> traj;
  VelocityFn<double> v = [](const Tensor<double>& z, double) { return z; };
  euler_integrate(Tensor<double>::vector({1.0}), v, 4, &traj);
  ASSERT_EQ(traj.size(), 5u);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_DOUBLE_EQ(traj[i].t, i / 4.0);
  EXPECT_DOUBLE_EQ(traj.back().z[0], std::pow(1.25, 4));
}

TEST(Euler, NonFiniteVelocityNamesTime) {
  VelocityFn<double> v = [](const Tensor<double>& z, double t) {
    Tensor<double> out = z;
    if (t >= 0.5) out[0] = std::numeric_limits<double>::quiet_NaN();
    return out;
  };
  try {
    euler_integrate(Tensor<double>::vector({1.0}), v, 4);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("t=0.5"), std::string::npos) << e.what();
  }
}

TEST(SpotNoise, KeyedBySpotNotPosition) {
  auto a = spot_noise(7, {3, 9, 4}, 5);
  auto b = spot_noise(7, {9, 4, 3}, 5);
  for (std::size_t j = 0; j < 5; ++j) {
    EXPECT_EQ(a.at(0, j), b.at(2, j));
    EXPECT_EQ(a.at(1, j), b.at(0, j));
  }
  auto c = spot_noise(8, {3}, 5);
  EXPECT_NE(a.at(0, 0), c.at(0, 0));
}

VelocityConfig small_config(bool spatial) {
  VelocityConfig c;
  c.latent_dim = 2;
  c.condition_dim = 3;
  c.spatial = spatial;
  c.num_types = spatial ? 2 : 0;
  c.hidden = 8;
  c.heads = 2;
  c.experts = 3;
  c.top_k = 2;
  c.expert_dim = 8;
  c.expert_heads = 2;
  c.ffn_mult = 2;
  c.gate_hidden = {4};
  c.gate_time_dim = 4;
  return c;
}

FlowDataset small_dataset(bool spatial, std::uint64_t seed) {
  Rng rng(seed);
  FlowDataset d;
  d.z1 = Tensor<float>(Shape{6, 2});
  d.condition = random_tensor<float>(rng, Shape{6, 3});
  if (spatial) {
    d.coords = random_tensor<float>(rng, Shape{6, 2}, 0, 10);
    d.types = {0, 1, 1, 0, 1, 0};
    d.slides = {4, 2};
  }
  return d;
}

TEST(Generate, NullPassSkippedAtUnitGuidance) {
  auto model = FlowModel::create(small_config(false), 1);
  auto data = small_dataset(false, 2);
  auto one = generate_dataset(data, model, nullptr, 1.0, 5, 3);
  EXPECT_EQ(one.velocity_calls, 5u);
  auto two = generate_dataset(data, model, nullptr, 2.0, 5, 3);
  EXPECT_EQ(two.velocity_calls, 10u);
  auto zero = generate_dataset(data, model, nullptr, 0.0, 5, 3);
  EXPECT_EQ(zero.velocity_calls, 10u);
}

TEST(Generate, UnitGuidanceMatchesTwoPassCombination) {
  auto model = FlowModel::create(small_config(false), 1);
  auto data = small_dataset(false, 2);
  auto one = generate_dataset(data, model, nullptr, 1.0, 1, 3);
  // Recombine explicit conditional and null passes at w = 1.
  const std::size_t n = data.rows();
  std::vector<std::size_t> ids(n);
  for (std::size_t i = 0; i < n; ++i) ids[i] = i;
  auto z0 = spot_noise(3, ids, 2);
  std::vector<std::size_t> rows = ids;
  auto batch = batch_for_rows(data, rows, false);
  batch.z_t = z0;
  batch.t.assign(n, 0.0);
  ad::Graph<float> g(false);
  auto vc = model.net.forward(g, batch).velocity.value();
  batch.is_null.assign(n, 1);
  ad::Graph<float> h(false);
  auto vu = model.net.forward(h, batch).velocity.value();
  auto v = cfg_velocity(vc, vu, 1.0);
  for (std::size_t i = 0; i < v.size(); ++i)
    EXPECT_FLOAT_EQ(one.latents[i], z0[i] + v[i]);
}

TEST(Generate, DeterministicAndOrderFree) {
  auto model = FlowModel::create(small_config(false), 1);
  auto data = small_dataset(false, 2);
  auto a = generate_dataset(data, model, nullptr, 1.5, 3, 9);
  auto b = generate_dataset(data, model, nullptr, 1.5, 3, 9);
  EXPECT_EQ(a.latents, b.latents);
  // Independent rows: chunking must not change any spot's sample.
  auto c = generate_dataset(data, model, nullptr, 1.5, 3, 9, 2);
  for (std::size_t i = 0; i < a.latents.size(); ++i)
    EXPECT_NEAR(a.latents[i], c.latents[i], 1e-5);
  auto d = generate_dataset(data, model, nullptr, 1.5, 3, 10);
  EXPECT_NE(a.latents, d.latents);
}

TEST(Generate, SpatialDecodesAndKeepsTrajectory) {
  auto model = FlowModel::create(small_config(true), 4);
  auto data = small_dataset(true, 5);
  VaeConfig vc;
  vc.gene_dim = 7;
  vc.latent_dim = 2;
  vc.tokens = 1;
  vc.hidden = 4;
  vc.heads = 1;
  vc.decoder_hidden = {5};
  auto vae = VaeModel<float>::create(vc, 6);
  auto r = generate_dataset(data, model, &vae, 2.0, 4, 1, 1024, true);
  EXPECT_EQ(r.latents.shape(), (Shape{6, 2}));
  EXPECT_EQ(r.expression.shape(), (Shape{6, 7}));
  ASSERT_EQ(r.trajectory.size(), 5u);
  EXPECT_EQ(r.trajectory.back().z, r.latents);
  // t = 0 state is the keyed noise.
  std::vector<std::size_t> ids{0, 1, 2, 3, 4, 5};
  EXPECT_EQ(r.trajectory.front().z, spot_noise(1, ids, 2));
  EXPECT_EQ(r.expression, decode_rows(vae, r.latents));
}

TEST(Generate, TrajectoryCsv) {
  Trajectory<float> traj{{0.0, Tensor<float>::matrix(2, 2, {1, 2, 3, 4})},
                         {1.0, Tensor<float>::matrix(2, 2, {5, 6, 7, 8})}};
  std::ostringstream os;
  write_trajectory_csv(os, traj, {10, 11});
  std::istringstream is(os.str());
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(is, line)) lines.push_back(line);
  ASSERT_EQ(lines.size(), 5u);
  EXPECT_EQ(lines[0], "spot,t,z0,z1");
  EXPECT_EQ(lines[1].substr(0, 3), "10,");
  EXPECT_EQ(lines[4].substr(0, 3), "11,");
}

}  // namespace
}  // namespace molf
