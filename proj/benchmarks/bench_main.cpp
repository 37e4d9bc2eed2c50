// Copyright 2026 The MoLF Authors
// SPDX-License-Identifier: Apache-2.0

// Hot paths of both training stages, sampling and evaluation.

#include <benchmark/benchmark.h>

#include "molf/dataio.hpp"
#include "molf/metrics.hpp"
#include "molf/sampler.hpp"
#include "molf/toy.hpp"

namespace molf {
namespace {

Tensor<float> random_matrix(Rng& rng, std::size_t r, std::size_t c) {
  Tensor<float> t(Shape{r, c});
  for (auto& v : t.values()) v = static_cast<float>(rng.normal());
  return t;
}

void BM_MatmulForwardBackward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  const auto a = random_matrix(rng, n, n), b = random_matrix(rng, n, n);
  for (auto _ : state) {
    ad::Graph<float> g;
    auto x = g.variable(a), y = g.variable(b);
    g.backward(ad::sum(ad::matmul(x, y)));
    benchmark::DoNotOptimize(g.grad_of(x).data());
  }
  state.SetItemsProcessed(state.iterations() * 2 * n * n * n);
}
BENCHMARK(BM_MatmulForwardBackward)->Arg(64)->Arg(128)->Arg(256);

VelocityConfig spatial_velocity(bool moe) {
  VelocityConfig c;
  c.latent_dim = 32;
  c.condition_dim = 64;
  c.num_types = 4;
  c.hidden = 64;
  c.heads = 4;
  c.moe = moe;
  c.experts = 6;
  c.top_k = 2;
  c.expert_dim = 64;
  c.expert_heads = 4;
  c.ffn_mult = 2;
  c.gate_hidden = {64};
  return c;
}

VelocityBatch<float> spatial_batch(const VelocityConfig& cfg, std::size_t spots) {
  Rng rng(2);
  VelocityBatch<float> b;
  b.z_t = random_matrix(rng, spots, cfg.latent_dim);
  b.condition = random_matrix(rng, spots, cfg.condition_dim);
  b.coords = Tensor<float>(Shape{spots, 2});
  for (std::size_t i = 0; i < spots; ++i) {
    b.t.push_back(rng.uniform());
    b.types.push_back(i % cfg.num_types);
    b.coords.at(i, 0) = static_cast<float>(i % 16);
    b.coords.at(i, 1) = static_cast<float>(i / 16);
  }
  b.is_null.assign(spots, 0);
  return b;
}

// One slide of `range(0)` spots through the velocity field, forward only
// (sampling) or forward plus backward (training).
void velocity_bench(benchmark::State& state, bool moe, bool backward) {
  const auto spots = static_cast<std::size_t>(state.range(0));
  const auto cfg = spatial_velocity(moe);
  const auto model = FlowModel::create(cfg, 3);
  const auto batch = spatial_batch(cfg, spots);
  for (auto _ : state) {
    ad::Graph<float> g(backward);
    auto out = model.net.forward(g, batch);
    if (backward) g.backward(ad::mean(ad::square(out.velocity)));
    benchmark::DoNotOptimize(out.velocity.value().data());
  }
  state.SetItemsProcessed(state.iterations() * spots);
}
void BM_VelocityForwardMoe(benchmark::State& s) { velocity_bench(s, true, false); }
void BM_VelocityForwardDense(benchmark::State& s) { velocity_bench(s, false, false); }
void BM_VelocityTrainStepMoe(benchmark::State& s) { velocity_bench(s, true, true); }
BENCHMARK(BM_VelocityForwardMoe)->Arg(64)->Arg(256);
BENCHMARK(BM_VelocityForwardDense)->Arg(64)->Arg(256);
BENCHMARK(BM_VelocityTrainStepMoe)->Arg(64)->Arg(256);

void BM_VaeEncodeDecode(benchmark::State& state) {
  VaeConfig c;
  c.gene_dim = 256;
  c.latent_dim = 32;
  c.hidden = 64;
  c.decoder_hidden = {128, 128};
  const auto vae = VaeModel<float>::create(c, 4);
  Rng rng(4);
  const auto x = random_matrix(rng, static_cast<std::size_t>(state.range(0)), c.gene_dim);
  for (auto _ : state) {
    ad::Graph<float> g(false);
    auto p = vae.net.encode(g, g.constant(x));
    benchmark::DoNotOptimize(vae.net.decode(g, p.mu).value().data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_VaeEncodeDecode)->Arg(256);

void BM_ToyGenerate(benchmark::State& state) {
  toy::ToyConfig cfg;
  const auto model = FlowModel::create(cfg.moe, 5);
  Rng rng(5);
  const auto data = toy::gen_toy_dataset(cfg, 8000, rng).flow_dataset();
  for (auto _ : state) {
    auto r = generate_dataset(data, model, nullptr, 1.0, static_cast<std::size_t>(state.range(0)),
                              6, 1024);
    benchmark::DoNotOptimize(r.latents.data());
  }
  state.SetItemsProcessed(state.iterations() * data.rows());
}
BENCHMARK(BM_ToyGenerate)->Arg(1)->Arg(10);

void BM_PearsonPerGene(benchmark::State& state) {
  Rng rng(6);
  const auto y = random_matrix(rng, 2000, 256).cast<double>();
  const auto yh = random_matrix(rng, 2000, 256).cast<double>();
  for (auto _ : state) benchmark::DoNotOptimize(metrics::pearson_per_gene(y, yh).mean);
}
BENCHMARK(BM_PearsonPerGene);

void BM_MeanW1PerSpot(benchmark::State& state) {
  Rng rng(7);
  const auto y = random_matrix(rng, 2000, 256).cast<double>();
  const auto yh = random_matrix(rng, 2000, 256).cast<double>();
  for (auto _ : state) benchmark::DoNotOptimize(metrics::mean_w1_per_spot(y, yh));
}
BENCHMARK(BM_MeanW1PerSpot);

void BM_CheckpointRoundTrip(benchmark::State& state) {
  const auto model = FlowModel::create(spatial_velocity(true), 8);
  const auto bundle = io::make_checkpoint(model);
  for (auto _ : state) {
    const auto bytes = io::encode_checkpoint(bundle);
    benchmark::DoNotOptimize(io::decode_checkpoint(bytes, "bench").tensors.size());
    state.SetBytesProcessed(state.bytes_processed() + static_cast<std::int64_t>(bytes.size()));
  }
}
BENCHMARK(BM_CheckpointRoundTrip);

}  // namespace
}  // namespace molf

BENCHMARK_MAIN();
