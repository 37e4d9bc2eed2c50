// Copyright 2026 The MoLF Authors
// SPDX-License-Identifier: Apache-2.0

// Conditional eight-Gaussian ring: the condition is a point on the unit
// circle, the target a Gaussian around one of eight ring positions. Used to
// compare the mixture-of-experts velocity field with a dense one of equal
// width.

#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "molf/flow.hpp"
#include "molf/metrics.hpp"

namespace molf::toy {

inline constexpr std::size_t kModes = 8;

struct ToySample {
  double theta = 0.0;
  double condition[2] = {1.0, 0.0};
  std::size_t mode = 0;
  double target[2] = {0.0, 0.0};
};

struct ToyConfig {
  double radius = 3.0;
  double variance = 0.01;
  std::size_t train_samples = 50000;
  std::size_t eval_samples = 8000;
  std::size_t steps = 2000;          // optimisation steps
  std::size_t steps_per_epoch = 10;  // logging granularity
  std::size_t batch_size = 256;
  double lr = 1e-3;
  double gate_lr = 2e-4;
  double weight_decay = 0.01;
  double lambda_aux = 1.0;
  double w = 1.0;                  // guidance scale at sampling time
  std::size_t sample_steps = 1;    // Euler steps at sampling time
  VelocityConfig moe;
  VelocityConfig dense;

  ToyConfig();
  void validate() const;
};

/// The velocity configuration used by the benchmark (8 experts, top-1,
/// width 32, 1 head) or its dense counterpart (width 256, 8 heads).
VelocityConfig toy_velocity_config(bool moe);

std::size_t mode_of(double theta);
std::vector<double> mode_mean(std::size_t k, double radius);

/// theta ~ U(0, 2 pi) unless forced.
ToySample gen_toy_sample(Rng& rng, const ToyConfig& cfg,
                         std::optional<double> theta = std::nullopt);

struct ToyData {
  Tensor<float> condition;  // [n, 2]
  Tensor<float> target;     // [n, 2]
  std::vector<std::size_t> modes;
  std::vector<double> theta;

  std::size_t rows() const { return modes.size(); }
  FlowDataset flow_dataset() const;
};

ToyData gen_toy_dataset(const ToyConfig& cfg, std::size_t n, Rng& rng);

struct ModeStats {
  std::vector<double> frequency;                 // per mode
  std::vector<std::vector<double>> mean;         // per mode, 2-D
};
ModeStats mode_statistics(const ToyData& data);

struct ToyRun {
  std::uint64_t seed = 0;
  bool moe = true;
  metrics::W2Result w2;
  std::vector<FlowEpochLog> log;
  double importance_cv = 0.0;  // gate importance CV on evaluation inputs
  double purity = 0.0;         // top-1 expert/mode purity at t = 0
  std::size_t active_experts = 0;
  Tensor<float> samples;       // one generated point per evaluation condition
  FlowModel model;
};

/// Train one model on the seed's training set and evaluate it on the seed's
/// held-out set. `steps_override` limits training (0 = cfg.steps).
ToyRun run_toy_model(const ToyConfig& cfg, bool moe, std::uint64_t seed,
                     std::size_t steps_override = 0);

/// Evaluate an (optionally untrained) model on a held-out set.
metrics::W2Result evaluate_toy_model(const ToyConfig& cfg, const FlowModel& model,
                                     const ToyData& eval, std::uint64_t seed,
                                     Tensor<float>* samples = nullptr);

/// Importance CV of the gate over evaluation inputs at uniformly drawn t on
/// the interpolation path.
double gate_importance_cv(const FlowModel& model, const ToyData& eval,
                          std::uint64_t seed);

struct ToyReport {
  std::vector<ToyRun> runs;  // for each seed: moe then dense
  double median_moe = 0.0, median_dense = 0.0;
  double mean_moe = 0.0, mean_dense = 0.0;
};

ToyReport run_toy_benchmark(const ToyConfig& cfg,
                            const std::vector<std::uint64_t>& seeds);

double median(std::vector<double> v);

/// "seed,model,dim1,dim2,average,final_cfm,importance_cv,purity" plus
/// median and mean rows per model.
void write_toy_report(std::ostream& os, const ToyReport& report);
/// "seed,model,c0,c1,mode,x,y" for every generated point.
void write_toy_samples(std::ostream& os, const ToyReport& report,
                       const ToyConfig& cfg);

}  // namespace molf::toy
