// Copyright 2026 The MoLF Authors
// SPDX-License-Identifier: Apache-2.0

// Stage II: conditional flow matching on the frozen latent manifold.

#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <vector>

#include "molf/moe.hpp"
#include "molf/optim.hpp"
#include "molf/vae.hpp"

namespace molf {

/// (1 - t) z0 + t z1, one t per row. t outside [0, 1] is a contract violation.
template <class T>
Tensor<T> ot_path(const Tensor<T>& z0, const Tensor<T>& z1,
                  std::span<const double> t);
template <class T>
Tensor<T> ot_path(const Tensor<T>& z0, const Tensor<T>& z1, double t);

/// z1 - z0.
template <class T>
Tensor<T> target_velocity(const Tensor<T>& z0, const Tensor<T>& z1);

/// z_t + (1 - t) v, one t per row.
template <class T>
Tensor<T> terminal_estimate(const Tensor<T>& z_t, std::span<const double> t,
                            const Tensor<T>& v);
template <class T>
ad::Var<T> terminal_estimate(ad::Var<T> z_t, std::span<const double> t,
                             ad::Var<T> v);

/// Mean over rows of ||v - target||^2.
template <class T>
ad::Var<T> cfm_loss(ad::Var<T> v, const Tensor<T>& target);

/// Mean over rows of ||x - decode(z_hat1)||^2. Gradients reach z_hat1 but
/// never the decoder, which must be frozen.
template <class T>
ad::Var<T> gene_consistency_loss(const Tensor<T>& x, ad::Var<T> z_hat1,
                                 const GeneVae<T>& vae);

/// Per-spot conditioning. A null bundle makes the network substitute its
/// learned null embeddings for both the image feature and the type.
struct ConditionBundle {
  std::vector<float> image;
  std::size_t type = 0;
  std::size_t num_types = 0;
  double x = 0.0, y = 0.0;
  bool is_null = false;

  std::vector<float> type_one_hot() const;
};

ConditionBundle apply_condition_dropout(const ConditionBundle& c,
                                        double p_drop, Rng& rng);

struct LossWeights {
  double flow = 1.0;
  double gene = 1.0;
  double aux = 1.0;
  void validate() const;
};

struct LossBreakdown {
  double cfm = 0.0, gene = 0.0, aux = 0.0, total = 0.0;
};

/// lambda_flow * cfm + lambda_gene * gene + lambda_aux * aux. Invalid Vars
/// count as zero terms.
template <class T>
ad::Var<T> total_loss(ad::Var<T> cfm, ad::Var<T> gene, ad::Var<T> aux,
                      const LossWeights& w, LossBreakdown* breakdown = nullptr);

/// Spots of one or more slides (or independent toy samples).
struct FlowDataset {
  Tensor<float> z1;          // [S, L]
  Tensor<float> expression;  // [S, G]; empty when there is no gene target
  Tensor<float> condition;   // [S, F]
  Tensor<float> coords;      // [S, 2]; may be empty for the toy task
  std::vector<std::size_t> types;
  // Consecutive row counts per slide. Empty: rows are independent samples.
  ad::Segments slides;

  std::size_t rows() const { return z1.rank() == 2 ? z1.rows() : 0; }
  bool has_expression() const { return expression.rank() == 2 && expression.rows() > 0; }
  void validate() const;
  /// Rows [begin, begin + count) as a new dataset with a single slide.
  FlowDataset slice(std::size_t begin, std::size_t count) const;
};

/// Build a dataset whose targets are the frozen encoder's posterior means
/// (or posterior samples when `sample_posterior`).
FlowDataset make_flow_dataset(const VaeModel<float>& vae,
                              const Tensor<float>& expression,
                              const Tensor<float>& condition,
                              const Tensor<float>& coords,
                              std::vector<std::size_t> types,
                              ad::Segments slides,
                              bool sample_posterior = false,
                              std::uint64_t seed = 0);

struct FlowModel {
  VelocityConfig config;
  ad::ParameterStore<float> params;
  VelocityNet<float> net;

  static FlowModel create(const VelocityConfig& cfg, std::uint64_t seed);
  static FlowModel from_params(const VelocityConfig& cfg,
                               ad::ParameterStore<float> params);
};

struct FlowEpochLog {
  std::size_t epoch = 0;
  double cfm = 0, gene = 0, aux = 0, total = 0;
  double val_total = 0;
};

struct FlowTrainOptions {
  std::size_t epochs = 500;
  // Early stopping watches the validation objective; without validation
  // rows it is disabled and the last parameters are returned.
  std::size_t patience = 50;
  double lr = 5e-5;
  double gate_lr = 1e-5;
  double weight_decay = 0.01;
  double p_drop = 0.1;
  LossWeights weights;
  // Spatial data: one optimisation step per slide chunk of at most this
  // many spots. Independent rows: minibatches of `batch_size`.
  std::size_t chunk_cap = 1024;
  std::size_t batch_size = 256;
  // Independent rows only; 0 means one pass over the data per epoch.
  std::size_t steps_per_epoch = 0;
  std::uint64_t seed = 0;
  std::function<void(const FlowEpochLog&)> on_epoch;
};

struct FlowTrainResult {
  FlowModel model;  // best-validation parameters
  std::size_t best_epoch = 0;
  std::size_t epochs_run = 0;
  std::size_t steps = 0;
  std::vector<FlowEpochLog> log;
};

/// `vae` may be null only when the gene term is unused (zero weight or no
/// expression targets); otherwise a ConfigError names the missing Stage-I
/// checkpoint.
FlowTrainResult train_flow(const FlowDataset& train, const FlowDataset& val,
                           const VelocityConfig& cfg, const VaeModel<float>* vae,
                           const FlowTrainOptions& opt);

/// Deterministic validation objective: fixed-seed noise and times, no
/// condition dropout.
LossBreakdown flow_validation_loss(const FlowModel& model,
                                   const VaeModel<float>* vae,
                                   const FlowDataset& val,
                                   const LossWeights& weights,
                                   std::size_t chunk_cap, std::size_t batch_size,
                                   std::uint64_t seed);

/// Gate probabilities over a dataset at the given flow time with fresh noise
/// as z_t (t = 0 reproduces inference-time routing).
RoutingTrace routing_trace(const FlowModel& model, const FlowDataset& data,
                           double t, std::uint64_t seed,
                           std::size_t chunk_cap = 1024);

void write_loss_csv(std::ostream& os, const std::vector<FlowEpochLog>& log);

/// Row-chunks of a dataset: slides split into contiguous pieces of at most
/// `cap` rows; independent rows in blocks of `cap`.
std::vector<std::pair<std::size_t, std::size_t>> dataset_chunks(
    const FlowDataset& data, std::size_t cap);

/// Network batch for the given rows (z_t and t left for the caller). In
/// spatial mode the rows must come from one slide.
VelocityBatch<float> batch_for_rows(const FlowDataset& data,
                                    const std::vector<std::size_t>& rows,
                                    bool spatial);

}  // namespace molf
