// Copyright 2026 The MoLF Authors
// SPDX-License-Identifier: Apache-2.0

// Stage II velocity network: N attention experts combined by a top-k gate,
// or a single wide expert for the dense baseline.

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "molf/nn.hpp"

namespace molf {

struct GateDecision {
  std::vector<std::size_t> experts;  // k distinct indices, by falling weight
  std::vector<double> weights;       // renormalised, sums to 1
  std::vector<double> full_probs;    // softmax over all N experts
};

/// Indices of the k largest probabilities, ties to the lower index.
std::vector<std::size_t> top_k_indices(std::span<const double> probs,
                                       std::size_t k);

/// softmax -> top-k -> renormalise.
GateDecision gate_from_logits(std::span<const double> logits, std::size_t k);

/// Sum of weight_j * output_j over the selected experts.
std::vector<double> compose_velocity(
    const GateDecision& decision,
    const std::vector<std::vector<double>>& expert_outputs);

/// Squared coefficient of variation of per-expert importance (column sums of
/// probs [B, N]), population standard deviation.
double load_balance_loss(const Tensor<double>& probs);

template <class T>
ad::Var<T> load_balance_loss(ad::Var<T> probs);

struct VelocityConfig {
  std::size_t latent_dim = 128;
  // Width of the per-spot condition vector (image feature or toy condition).
  std::size_t condition_dim = 0;
  // Number of label classes injected by cross-attention; 0 disables it.
  std::size_t num_types = 0;
  // Spatial mode: a condition encoder (projection, positional encoding,
  // self-attention over the slide, cross-attention to the type token) and
  // experts that attend across the spots of one slide. Otherwise every row
  // is an independent single-token sequence and the raw condition is used.
  bool spatial = true;
  std::size_t hidden = 256;  // condition-encoder width
  std::size_t heads = 4;
  bool pe_enabled = true;
  double pe_base = 10000.0;
  bool moe = true;
  std::size_t experts = 6;
  std::size_t top_k = 2;
  std::size_t expert_dim = 256;
  std::size_t expert_heads = 4;
  std::size_t ffn_mult = 4;
  std::vector<std::size_t> gate_hidden = {128};
  std::size_t gate_time_dim = 16;
  double time_base = 10000.0;
  double time_scale = 1000.0;

  // Width / heads of the single expert used in dense mode.
  std::size_t dense_dim() const { return experts * expert_dim; }
  std::size_t dense_heads() const { return experts * expert_heads; }
  std::size_t condition_width() const {
    return spatial ? hidden : condition_dim;
  }
  void validate() const;
};

/// One forward batch. Rows are spots (or toy samples); `segments` partitions
/// them into slides.
template <class T>
struct VelocityBatch {
  Tensor<T> z_t;                      // [B, L]
  std::vector<double> t;              // B values in [0, 1]
  Tensor<T> condition;                // [B, condition_dim]
  Tensor<T> coords;                   // [B, 2], spatial mode only
  std::vector<std::size_t> types;     // B labels when num_types > 0
  std::vector<std::uint8_t> is_null;  // B flags; 1 = condition dropped
  ad::Segments segments;              // slide lengths; empty = one segment

  std::size_t rows() const { return z_t.rows(); }
  void validate(const VelocityConfig& cfg) const;
};

/// Per-row routing of one forward pass.
struct RoutingTrace {
  std::size_t experts = 0, k = 0;
  std::vector<std::size_t> indices;  // B * k
  std::vector<double> weights;       // B * k
  Tensor<double> probs;              // [B, N]

  GateDecision decision(std::size_t row) const;
  std::vector<GateDecision> decisions() const;
};

template <class T>
struct VelocityOutput {
  ad::Var<T> velocity;  // [B, L]
  ad::Var<T> probs;     // [B, N]; invalid in dense mode
};

/// Single-layer attention expert: in_proj(z_t ++ h) + time embedding,
/// attention block, layer norm, out_proj back to the latent width.
template <class T>
class VelocityExpert {
 public:
  VelocityExpert() = default;
  VelocityExpert(ad::ParameterStore<T>& store, const std::string& name,
                 std::size_t in, std::size_t dim, std::size_t heads,
                 std::size_t ffn_mult, std::size_t out, Rng& rng);

  ad::Var<T> operator()(ad::Graph<T>& g, ad::Var<T> tokens,
                        const Tensor<T>& time_embedding,
                        const ad::Segments& segments) const;
  std::size_t dim() const { return dim_; }

 private:
  std::size_t dim_ = 0;
  nn::Linear<T> in_proj_, out_proj_;
  nn::AttentionLayer<T> block_;
  nn::LayerNorm<T> ln_out_;
};

template <class T>
class VelocityNet {
 public:
  VelocityNet() = default;
  /// Registers parameters under "velocity."; gate parameters use the
  /// optimizer group "gate".
  VelocityNet(const VelocityConfig& cfg, ad::ParameterStore<T>& store,
              Rng& rng);

  VelocityOutput<T> forward(ad::Graph<T>& g, const VelocityBatch<T>& batch,
                            RoutingTrace* trace = nullptr) const;

  /// Condition representation h [B, condition_width] (null rows replaced).
  ad::Var<T> encode_condition(ad::Graph<T>& g,
                              const VelocityBatch<T>& batch) const;
  /// Gate probabilities [B, N] for the given batch.
  ad::Var<T> gate_probs(ad::Graph<T>& g, ad::Var<T> z_t, ad::Var<T> h,
                        const std::vector<double>& t) const;

  const VelocityConfig& config() const { return cfg_; }

 private:
  ad::Var<T> expert_tokens(ad::Graph<T>& g, ad::Var<T> z_t,
                           ad::Var<T> h) const;

  VelocityConfig cfg_;
  // condition encoder (spatial mode)
  nn::Linear<T> cond_proj_;
  nn::AttentionLayer<T> cond_self_, cond_cross_;
  ad::Parameter<T>* type_table_ = nullptr;
  ad::Parameter<T>* null_condition_ = nullptr;
  ad::Parameter<T>* null_type_ = nullptr;
  std::vector<VelocityExpert<T>> experts_;
  nn::Mlp<T> gate_;
};

/// Mean importance CV over a batch: sqrt of load_balance_loss.
double importance_cv(const Tensor<double>& probs);

enum class RoutingStatistic { weight_mass, selection_count };

/// Per-class expert utilisation in percent, rows = classes. Classes that
/// never occur yield all-zero rows.
Tensor<double> routing_distribution(
    const std::vector<GateDecision>& decisions,
    const std::vector<std::size_t>& labels, std::size_t num_classes,
    std::size_t num_experts,
    RoutingStatistic stat = RoutingStatistic::weight_mass);

struct ModePurity {
  Tensor<double> counts;  // [experts, modes]
  double purity = 0.0;
  std::size_t active_experts = 0;
  bool degenerate() const { return active_experts <= 1; }
};

/// Requires top-1 decisions.
ModePurity mode_purity(const std::vector<GateDecision>& decisions,
                       const std::vector<std::size_t>& modes,
                       std::size_t num_experts, std::size_t num_modes);

}  // namespace molf
