// Copyright 2026 The MoLF Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include "molf/autodiff.hpp"
#include "molf/rng.hpp"

namespace molf::nn {

using ad::Graph;
using ad::ParameterStore;
using ad::Segments;
using ad::Var;

/// U(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialisation.
template <class T>
Tensor<T> uniform_fan_in(Rng& rng, Shape shape, std::size_t fan_in);

template <class T>
class Linear {
 public:
  Linear() = default;
  Linear(ParameterStore<T>& store, const std::string& name, std::size_t in,
         std::size_t out, Rng& rng, bool zero_init = false,
         const std::string& group = "backbone");

  Var<T> operator()(Graph<T>& g, Var<T> x) const;

  std::size_t in_features() const { return in_; }
  std::size_t out_features() const { return out_; }
  ad::Parameter<T>& weight() const { return *weight_; }
  ad::Parameter<T>& bias() const { return *bias_; }

 private:
  ad::Parameter<T>* weight_ = nullptr;
  ad::Parameter<T>* bias_ = nullptr;
  std::size_t in_ = 0, out_ = 0;
};

template <class T>
class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParameterStore<T>& store, const std::string& name,
            std::size_t dim, const std::string& group = "backbone");
  Var<T> operator()(Graph<T>& g, Var<T> x) const;

 private:
  ad::Parameter<T>* gamma_ = nullptr;
  ad::Parameter<T>* beta_ = nullptr;
};

/// Stack of Linear layers with GELU between them (none after the last).
template <class T>
class Mlp {
 public:
  Mlp() = default;
  /// widths = {in, hidden..., out}
  Mlp(ParameterStore<T>& store, const std::string& name,
      const std::vector<std::size_t>& widths, Rng& rng,
      bool zero_init_last = false, const std::string& group = "backbone");
  Var<T> operator()(Graph<T>& g, Var<T> x) const;

  std::size_t in_features() const { return layers_.front().in_features(); }
  std::size_t out_features() const { return layers_.back().out_features(); }

 private:
  std::vector<Linear<T>> layers_;
};

struct AttentionConfig {
  std::size_t dim = 256;
  std::size_t heads = 4;
  std::size_t ffn_mult = 4;
  // Width of cross-attention context tokens; 0 means `dim`.
  std::size_t context_dim = 0;
  bool cross = false;
};

/// Pre-layer-norm transformer block:
///   x <- x + Wo * MHA(LN(x), ctx)      (ctx = LN(x) for self-attention)
///   x <- x + FFN(LN(x))
/// The two residual output projections start at zero, so a fresh block is
/// the identity map.
template <class T>
class AttentionLayer {
 public:
  AttentionLayer() = default;
  AttentionLayer(ParameterStore<T>& store, const std::string& name,
                 const AttentionConfig& cfg, Rng& rng,
                 const std::string& group = "backbone");

  /// Tokens are rows of x; each segment is an independent sequence.
  Var<T> self_attention(Graph<T>& g, Var<T> x, const Segments& segments,
                        std::vector<Tensor<T>>* weights = nullptr) const;

  /// Query segment s attends to context segment s.
  Var<T> cross_attention(Graph<T>& g, Var<T> queries, Var<T> context,
                         const Segments& q_segments,
                         const Segments& ctx_segments,
                         std::vector<Tensor<T>>* weights = nullptr) const;

  const AttentionConfig& config() const { return cfg_; }
  const std::string& name() const { return name_; }

 private:
  Var<T> feed_forward(Graph<T>& g, Var<T> x) const;

  AttentionConfig cfg_;
  std::string name_;
  LayerNorm<T> ln_attn_, ln_ctx_, ln_ffn_;
  Linear<T> wq_, wk_, wv_, wo_, ffn_in_, ffn_out_;
};

/// Sinusoidal encoding of a 2-D spot coordinate. The first dim/2 channels
/// encode x, the rest y, each as interleaved (sin, cos) pairs with
/// frequencies base^(-2i / (dim/2)).
template <class T>
std::vector<T> sinusoidal_pe(double x, double y, std::size_t dim,
                             double base = 10000.0);

/// Row-wise sinusoidal_pe over an [m, 2] coordinate matrix.
template <class T>
Tensor<T> sinusoidal_pe_rows(const Tensor<T>& coords, std::size_t dim,
                             double base = 10000.0);

/// Interleaved (sin, cos) embedding of t in [0, 1] with frequencies
/// base^(-2i/dim); t is multiplied by `scale` first so that the unit
/// interval spans many periods of the fastest channel.
template <class T>
std::vector<T> time_embed(double t, std::size_t dim, double base = 10000.0,
                          double scale = 1000.0);

template <class T>
Tensor<T> time_embed_rows(const std::vector<double>& t, std::size_t dim,
                          double base = 10000.0, double scale = 1000.0);

/// Re-draw every parameter under `prefix` from N(0, stddev^2). Tests use it
/// to leave the identity-at-init regime.
template <class T>
void randomize(ParameterStore<T>& store, Rng& rng, double stddev,
               const std::string& prefix = "");

}  // namespace molf::nn
