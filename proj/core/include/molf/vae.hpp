// Copyright 2026 The MoLF Authors
// SPDX-License-Identifier: Apache-2.0

// Stage I: a transformer encoder q(z|x) and MLP decoder f(z) over
// log1p-normalised expression vectors, trained with a beta-weighted ELBO.

#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "molf/nn.hpp"

namespace molf {

struct VaeConfig {
  std::size_t gene_dim = 0;
  std::size_t latent_dim = 128;
  // The gene vector is cut into `tokens` equal chunks (last one zero-padded),
  // each projected to `hidden`.
  std::size_t tokens = 8;
  std::size_t hidden = 512;
  std::size_t heads = 4;
  std::size_t layers = 1;
  std::size_t ffn_mult = 4;
  std::vector<std::size_t> decoder_hidden = {512, 512};
  double beta = 1e-3;
  double log_sigma_min = -6.0;
  double log_sigma_max = 3.0;
  bool zero_init_decoder_output = false;

  std::size_t token_width() const {
    return tokens == 0 ? 0 : (gene_dim + tokens - 1) / tokens;
  }
  void validate() const;
};

template <class T>
struct Posterior {
  ad::Var<T> mu;         // [B, L]
  ad::Var<T> log_sigma;  // [B, L], clamped
  ad::Var<T> sigma;      // exp(log_sigma)
};

template <class T>
class GeneVae {
 public:
  GeneVae() = default;
  /// Registers parameters under "vae.encoder." and "vae.decoder.".
  GeneVae(const VaeConfig& cfg, ad::ParameterStore<T>& store, Rng& rng);

  /// x: [B, gene_dim]
  Posterior<T> encode(ad::Graph<T>& g, ad::Var<T> x) const;
  /// z: [B, latent_dim] -> [B, gene_dim]
  ad::Var<T> decode(ad::Graph<T>& g, ad::Var<T> z) const;

  const VaeConfig& config() const { return cfg_; }
  /// True when every decoder parameter is frozen.
  bool decoder_frozen() const;

 private:
  VaeConfig cfg_;
  nn::Linear<T> token_proj_;
  ad::Parameter<T>* token_pos_ = nullptr;
  std::vector<nn::AttentionLayer<T>> blocks_;
  nn::LayerNorm<T> ln_out_;
  nn::Linear<T> mu_head_, log_sigma_head_;
  nn::Mlp<T> decoder_;
  std::vector<ad::Parameter<T>*> decoder_params_;
};

/// z = mu + sigma * noise
template <class T>
ad::Var<T> reparameterize(ad::Var<T> mu, ad::Var<T> sigma, ad::Var<T> noise);

/// 1/2 * sum_i (mu_i^2 + sigma_i^2 - 1 - 2 ln sigma_i), averaged over rows.
/// Throws ContractViolation if any sigma <= 0.
template <class T>
ad::Var<T> kl_to_standard_normal(ad::Var<T> mu, ad::Var<T> sigma);

/// Element-mean squared reconstruction error + beta * KL.
template <class T>
ad::Var<T> vae_loss(ad::Var<T> x, ad::Var<T> reconstruction,
                    const Posterior<T>& posterior, double beta);

/// Plain-value form of the KL term for a single posterior.
double kl_to_standard_normal(std::span<const double> mu,
                             std::span<const double> sigma);

/// Parameters plus the network view into them. Movable: modules hold
/// pointers to heap-allocated parameters, which survive a move.
template <class T>
struct VaeModel {
  VaeConfig config;
  ad::ParameterStore<T> params;
  GeneVae<T> net;

  static VaeModel create(const VaeConfig& cfg, std::uint64_t seed);
  /// Rebuild the network over an existing parameter set (checkpoint load).
  static VaeModel from_params(const VaeConfig& cfg,
                              ad::ParameterStore<T> params);
};

/// Posterior means for every row of x, evaluated without a tape.
Tensor<float> encode_means(const VaeModel<float>& vae, const Tensor<float>& x,
                           std::size_t batch = 512);
/// Decoder means for every row of z.
Tensor<float> decode_rows(const VaeModel<float>& vae, const Tensor<float>& z,
                          std::size_t batch = 512);

struct VaeEpochLog {
  std::size_t epoch = 0;
  double train_loss = 0, train_mse = 0, train_kl = 0;
  double val_loss = 0;
};

struct VaeTrainOptions {
  std::size_t epochs = 1000;
  std::size_t patience = 50;
  std::size_t batch_size = 256;
  double lr = 5e-5;
  double weight_decay = 0.01;
  std::uint64_t seed = 0;
  std::function<void(const VaeEpochLog&)> on_epoch;
};

struct VaeTrainResult {
  VaeModel<float> model;  // best-validation parameters, frozen
  std::size_t best_epoch = 0;
  std::size_t epochs_run = 0;
  double best_val_loss = 0;
  std::vector<VaeEpochLog> log;
};

/// Validation loss uses the posterior mean (no sampling) and is therefore
/// deterministic; an empty validation set falls back to the training set.
double vae_validation_loss(const VaeModel<float>& vae, const Tensor<float>& x,
                           std::size_t batch = 512);

VaeTrainResult train_vae(const Tensor<float>& train_x,
                         const Tensor<float>& val_x, const VaeConfig& cfg,
                         const VaeTrainOptions& opt);

}  // namespace molf
