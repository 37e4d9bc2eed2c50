// Copyright 2026 The MoLF Authors
// SPDX-License-Identifier: Apache-2.0

#include "molf/vae.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "molf/optim.hpp"

namespace molf {

void VaeConfig::validate() const {
  if (gene_dim == 0) throw ConfigError("vae: gene_dim must be positive");
  if (latent_dim == 0) throw ConfigError("vae: latent_dim must be positive");
  if (tokens == 0) throw ConfigError("vae: tokens must be positive");
  if (hidden == 0 || heads == 0 || hidden % heads != 0)
    throw ConfigError("vae: hidden must be a positive multiple of heads");
  if (beta < 0.0) throw ConfigError("vae: beta must be >= 0");
  if (log_sigma_min >= log_sigma_max)
    throw ConfigError("vae: log_sigma_min must be below log_sigma_max");
}

template <class T>
GeneVae<T>::GeneVae(const VaeConfig& cfg, ad::ParameterStore<T>& store,
                    Rng& rng)
    : cfg_(cfg) {
  cfg_.validate();
  const std::size_t w = cfg_.token_width();
  token_proj_ =
      nn::Linear<T>(store, "vae.encoder.token_proj", w, cfg_.hidden, rng);
  token_pos_ = &store.add(
      "vae.encoder.token_pos",
      nn::uniform_fan_in<T>(rng, Shape{cfg_.tokens, cfg_.hidden}, cfg_.hidden));
  nn::AttentionConfig ac{cfg_.hidden, cfg_.heads, cfg_.ffn_mult, 0, false};
  for (std::size_t l = 0; l < cfg_.layers; ++l)
    blocks_.emplace_back(store, "vae.encoder.block" + std::to_string(l), ac,
                         rng);
  ln_out_ = nn::LayerNorm<T>(store, "vae.encoder.ln_out", cfg_.hidden);
  mu_head_ = nn::Linear<T>(store, "vae.encoder.mu", cfg_.hidden,
                           cfg_.latent_dim, rng);
  log_sigma_head_ = nn::Linear<T>(store, "vae.encoder.log_sigma", cfg_.hidden,
                                  cfg_.latent_dim, rng);
  std::vector<std::size_t> widths{cfg_.latent_dim};
  widths.insert(widths.end(), cfg_.decoder_hidden.begin(),
                cfg_.decoder_hidden.end());
  widths.push_back(cfg_.gene_dim);
  const std::size_t before = store.size();
  decoder_ = nn::Mlp<T>(store, "vae.decoder.mlp", widths, rng,
                        cfg_.zero_init_decoder_output);
  for (std::size_t i = before; i < store.size(); ++i)
    decoder_params_.push_back(&store[i]);
}

template <class T>
Posterior<T> GeneVae<T>::encode(ad::Graph<T>& g, ad::Var<T> x) const {
  MOLF_EXPECT(x.shape().size() == 2 && x.cols() == cfg_.gene_dim,
              "vae encode: expected [B, " + std::to_string(cfg_.gene_dim) +
                  "] input, got " + shape_to_string(x.shape()));
  const std::size_t b = x.rows();
  const std::size_t tk = cfg_.tokens, w = cfg_.token_width();
  const std::size_t pad = tk * w - cfg_.gene_dim;
  if (pad > 0)
    x = ad::concat_cols<T>({x, g.constant(Tensor<T>(Shape{b, pad}))});
  auto h = token_proj_(g, ad::reshape(x, Shape{b * tk, w}));
  h = ad::add_tiled_rows(h, g.param(*token_pos_));
  const auto segments = ad::equal_segments(b, tk);
  for (const auto& blk : blocks_) h = blk.self_attention(g, h, segments);
  h = ln_out_(g, h);
  // Mean-pool the tokens of each sample.
  auto flat = ad::reshape(h, Shape{b, tk * cfg_.hidden});
  auto pooled = ad::slice_cols(flat, 0, cfg_.hidden);
  for (std::size_t j = 1; j < tk; ++j)
    pooled = ad::add(pooled, ad::slice_cols(flat, j * cfg_.hidden, cfg_.hidden));
  pooled = ad::scale(pooled, T{1} / static_cast<T>(tk));
  Posterior<T> p;
  p.mu = mu_head_(g, pooled);
  p.log_sigma = ad::clamp(log_sigma_head_(g, pooled),
                          static_cast<T>(cfg_.log_sigma_min),
                          static_cast<T>(cfg_.log_sigma_max));
  p.sigma = ad::exp(p.log_sigma);
  return p;
}

template <class T>
ad::Var<T> GeneVae<T>::decode(ad::Graph<T>& g, ad::Var<T> z) const {
  MOLF_EXPECT(z.shape().size() == 2 && z.cols() == cfg_.latent_dim,
              "vae decode: expected [B, " + std::to_string(cfg_.latent_dim) +
                  "] latent, got " + shape_to_string(z.shape()));
  return decoder_(g, z);
}

template <class T>
bool GeneVae<T>::decoder_frozen() const {
  return std::all_of(decoder_params_.begin(), decoder_params_.end(),
                     [](const ad::Parameter<T>* p) { return p->frozen(); });
}

template <class T>
ad::Var<T> reparameterize(ad::Var<T> mu, ad::Var<T> sigma, ad::Var<T> noise) {
  MOLF_EXPECT(mu.shape() == sigma.shape() && mu.shape() == noise.shape(),
              "reparameterize: mu, sigma and noise must share a shape");
  return ad::add(mu, ad::mul(sigma, noise));
}

template <class T>
ad::Var<T> kl_to_standard_normal(ad::Var<T> mu, ad::Var<T> sigma) {
  MOLF_EXPECT(mu.shape() == sigma.shape(),
              "kl_to_standard_normal: mu/sigma shape mismatch");
  for (const T& s : sigma.value().values())
    MOLF_EXPECT(s > T{0}, "kl_to_standard_normal: sigma must be positive");
  const std::size_t rows = mu.value().rows();
  const auto n = static_cast<T>(mu.size());
  auto& g = mu.graph();
  auto terms = ad::sub(ad::add(ad::square(mu), ad::square(sigma)),
                       ad::scale(ad::log(sigma), T{2}));
  auto total = ad::add_scalar(ad::sum(terms), -n);
  (void)g;
  return ad::scale(total, T(0.5) / static_cast<T>(rows));
}

template <class T>
ad::Var<T> vae_loss(ad::Var<T> x, ad::Var<T> reconstruction,
                    const Posterior<T>& posterior, double beta) {
  MOLF_EXPECT(beta >= 0.0, "vae_loss: beta must be non-negative");
  MOLF_EXPECT(x.shape() == reconstruction.shape(),
              "vae_loss: reconstruction shape mismatch");
  auto mse = ad::mean(ad::square(ad::sub(x, reconstruction)));
  if (beta == 0.0) return mse;
  auto kl = kl_to_standard_normal(posterior.mu, posterior.sigma);
  return ad::add(mse, ad::scale(kl, static_cast<T>(beta)));
}

double kl_to_standard_normal(std::span<const double> mu,
                             std::span<const double> sigma) {
  MOLF_EXPECT(mu.size() == sigma.size(),
              "kl_to_standard_normal: length mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < mu.size(); ++i) {
    MOLF_EXPECT(sigma[i] > 0.0, "kl_to_standard_normal: sigma must be positive");
    acc += mu[i] * mu[i] + sigma[i] * sigma[i] - 1.0 - 2.0 * std::log(sigma[i]);
  }
  return 0.5 * acc;
}

template <class T>
VaeModel<T> VaeModel<T>::create(const VaeConfig& cfg, std::uint64_t seed) {
  VaeModel m;
  m.config = cfg;
  Rng rng(seed, 0x5641450ULL);
  m.net = GeneVae<T>(cfg, m.params, rng);
  return m;
}

template <class T>
VaeModel<T> VaeModel<T>::from_params(const VaeConfig& cfg,
                                     ad::ParameterStore<T> params) {
  VaeModel m = create(cfg, 0);
  m.params.assign_from(params);
  return m;
}

Tensor<float> encode_means(const VaeModel<float>& vae, const Tensor<float>& x,
                           std::size_t batch) {
  const std::size_t n = x.rows(), g = x.cols(), l = vae.config.latent_dim;
  Tensor<float> out(Shape{n, l});
  for (std::size_t s = 0; s < n; s += batch) {
    const std::size_t e = std::min(n, s + batch);
    ad::Graph<float> gr(false);
    Tensor<float> xb(Shape{e - s, g},
                     std::vector<float>(x.data() + s * g, x.data() + e * g));
    auto p = vae.net.encode(gr, gr.constant(std::move(xb)));
    std::copy_n(p.mu.value().data(), (e - s) * l, out.data() + s * l);
  }
  return out;
}

Tensor<float> decode_rows(const VaeModel<float>& vae, const Tensor<float>& z,
                          std::size_t batch) {
  const std::size_t n = z.rows(), l = z.cols(), g = vae.config.gene_dim;
  Tensor<float> out(Shape{n, g});
  for (std::size_t s = 0; s < n; s += batch) {
    const std::size_t e = std::min(n, s + batch);
    ad::Graph<float> gr(false);
    Tensor<float> zb(Shape{e - s, l},
                     std::vector<float>(z.data() + s * l, z.data() + e * l));
    auto r = vae.net.decode(gr, gr.constant(std::move(zb)));
    std::copy_n(r.value().data(), (e - s) * g, out.data() + s * g);
  }
  return out;
}

namespace {

Tensor<float> take_rows(const Tensor<float>& x,
                        std::span<const std::size_t> rows) {
  const std::size_t c = x.cols();
  Tensor<float> out(Shape{rows.size(), c});
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy_n(x.data() + rows[i] * c, c, out.data() + i * c);
  return out;
}

}  // namespace

double vae_validation_loss(const VaeModel<float>& vae, const Tensor<float>& x,
                           std::size_t batch) {
  const std::size_t n = x.rows();
  double acc = 0.0;
  for (std::size_t s = 0; s < n; s += batch) {
    const std::size_t e = std::min(n, s + batch);
    std::vector<std::size_t> rows(e - s);
    std::iota(rows.begin(), rows.end(), s);
    ad::Graph<float> g(false);
    auto xb = g.constant(take_rows(x, rows));
    auto p = vae.net.encode(g, xb);
    auto recon = vae.net.decode(g, p.mu);
    auto loss = vae_loss(xb, recon, p, vae.config.beta);
    acc += static_cast<double>(loss.value().item()) * static_cast<double>(e - s);
  }
  return acc / static_cast<double>(n);
}

VaeTrainResult train_vae(const Tensor<float>& train_x,
                         const Tensor<float>& val_x, const VaeConfig& cfg,
                         const VaeTrainOptions& opt) {
  MOLF_EXPECT(train_x.rank() == 2 && train_x.rows() > 0,
              "train_vae: empty training set");
  MOLF_EXPECT(train_x.cols() == cfg.gene_dim,
              "train_vae: expression width does not match gene_dim");
  MOLF_EXPECT(opt.batch_size > 0, "train_vae: batch_size must be positive");
  const Tensor<float>& val = val_x.rank() == 2 && val_x.rows() > 0 ? val_x
                                                                   : train_x;
  VaeTrainResult res{VaeModel<float>::create(cfg, opt.seed), 0, 0, 0, {}};
  auto& model = res.model;
  AdamW<float> adam(AdamWOptions{opt.lr, 0.9, 0.999, 1e-8, opt.weight_decay});
  Rng rng(opt.seed, 0x7261696EULL);

  ad::ParameterStore<float> best = model.params.converted<float>();
  double best_val = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;
  const std::size_t n = train_x.rows();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (std::size_t epoch = 1; epoch <= opt.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    VaeEpochLog log;
    log.epoch = epoch;
    for (std::size_t s = 0; s < n; s += opt.batch_size) {
      const std::size_t e = std::min(n, s + opt.batch_size);
      std::span<const std::size_t> rows(order.data() + s, e - s);
      model.params.zero_grad();
      ad::Graph<float> g;
      auto xb = g.constant(take_rows(train_x, rows));
      auto p = model.net.encode(g, xb);
      Tensor<float> eps(p.mu.shape());
      for (std::size_t i = 0; i < eps.size(); ++i)
        eps[i] = static_cast<float>(rng.normal());
      auto z = reparameterize(p.mu, p.sigma, g.constant(std::move(eps)));
      auto recon = model.net.decode(g, z);
      auto mse = ad::mean(ad::square(ad::sub(xb, recon)));
      auto kl = kl_to_standard_normal(p.mu, p.sigma);
      auto loss = ad::add(mse, ad::scale(kl, static_cast<float>(cfg.beta)));
      g.backward(loss);
      adam.step(model.params);
      const double w = static_cast<double>(e - s) / static_cast<double>(n);
      log.train_loss += w * loss.value().item();
      log.train_mse += w * mse.value().item();
      log.train_kl += w * kl.value().item();
    }
    log.val_loss = vae_validation_loss(model, val);
    if (!std::isfinite(log.val_loss))
      throw NumericError("train_vae: validation loss diverged at epoch " +
                         std::to_string(epoch));
    res.log.push_back(log);
    res.epochs_run = epoch;
    if (opt.on_epoch) opt.on_epoch(log);
    if (log.val_loss < best_val) {
      best_val = log.val_loss;
      res.best_epoch = epoch;
      best.assign_from(model.params);
      since_best = 0;
    } else if (++since_best > opt.patience) {
      break;
    }
  }
  model.params.assign_from(best);
  model.params.set_frozen(true);
  res.best_val_loss = best_val;
  return res;
}

#define MOLF_INSTANTIATE_VAE(T)                                          \
  template class GeneVae<T>;                                             \
  template struct VaeModel<T>;                                           \
  template ad::Var<T> reparameterize<T>(ad::Var<T>, ad::Var<T>,          \
                                        ad::Var<T>);                     \
  template ad::Var<T> kl_to_standard_normal<T>(ad::Var<T>, ad::Var<T>); \
  template ad::Var<T> vae_loss<T>(ad::Var<T>, ad::Var<T>,                \
                                  const Posterior<T>&, double);

MOLF_INSTANTIATE_VAE(float)
MOLF_INSTANTIATE_VAE(double)

}  // namespace molf
