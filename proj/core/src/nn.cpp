// Copyright 2026 The MoLF Authors
// SPDX-License-Identifier: Apache-2.0

#include "molf/nn.hpp"

#include <algorithm>
#include <cmath>

namespace molf::nn {

template <class T>
Tensor<T> uniform_fan_in(Rng& rng, Shape shape, std::size_t fan_in) {
  Tensor<T> t(std::move(shape));
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (std::size_t i = 0; i < t.size(); ++i)
    t[i] = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

template <class T>
Linear<T>::Linear(ParameterStore<T>& store, const std::string& name,
                  std::size_t in, std::size_t out, Rng& rng, bool zero_init,
                  const std::string& group)
    : in_(in), out_(out) {
  MOLF_EXPECT(in > 0 && out > 0, "linear " + name + ": zero width");
  weight_ = &store.add(name + ".weight",
                       zero_init ? Tensor<T>(Shape{in, out})
                                 : uniform_fan_in<T>(rng, Shape{in, out}, in),
                       group);
  bias_ = &store.add(name + ".bias", Tensor<T>(Shape{out}), group);
}

template <class T>
Var<T> Linear<T>::operator()(Graph<T>& g, Var<T> x) const {
  return ad::linear(x, g.param(*weight_), g.param(*bias_));
}

template <class T>
LayerNorm<T>::LayerNorm(ParameterStore<T>& store, const std::string& name,
                        std::size_t dim, const std::string& group) {
  gamma_ = &store.add(name + ".gamma", Tensor<T>(Shape{dim}, T{1}), group);
  beta_ = &store.add(name + ".beta", Tensor<T>(Shape{dim}), group);
}

template <class T>
Var<T> LayerNorm<T>::operator()(Graph<T>& g, Var<T> x) const {
  return ad::layer_norm(x, g.param(*gamma_), g.param(*beta_));
}

template <class T>
Mlp<T>::Mlp(ParameterStore<T>& store, const std::string& name,
            const std::vector<std::size_t>& widths, Rng& rng,
            bool zero_init_last, const std::string& group) {
  MOLF_EXPECT(widths.size() >= 2, "mlp " + name + ": needs >= 2 widths");
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    const bool last = i + 2 == widths.size();
    layers_.emplace_back(store, name + "." + std::to_string(i), widths[i],
                         widths[i + 1], rng, last && zero_init_last, group);
  }
}

template <class T>
Var<T> Mlp<T>::operator()(Graph<T>& g, Var<T> x) const {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    x = layers_[i](g, x);
    if (i + 1 < layers_.size()) x = ad::gelu(x);
  }
  return x;
}

template <class T>
AttentionLayer<T>::AttentionLayer(ParameterStore<T>& store,
                                  const std::string& name,
                                  const AttentionConfig& cfg, Rng& rng,
                                  const std::string& group)
    : cfg_(cfg), name_(name) {
  MOLF_EXPECT(cfg.heads > 0 && cfg.dim % cfg.heads == 0,
              "attention layer " + name + ": dim " + std::to_string(cfg.dim) +
                  " not divisible by " + std::to_string(cfg.heads) + " heads");
  const std::size_t d = cfg.dim;
  const std::size_t dc = cfg.context_dim ? cfg.context_dim : d;
  cfg_.context_dim = dc;
  ln_attn_ = LayerNorm<T>(store, name + ".ln_attn", d, group);
  if (cfg.cross) ln_ctx_ = LayerNorm<T>(store, name + ".ln_ctx", dc, group);
  wq_ = Linear<T>(store, name + ".wq", d, d, rng, false, group);
  wk_ = Linear<T>(store, name + ".wk", cfg.cross ? dc : d, d, rng, false,
                  group);
  wv_ = Linear<T>(store, name + ".wv", cfg.cross ? dc : d, d, rng, false,
                  group);
  wo_ = Linear<T>(store, name + ".wo", d, d, rng, true, group);
  ln_ffn_ = LayerNorm<T>(store, name + ".ln_ffn", d, group);
  ffn_in_ = Linear<T>(store, name + ".ffn_in", d, d * cfg.ffn_mult, rng, false,
                      group);
  ffn_out_ = Linear<T>(store, name + ".ffn_out", d * cfg.ffn_mult, d, rng,
                       true, group);
}

template <class T>
Var<T> AttentionLayer<T>::feed_forward(Graph<T>& g, Var<T> x) const {
  auto h = ffn_out_(g, ad::gelu(ffn_in_(g, ln_ffn_(g, x))));
  return ad::add(x, h);
}

template <class T>
Var<T> AttentionLayer<T>::self_attention(Graph<T>& g, Var<T> x,
                                         const Segments& segments,
                                         std::vector<Tensor<T>>* weights) const {
  MOLF_EXPECT(x.cols() == cfg_.dim,
              "self_attention " + name_ + ": token width " +
                  std::to_string(x.cols()) + " != model dim " +
                  std::to_string(cfg_.dim));
  MOLF_EXPECT(!cfg_.cross, "self_attention called on a cross-attention layer");
  auto h = ln_attn_(g, x);
  const bool singletons = std::all_of(segments.begin(), segments.end(),
                                      [](std::size_t n) { return n == 1; });
  if (singletons) {
    MOLF_EXPECT(segments.size() == x.rows(),
                "self_attention " + name_ + ": segments do not cover the input");
    // A token alone in its sequence attends to itself with weight 1, so the
    // query/key projections cannot influence the result.
    if (weights)
      for (std::size_t i = 0; i < segments.size() * cfg_.heads; ++i)
        weights->push_back(Tensor<T>(Shape{1, 1}, T{1}));
    return feed_forward(g, ad::add(x, wo_(g, wv_(g, h))));
  }
  auto a = ad::attention(wq_(g, h), wk_(g, h), wv_(g, h), cfg_.heads,
                         segments, segments, weights);
  return feed_forward(g, ad::add(x, wo_(g, a)));
}

template <class T>
Var<T> AttentionLayer<T>::cross_attention(Graph<T>& g, Var<T> queries,
                                          Var<T> context,
                                          const Segments& q_segments,
                                          const Segments& ctx_segments,
                                          std::vector<Tensor<T>>* weights) const {
  MOLF_EXPECT(cfg_.cross, "cross_attention called on a self-attention layer");
  MOLF_EXPECT(queries.cols() == cfg_.dim,
              "cross_attention " + name_ + ": query width mismatch");
  MOLF_EXPECT(context.rows() > 0, "cross_attention " + name_ +
                                      ": empty context");
  MOLF_EXPECT(context.cols() == cfg_.context_dim,
              "cross_attention " + name_ + ": context width mismatch");
  auto h = ln_attn_(g, queries);
  auto c = ln_ctx_(g, context);
  auto a = ad::attention(wq_(g, h), wk_(g, c), wv_(g, c), cfg_.heads,
                         q_segments, ctx_segments, weights);
  return feed_forward(g, ad::add(queries, wo_(g, a)));
}

template <class T>
std::vector<T> sinusoidal_pe(double x, double y, std::size_t dim,
                             double base) {
  MOLF_EXPECT(dim > 0 && dim % 4 == 0,
              "sinusoidal_pe: dim " + std::to_string(dim) +
                  " must be divisible by 4");
  const std::size_t half = dim / 2;
  std::vector<T> out(dim);
  for (std::size_t axis = 0; axis < 2; ++axis) {
    const double v = axis == 0 ? x : y;
    for (std::size_t i = 0; i < half / 2; ++i) {
      const double w = std::pow(base, -2.0 * static_cast<double>(i) /
                                          static_cast<double>(half));
      out[axis * half + 2 * i] = static_cast<T>(std::sin(v * w));
      out[axis * half + 2 * i + 1] = static_cast<T>(std::cos(v * w));
    }
  }
  return out;
}

template <class T>
Tensor<T> sinusoidal_pe_rows(const Tensor<T>& coords, std::size_t dim,
                             double base) {
  MOLF_EXPECT(coords.rank() == 2 && coords.cols() == 2,
              "sinusoidal_pe_rows: coordinates must be [m, 2]");
  Tensor<T> out(Shape{coords.rows(), dim});
  for (std::size_t r = 0; r < coords.rows(); ++r) {
    auto pe = sinusoidal_pe<T>(coords.at(r, 0), coords.at(r, 1), dim, base);
    std::copy(pe.begin(), pe.end(), out.data() + r * dim);
  }
  return out;
}

template <class T>
std::vector<T> time_embed(double t, std::size_t dim, double base,
                          double scale) {
  MOLF_EXPECT(t >= 0.0 && t <= 1.0,
              "time_embed: t=" + std::to_string(t) + " outside [0, 1]");
  MOLF_EXPECT(dim > 0 && dim % 2 == 0, "time_embed: dim must be even");
  std::vector<T> out(dim);
  for (std::size_t i = 0; i < dim / 2; ++i) {
    const double w =
        std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(dim));
    out[2 * i] = static_cast<T>(std::sin(scale * t * w));
    out[2 * i + 1] = static_cast<T>(std::cos(scale * t * w));
  }
  return out;
}

template <class T>
Tensor<T> time_embed_rows(const std::vector<double>& t, std::size_t dim,
                          double base, double scale) {
  Tensor<T> out(Shape{t.size(), dim});
  for (std::size_t r = 0; r < t.size(); ++r) {
    auto e = time_embed<T>(t[r], dim, base, scale);
    std::copy(e.begin(), e.end(), out.data() + r * dim);
  }
  return out;
}

template <class T>
void randomize(ParameterStore<T>& store, Rng& rng, double stddev,
               const std::string& prefix) {
  for (std::size_t k = 0; k < store.size(); ++k) {
    auto& p = store[k];
    if (!p.name().starts_with(prefix)) continue;
    for (std::size_t i = 0; i < p.value().size(); ++i)
      p.value()[i] = static_cast<T>(stddev * rng.normal());
  }
}

#define MOLF_INSTANTIATE_NN(T)                                              \
  template Tensor<T> uniform_fan_in<T>(Rng&, Shape, std::size_t);           \
  template class Linear<T>;                                                 \
  template class LayerNorm<T>;                                              \
  template class Mlp<T>;                                                    \
  template class AttentionLayer<T>;                                         \
  template std::vector<T> sinusoidal_pe<T>(double, double, std::size_t,     \
                                           double);                         \
  template Tensor<T> sinusoidal_pe_rows<T>(const Tensor<T>&, std::size_t,   \
                                           double);                         \
  template std::vector<T> time_embed<T>(double, std::size_t, double,        \
                                        double);                            \
  template Tensor<T> time_embed_rows<T>(const std::vector<double>&,         \
                                        std::size_t, double, double);       \
  template void randomize<T>(ParameterStore<T>&, Rng&, double,              \
                             const std::string&);

MOLF_INSTANTIATE_NN(float)
MOLF_INSTANTIATE_NN(double)

}  // namespace molf::nn
