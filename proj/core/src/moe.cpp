// Copyright 2026 The MoLF Authors
// SPDX-License-Identifier: Apache-2.0

#include "molf/moe.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace molf {

std::vector<std::size_t> top_k_indices(std::span<const double> probs,
                                       std::size_t k) {
  MOLF_EXPECT(k >= 1 && k <= probs.size(),
              "top-k: k=" + std::to_string(k) + " outside [1, " +
                  std::to_string(probs.size()) + "]");
  std::vector<std::size_t> order(probs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return probs[a] > probs[b];
  });
  order.resize(k);
  return order;
}

GateDecision gate_from_logits(std::span<const double> logits, std::size_t k) {
  MOLF_EXPECT(!logits.empty(), "gate: no experts");
  GateDecision d;
  const double mx = *std::max_element(logits.begin(), logits.end());
  d.full_probs.resize(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i)
    z += (d.full_probs[i] = std::exp(logits[i] - mx));
  for (double& p : d.full_probs) p /= z;
  d.experts = top_k_indices(d.full_probs, k);
  double s = 0.0;
  for (auto e : d.experts) s += d.full_probs[e];
  for (auto e : d.experts) d.weights.push_back(d.full_probs[e] / s);
  return d;
}

std::vector<double> compose_velocity(
    const GateDecision& decision,
    const std::vector<std::vector<double>>& expert_outputs) {
  MOLF_EXPECT(expert_outputs.size() == decision.experts.size() &&
                  decision.weights.size() == decision.experts.size(),
              "compose_velocity: " + std::to_string(expert_outputs.size()) +
                  " outputs for " + std::to_string(decision.experts.size()) +
                  " selected experts");
  MOLF_EXPECT(!expert_outputs.empty(), "compose_velocity: nothing selected");
  std::vector<double> v(expert_outputs.front().size(), 0.0);
  for (std::size_t j = 0; j < expert_outputs.size(); ++j) {
    MOLF_EXPECT(expert_outputs[j].size() == v.size(),
                "compose_velocity: expert output width mismatch");
    for (std::size_t i = 0; i < v.size(); ++i)
      v[i] += decision.weights[j] * expert_outputs[j][i];
  }
  return v;
}

double load_balance_loss(const Tensor<double>& probs) {
  MOLF_EXPECT(probs.rank() == 2 && probs.rows() > 0 && probs.cols() > 0,
              "load_balance_loss: empty batch");
  const std::size_t b = probs.rows(), n = probs.cols();
  std::vector<double> imp(n, 0.0);
  for (std::size_t r = 0; r < b; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
      imp[c] += probs.at(r, c);
      s += probs.at(r, c);
    }
    MOLF_EXPECT(std::abs(s - 1.0) <= 1e-6,
                "load_balance_loss: row " + std::to_string(r) +
                    " is not a distribution");
  }
  double mean = 0.0;
  for (double v : imp) mean += v;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double v : imp) var += (v - mean) * (v - mean);
  var /= static_cast<double>(n);
  return var / (mean * mean);
}

template <class T>
ad::Var<T> load_balance_loss(ad::Var<T> probs) {
  MOLF_EXPECT(probs.shape().size() == 2 && probs.rows() > 0,
              "load_balance_loss: empty batch");
  const std::size_t n = probs.cols();
  auto imp = ad::col_sum(probs);
  auto mean = ad::scale(ad::sum(imp), T{1} / static_cast<T>(n));
  auto diff = ad::sub(imp, ad::broadcast(mean, Shape{n}));
  auto var = ad::mean(ad::square(diff));
  return ad::div(var, ad::square(mean));
}

double importance_cv(const Tensor<double>& probs) {
  return std::sqrt(load_balance_loss(probs));
}

void VelocityConfig::validate() const {
  if (latent_dim == 0) throw ConfigError("velocity: latent_dim must be positive");
  if (condition_dim == 0)
    throw ConfigError("velocity: condition_dim must be positive");
  if (experts == 0) throw ConfigError("velocity: need at least one expert");
  if (moe && (top_k < 1 || top_k > experts))
    throw ContractViolation("velocity: top_k=" + std::to_string(top_k) +
                            " outside [1, " + std::to_string(experts) + "]");
  if (expert_heads == 0 || expert_dim % expert_heads != 0)
    throw ConfigError("velocity: expert_dim must be a multiple of expert_heads");
  if (spatial && (heads == 0 || hidden % heads != 0))
    throw ConfigError("velocity: hidden must be a multiple of heads");
  if (spatial && pe_enabled && hidden % 4 != 0)
    throw ConfigError("velocity: positional encoding needs hidden % 4 == 0");
  if (expert_dim % 2 != 0 || gate_time_dim % 2 != 0)
    throw ConfigError("velocity: time embedding widths must be even");
}

template <class T>
void VelocityBatch<T>::validate(const VelocityConfig& cfg) const {
  const std::size_t b = rows();
  MOLF_EXPECT(z_t.rank() == 2 && z_t.cols() == cfg.latent_dim,
              "velocity batch: z_t must be [B, " +
                  std::to_string(cfg.latent_dim) + "], got " +
                  shape_to_string(z_t.shape()));
  MOLF_EXPECT(t.size() == b, "velocity batch: need one t per row");
  for (double v : t)
    MOLF_EXPECT(v >= 0.0 && v <= 1.0,
                "velocity batch: t=" + std::to_string(v) + " outside [0, 1]");
  MOLF_EXPECT(condition.rank() == 2 && condition.rows() == b &&
                  condition.cols() == cfg.condition_dim,
              "velocity batch: condition must be [B, " +
                  std::to_string(cfg.condition_dim) + "], got " +
                  shape_to_string(condition.shape()));
  MOLF_EXPECT(is_null.empty() || is_null.size() == b,
              "velocity batch: null mask length mismatch");
  if (cfg.spatial && cfg.pe_enabled)
    MOLF_EXPECT(coords.rank() == 2 && coords.rows() == b && coords.cols() == 2,
                "velocity batch: coordinates must be [B, 2]");
  if (cfg.spatial && cfg.num_types > 0) {
    MOLF_EXPECT(types.size() == b, "velocity batch: need one label per row");
    for (auto l : types)
      MOLF_EXPECT(l < cfg.num_types,
                  "velocity batch: unknown label " + std::to_string(l));
  }
  if (!segments.empty())
    MOLF_EXPECT(std::accumulate(segments.begin(), segments.end(),
                                std::size_t{0}) == b,
                "velocity batch: segments do not cover the batch");
}

GateDecision RoutingTrace::decision(std::size_t row) const {
  GateDecision d;
  for (std::size_t j = 0; j < k; ++j) {
    d.experts.push_back(indices[row * k + j]);
    d.weights.push_back(weights[row * k + j]);
  }
  auto r = probs.row(row);
  d.full_probs.assign(r.begin(), r.end());
  return d;
}

std::vector<GateDecision> RoutingTrace::decisions() const {
  std::vector<GateDecision> out;
  const std::size_t b = k == 0 ? 0 : indices.size() / k;
  out.reserve(b);
  for (std::size_t r = 0; r < b; ++r) out.push_back(decision(r));
  return out;
}

// ---------------------------------------------------------------------------

template <class T>
VelocityExpert<T>::VelocityExpert(ad::ParameterStore<T>& store,
                                  const std::string& name, std::size_t in,
                                  std::size_t dim, std::size_t heads,
                                  std::size_t ffn_mult, std::size_t out,
                                  Rng& rng)
    : dim_(dim) {
  in_proj_ = nn::Linear<T>(store, name + ".in_proj", in, dim, rng);
  block_ = nn::AttentionLayer<T>(store, name + ".block",
                                 nn::AttentionConfig{dim, heads, ffn_mult}, rng);
  ln_out_ = nn::LayerNorm<T>(store, name + ".ln_out", dim);
  out_proj_ = nn::Linear<T>(store, name + ".out_proj", dim, out, rng);
}

template <class T>
ad::Var<T> VelocityExpert<T>::operator()(ad::Graph<T>& g, ad::Var<T> tokens,
                                         const Tensor<T>& time_embedding,
                                         const ad::Segments& segments) const {
  auto x = ad::add(in_proj_(g, tokens), g.constant(time_embedding));
  x = block_.self_attention(g, x, segments);
  return out_proj_(g, ln_out_(g, x));
}

namespace {

constexpr std::uint64_t kCondStream = 1, kGateStream = 2, kNullStream = 3,
                        kExpertStream = 100;

std::vector<std::size_t> slide_of_rows(const ad::Segments& segments,
                                       std::size_t rows) {
  std::vector<std::size_t> slide(rows, 0);
  std::size_t r = 0;
  for (std::size_t s = 0; s < segments.size(); ++s)
    for (std::size_t i = 0; i < segments[s]; ++i) slide[r++] = s;
  return slide;
}

template <class T>
Tensor<T> gather_plain(const Tensor<T>& x, const std::vector<std::size_t>& rows) {
  const std::size_t c = x.cols();
  Tensor<T> out(Shape{rows.size(), c});
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy_n(x.data() + rows[i] * c, c, out.data() + i * c);
  return out;
}

}  // namespace

template <class T>
VelocityNet<T>::VelocityNet(const VelocityConfig& cfg,
                            ad::ParameterStore<T>& store, Rng& rng)
    : cfg_(cfg) {
  cfg_.validate();
  const std::size_t cw = cfg_.condition_width();
  Rng null_rng = rng.fork(kNullStream);
  null_condition_ = &store.add(
      "velocity.null.condition",
      nn::uniform_fan_in<T>(null_rng, Shape{cfg_.condition_dim},
                            cfg_.condition_dim));
  if (cfg_.spatial) {
    Rng r = rng.fork(kCondStream);
    cond_proj_ = nn::Linear<T>(store, "velocity.cond.proj", cfg_.condition_dim,
                               cfg_.hidden, r);
    cond_self_ = nn::AttentionLayer<T>(
        store, "velocity.cond.self",
        nn::AttentionConfig{cfg_.hidden, cfg_.heads, cfg_.ffn_mult}, r);
    if (cfg_.num_types > 0) {
      cond_cross_ = nn::AttentionLayer<T>(
          store, "velocity.cond.cross",
          nn::AttentionConfig{cfg_.hidden, cfg_.heads, cfg_.ffn_mult,
                              cfg_.hidden, true},
          r);
      type_table_ = &store.add(
          "velocity.cond.type_table",
          nn::uniform_fan_in<T>(r, Shape{cfg_.num_types, cfg_.hidden},
                                cfg_.hidden));
      null_type_ = &store.add(
          "velocity.null.type",
          nn::uniform_fan_in<T>(null_rng, Shape{cfg_.hidden}, cfg_.hidden));
    }
  }
  const std::size_t in = cfg_.latent_dim + cw;
  if (cfg_.moe) {
    for (std::size_t e = 0; e < cfg_.experts; ++e) {
      Rng r = rng.fork(kExpertStream + e);
      experts_.emplace_back(store, "velocity.expert" + std::to_string(e), in,
                            cfg_.expert_dim, cfg_.expert_heads, cfg_.ffn_mult,
                            cfg_.latent_dim, r);
    }
    std::vector<std::size_t> widths{cfg_.latent_dim + cw + cfg_.gate_time_dim};
    widths.insert(widths.end(), cfg_.gate_hidden.begin(), cfg_.gate_hidden.end());
    widths.push_back(cfg_.experts);
    Rng r = rng.fork(kGateStream);
    gate_ = nn::Mlp<T>(store, "velocity.gate", widths, r, false, "gate");
  } else {
    Rng r = rng.fork(kExpertStream);
    experts_.emplace_back(store, "velocity.dense", in, cfg_.dense_dim(),
                          cfg_.dense_heads(), cfg_.ffn_mult, cfg_.latent_dim,
                          r);
  }
}

template <class T>
ad::Var<T> VelocityNet<T>::encode_condition(
    ad::Graph<T>& g, const VelocityBatch<T>& batch) const {
  const std::size_t b = batch.rows();
  const bool any_null =
      std::any_of(batch.is_null.begin(), batch.is_null.end(),
                  [](std::uint8_t f) { return f != 0; });
  auto c = g.constant(batch.condition);
  if (any_null) c = ad::replace_rows(c, batch.is_null, g.param(*null_condition_));
  if (!cfg_.spatial) return c;

  auto h = cond_proj_(g, c);
  if (cfg_.pe_enabled) {
    Tensor<T> pe = nn::sinusoidal_pe_rows(batch.coords, cfg_.hidden, cfg_.pe_base);
    // A dropped condition carries no position either.
    if (any_null)
      for (std::size_t r = 0; r < b; ++r)
        if (batch.is_null[r]) std::fill_n(pe.data() + r * cfg_.hidden, cfg_.hidden, T{0});
    h = ad::add(h, g.constant(std::move(pe)));
  }
  const ad::Segments segs =
      batch.segments.empty() ? ad::one_segment(b) : batch.segments;
  h = cond_self_.self_attention(g, h, segs);
  if (cfg_.num_types > 0) {
    auto ctx = ad::gather_rows(g.param(*type_table_), batch.types);
    if (any_null) ctx = ad::replace_rows(ctx, batch.is_null, g.param(*null_type_));
    h = cond_cross_.cross_attention(g, h, ctx, ad::unit_segments(b),
                                    ad::unit_segments(b));
  }
  return h;
}

template <class T>
ad::Var<T> VelocityNet<T>::gate_probs(ad::Graph<T>& g, ad::Var<T> z_t,
                                      ad::Var<T> h,
                                      const std::vector<double>& t) const {
  MOLF_EXPECT(cfg_.moe, "gate_probs: dense network has no gate");
  auto temb = g.constant(nn::time_embed_rows<T>(t, cfg_.gate_time_dim,
                                                cfg_.time_base, cfg_.time_scale));
  return ad::softmax_rows(gate_(g, ad::concat_cols<T>({z_t, h, temb})));
}

template <class T>
ad::Var<T> VelocityNet<T>::expert_tokens(ad::Graph<T>&, ad::Var<T> z_t,
                                         ad::Var<T> h) const {
  return ad::concat_cols<T>({z_t, h});
}

template <class T>
VelocityOutput<T> VelocityNet<T>::forward(ad::Graph<T>& g,
                                          const VelocityBatch<T>& batch,
                                          RoutingTrace* trace) const {
  batch.validate(cfg_);
  const std::size_t b = batch.rows();
  MOLF_EXPECT(b > 0, "velocity: empty batch");
  auto z = g.constant(batch.z_t);
  auto h = encode_condition(g, batch);
  auto tokens = expert_tokens(g, z, h);
  const ad::Segments slides =
      batch.segments.empty() ? ad::one_segment(b) : batch.segments;

  VelocityOutput<T> out;
  if (!cfg_.moe) {
    auto temb = nn::time_embed_rows<T>(batch.t, cfg_.dense_dim(),
                                       cfg_.time_base, cfg_.time_scale);
    out.velocity = experts_[0](g, tokens, temb,
                               cfg_.spatial ? slides : ad::unit_segments(b));
    return out;
  }

  const std::size_t n = cfg_.experts, k = cfg_.top_k;
  auto probs = gate_probs(g, z, h, batch.t);
  out.probs = probs;
  std::vector<std::size_t> idx(b * k);
  {
    std::vector<double> row(n);
    for (std::size_t r = 0; r < b; ++r) {
      for (std::size_t c = 0; c < n; ++c) row[c] = probs.value().at(r, c);
      auto sel = top_k_indices(row, k);
      std::copy(sel.begin(), sel.end(), idx.begin() + r * k);
    }
  }
  auto selected = ad::gather_cols(probs, idx, k);
  auto weights = ad::div_col(selected, ad::row_sum(selected));
  auto flat_w = ad::reshape(weights, Shape{b * k, 1});

  const Tensor<T> temb_all = nn::time_embed_rows<T>(
      batch.t, cfg_.expert_dim, cfg_.time_base, cfg_.time_scale);
  const auto slide = slide_of_rows(slides, b);
  ad::Var<T> acc;
  for (std::size_t e = 0; e < n; ++e) {
    std::vector<std::size_t> rows, slots;
    for (std::size_t r = 0; r < b; ++r)
      for (std::size_t j = 0; j < k; ++j)
        if (idx[r * k + j] == e) {
          rows.push_back(r);
          slots.push_back(r * k + j);
        }
    if (rows.empty()) continue;  // unselected experts are never evaluated
    ad::Segments segs;
    if (cfg_.spatial) {
      std::vector<std::size_t> counts(slides.size(), 0);
      for (auto r : rows) ++counts[slide[r]];
      for (auto c : counts)
        if (c > 0) segs.push_back(c);
    } else {
      segs = ad::unit_segments(rows.size());
    }
    auto y = experts_[e](g, ad::gather_rows(tokens, rows),
                         gather_plain(temb_all, rows), segs);
    auto contrib = ad::mul_col(y, ad::gather_rows(flat_w, slots));
    auto placed = ad::scatter_rows(contrib, rows, b);
    acc = acc.valid() ? ad::add(acc, placed) : placed;
  }
  out.velocity = acc;

  if (trace) {
    trace->experts = n;
    trace->k = k;
    trace->indices = idx;
    trace->weights.assign(weights.value().values().begin(),
                          weights.value().values().end());
    trace->probs = probs.value().template cast<double>();
  }
  return out;
}

Tensor<double> routing_distribution(const std::vector<GateDecision>& decisions,
                                    const std::vector<std::size_t>& labels,
                                    std::size_t num_classes,
                                    std::size_t num_experts,
                                    RoutingStatistic stat) {
  MOLF_EXPECT(!decisions.empty(), "routing_distribution: no decisions");
  MOLF_EXPECT(labels.size() == decisions.size(),
              "routing_distribution: one label per decision required");
  Tensor<double> m(Shape{num_classes, num_experts});
  for (std::size_t i = 0; i < decisions.size(); ++i) {
    MOLF_EXPECT(labels[i] < num_classes,
                "routing_distribution: unknown label " +
                    std::to_string(labels[i]));
    const auto& d = decisions[i];
    for (std::size_t j = 0; j < d.experts.size(); ++j) {
      MOLF_EXPECT(d.experts[j] < num_experts,
                  "routing_distribution: expert index out of range");
      m.at(labels[i], d.experts[j]) +=
          stat == RoutingStatistic::weight_mass ? d.weights[j] : 1.0;
    }
  }
  for (std::size_t c = 0; c < num_classes; ++c) {
    double s = 0.0;
    for (std::size_t e = 0; e < num_experts; ++e) s += m.at(c, e);
    if (s > 0.0)
      for (std::size_t e = 0; e < num_experts; ++e) m.at(c, e) *= 100.0 / s;
  }
  return m;
}

ModePurity mode_purity(const std::vector<GateDecision>& decisions,
                       const std::vector<std::size_t>& modes,
                       std::size_t num_experts, std::size_t num_modes) {
  MOLF_EXPECT(decisions.size() == modes.size(),
              "mode_purity: one mode per decision required");
  ModePurity p;
  p.counts = Tensor<double>(Shape{num_experts, num_modes});
  for (std::size_t i = 0; i < decisions.size(); ++i) {
    MOLF_EXPECT(decisions[i].experts.size() == 1,
                "mode_purity: requires top-1 decisions, got k=" +
                    std::to_string(decisions[i].experts.size()));
    MOLF_EXPECT(modes[i] < num_modes && decisions[i].experts[0] < num_experts,
                "mode_purity: index out of range");
    p.counts.at(decisions[i].experts[0], modes[i]) += 1.0;
  }
  std::size_t present = 0;
  for (std::size_t m = 0; m < num_modes; ++m) {
    double total = 0.0, best = 0.0;
    for (std::size_t e = 0; e < num_experts; ++e) {
      total += p.counts.at(e, m);
      best = std::max(best, p.counts.at(e, m));
    }
    if (total == 0.0) continue;
    p.purity += best / total;
    ++present;
  }
  if (present > 0) p.purity /= static_cast<double>(present);
  for (std::size_t e = 0; e < num_experts; ++e) {
    double row = 0.0;
    for (std::size_t m = 0; m < num_modes; ++m) row += p.counts.at(e, m);
    if (row > 0.0) ++p.active_experts;
  }
  return p;
}

#define MOLF_INSTANTIATE_MOE(T)                                   \
  template ad::Var<T> load_balance_loss<T>(ad::Var<T>);           \
  template struct VelocityBatch<T>;                               \
  template class VelocityExpert<T>;                               \
  template class VelocityNet<T>;

MOLF_INSTANTIATE_MOE(float)
MOLF_INSTANTIATE_MOE(double)

}  // namespace molf
