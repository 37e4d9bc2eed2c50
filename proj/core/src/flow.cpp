// Copyright 2026 The MoLF Authors
// SPDX-License-Identifier: Apache-2.0

#include "molf/flow.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <ostream>

namespace molf {

namespace {

void check_t(double t, const char* who) {
  MOLF_EXPECT(t >= 0.0 && t <= 1.0,
              std::string(who) + ": t=" + std::to_string(t) + " outside [0, 1]");
}

template <class T>
void check_pair(const Tensor<T>& a, const Tensor<T>& b, const char* who) {
  MOLF_EXPECT(a.shape() == b.shape(), std::string(who) + ": shape mismatch " +
                                          shape_to_string(a.shape()) + " vs " +
                                          shape_to_string(b.shape()));
}

}  // namespace

template <class T>
Tensor<T> ot_path(const Tensor<T>& z0, const Tensor<T>& z1,
                  std::span<const double> t) {
  check_pair(z0, z1, "ot_path");
  MOLF_EXPECT(t.size() == z0.rows(), "ot_path: need one t per row");
  Tensor<T> out(z0.shape());
  const std::size_t c = z0.cols();
  for (std::size_t r = 0; r < z0.rows(); ++r) {
    check_t(t[r], "ot_path");
    const T tt = static_cast<T>(t[r]);
    for (std::size_t j = r * c; j < (r + 1) * c; ++j)
      out[j] = (T{1} - tt) * z0[j] + tt * z1[j];
  }
  return out;
}

template <class T>
Tensor<T> ot_path(const Tensor<T>& z0, const Tensor<T>& z1, double t) {
  std::vector<double> ts(z0.rows(), t);
  return ot_path(z0, z1, std::span<const double>(ts));
}

template <class T>
Tensor<T> target_velocity(const Tensor<T>& z0, const Tensor<T>& z1) {
  check_pair(z0, z1, "target_velocity");
  Tensor<T> out(z0.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = z1[i] - z0[i];
  return out;
}

template <class T>
Tensor<T> terminal_estimate(const Tensor<T>& z_t, std::span<const double> t,
                            const Tensor<T>& v) {
  check_pair(z_t, v, "terminal_estimate");
  MOLF_EXPECT(t.size() == z_t.rows(), "terminal_estimate: need one t per row");
  Tensor<T> out(z_t.shape());
  const std::size_t c = z_t.cols();
  for (std::size_t r = 0; r < z_t.rows(); ++r) {
    check_t(t[r], "terminal_estimate");
    const T s = static_cast<T>(1.0 - t[r]);
    for (std::size_t j = r * c; j < (r + 1) * c; ++j) out[j] = z_t[j] + s * v[j];
  }
  return out;
}

template <class T>
ad::Var<T> terminal_estimate(ad::Var<T> z_t, std::span<const double> t,
                             ad::Var<T> v) {
  MOLF_EXPECT(z_t.shape() == v.shape(), "terminal_estimate: shape mismatch");
  MOLF_EXPECT(t.size() == z_t.rows(), "terminal_estimate: need one t per row");
  Tensor<T> s(Shape{t.size()});
  for (std::size_t r = 0; r < t.size(); ++r) {
    check_t(t[r], "terminal_estimate");
    s[r] = static_cast<T>(1.0 - t[r]);
  }
  return ad::add(z_t, ad::mul_col(v, z_t.graph().constant(std::move(s))));
}

template <class T>
ad::Var<T> cfm_loss(ad::Var<T> v, const Tensor<T>& target) {
  MOLF_EXPECT(v.shape().size() == 2 && v.rows() > 0, "cfm_loss: empty batch");
  MOLF_EXPECT(v.shape() == target.shape(), "cfm_loss: shape mismatch");
  auto d = ad::sub(v, v.graph().constant(target));
  return ad::scale(ad::sum(ad::square(d)), T{1} / static_cast<T>(v.rows()));
}

template <class T>
ad::Var<T> gene_consistency_loss(const Tensor<T>& x, ad::Var<T> z_hat1,
                                 const GeneVae<T>& vae) {
  MOLF_EXPECT(vae.decoder_frozen(),
              "gene_consistency_loss: the Stage-I decoder must be frozen");
  MOLF_EXPECT(x.rank() == 2 && x.rows() == z_hat1.rows() && x.rows() > 0,
              "gene_consistency_loss: batch mismatch");
  auto recon = vae.decode(z_hat1.graph(), z_hat1);
  MOLF_EXPECT(recon.shape() == x.shape(),
              "gene_consistency_loss: expression width mismatch");
  auto d = ad::sub(z_hat1.graph().constant(x), recon);
  return ad::scale(ad::sum(ad::square(d)), T{1} / static_cast<T>(x.rows()));
}

std::vector<float> ConditionBundle::type_one_hot() const {
  std::vector<float> v(num_types, 0.f);
  if (!is_null && type < num_types) v[type] = 1.f;
  return v;
}

ConditionBundle apply_condition_dropout(const ConditionBundle& c,
                                        double p_drop, Rng& rng) {
  MOLF_EXPECT(p_drop >= 0.0 && p_drop <= 1.0,
              "condition dropout: p_drop outside [0, 1]");
  ConditionBundle out = c;
  if (rng.bernoulli(p_drop)) out.is_null = true;
  return out;
}

void LossWeights::validate() const {
  if (flow < 0 || gene < 0 || aux < 0)
    throw ConfigError("loss weights must be non-negative");
}

template <class T>
ad::Var<T> total_loss(ad::Var<T> cfm, ad::Var<T> gene, ad::Var<T> aux,
                      const LossWeights& w, LossBreakdown* breakdown) {
  w.validate();
  MOLF_EXPECT(cfm.valid(), "total_loss: the flow term is required");
  auto total = ad::scale(cfm, static_cast<T>(w.flow));
  if (gene.valid()) total = ad::add(total, ad::scale(gene, static_cast<T>(w.gene)));
  if (aux.valid()) total = ad::add(total, ad::scale(aux, static_cast<T>(w.aux)));
  if (breakdown) {
    breakdown->cfm = cfm.value().item();
    breakdown->gene = gene.valid() ? gene.value().item() : 0.0;
    breakdown->aux = aux.valid() ? aux.value().item() : 0.0;
    breakdown->total = total.value().item();
  }
  return total;
}

// ---------------------------------------------------------------------------

void FlowDataset::validate() const {
  const std::size_t s = rows();
  MOLF_EXPECT(z1.rank() == 2, "flow dataset: latent targets must be a matrix");
  MOLF_EXPECT(condition.rank() == 2 && condition.rows() == s,
              "flow dataset: one condition row per spot required");
  if (has_expression())
    MOLF_EXPECT(expression.rows() == s, "flow dataset: expression row mismatch");
  if (coords.rank() == 2 && coords.rows() > 0)
    MOLF_EXPECT(coords.rows() == s && coords.cols() == 2,
                "flow dataset: coordinates must be [S, 2]");
  MOLF_EXPECT(types.empty() || types.size() == s,
              "flow dataset: one label per spot required");
  if (!slides.empty())
    MOLF_EXPECT(std::accumulate(slides.begin(), slides.end(), std::size_t{0}) == s,
                "flow dataset: slide lengths do not cover the spots");
}

namespace {

Tensor<float> rows_of(const Tensor<float>& x,
                      const std::vector<std::size_t>& rows) {
  if (x.rank() != 2 || x.rows() == 0) return Tensor<float>(Shape{0, 0});
  const std::size_t c = x.cols();
  Tensor<float> out(Shape{rows.size(), c});
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy_n(x.data() + rows[i] * c, c, out.data() + i * c);
  return out;
}

std::vector<std::size_t> iota_rows(std::size_t begin, std::size_t count) {
  std::vector<std::size_t> r(count);
  std::iota(r.begin(), r.end(), begin);
  return r;
}

Tensor<float> normal_rows(Rng& rng, std::size_t rows, std::size_t cols) {
  Tensor<float> z(Shape{rows, cols});
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = static_cast<float>(rng.normal());
  return z;
}

}  // namespace

FlowDataset FlowDataset::slice(std::size_t begin, std::size_t count) const {
  MOLF_EXPECT(begin + count <= rows(), "flow dataset: slice out of range");
  const auto r = iota_rows(begin, count);
  FlowDataset d;
  d.z1 = rows_of(z1, r);
  d.expression = rows_of(expression, r);
  d.condition = rows_of(condition, r);
  d.coords = rows_of(coords, r);
  if (!types.empty()) d.types.assign(types.begin() + begin, types.begin() + begin + count);
  if (!slides.empty()) d.slides = {count};
  return d;
}

FlowDataset make_flow_dataset(const VaeModel<float>& vae,
                              const Tensor<float>& expression,
                              const Tensor<float>& condition,
                              const Tensor<float>& coords,
                              std::vector<std::size_t> types,
                              ad::Segments slides, bool sample_posterior,
                              std::uint64_t seed) {
  FlowDataset d;
  d.expression = expression;
  d.condition = condition;
  d.coords = coords;
  d.types = std::move(types);
  d.slides = std::move(slides);
  if (!sample_posterior) {
    d.z1 = encode_means(vae, expression);
  } else {
    const std::size_t n = expression.rows(), l = vae.config.latent_dim;
    d.z1 = Tensor<float>(Shape{n, l});
    for (std::size_t s = 0; s < n; s += 512) {
      const std::size_t e = std::min(n, s + 512);
      ad::Graph<float> g(false);
      auto p = vae.net.encode(g, g.constant(rows_of(expression, iota_rows(s, e - s))));
      for (std::size_t r = s; r < e; ++r) {
        Rng rng(seed, r);
        for (std::size_t j = 0; j < l; ++j)
          d.z1.at(r, j) = p.mu.value().at(r - s, j) +
                          p.sigma.value().at(r - s, j) *
                              static_cast<float>(rng.normal());
      }
    }
  }
  d.validate();
  return d;
}

FlowModel FlowModel::create(const VelocityConfig& cfg, std::uint64_t seed) {
  FlowModel m;
  m.config = cfg;
  Rng rng(seed, 0x464C4F57ULL);
  m.net = VelocityNet<float>(cfg, m.params, rng);
  return m;
}

FlowModel FlowModel::from_params(const VelocityConfig& cfg,
                                 ad::ParameterStore<float> params) {
  FlowModel m = create(cfg, 0);
  m.params.assign_from(params);
  return m;
}

std::vector<std::pair<std::size_t, std::size_t>> dataset_chunks(
    const FlowDataset& data, std::size_t cap) {
  MOLF_EXPECT(cap > 0, "dataset_chunks: cap must be positive");
  std::vector<std::pair<std::size_t, std::size_t>> out;
  auto split = [&](std::size_t begin, std::size_t n) {
    if (n == 0) return;
    const std::size_t pieces = (n + cap - 1) / cap;
    std::size_t at = begin;
    for (std::size_t p = 0; p < pieces; ++p) {
      const std::size_t len = n / pieces + (p < n % pieces ? 1 : 0);
      out.emplace_back(at, len);
      at += len;
    }
  };
  if (data.slides.empty()) {
    for (std::size_t s = 0; s < data.rows(); s += cap)
      out.emplace_back(s, std::min(cap, data.rows() - s));
  } else {
    std::size_t at = 0;
    for (auto n : data.slides) {
      split(at, n);
      at += n;
    }
  }
  return out;
}

VelocityBatch<float> batch_for_rows(const FlowDataset& data,
                                    const std::vector<std::size_t>& rows,
                                    bool spatial) {
  VelocityBatch<float> b;
  b.condition = rows_of(data.condition, rows);
  if (data.coords.rank() == 2 && data.coords.rows() > 0)
    b.coords = rows_of(data.coords, rows);
  if (!data.types.empty())
    for (auto r : rows) b.types.push_back(data.types[r]);
  b.is_null.assign(rows.size(), 0);
  if (spatial) b.segments = {rows.size()};
  return b;
}

namespace {

struct StepTerms {
  ad::Var<float> total;
  LossBreakdown parts;
};

// One forward pass of the Stage-II objective on `rows`.
StepTerms step_objective(ad::Graph<float>& g, const FlowModel& model,
                         const VaeModel<float>* vae, const FlowDataset& data,
                         const std::vector<std::size_t>& rows, Rng& rng,
                         double p_drop, const LossWeights& w, bool gene_on) {
  const auto& cfg = model.config;
  auto batch = batch_for_rows(data, rows, cfg.spatial);
  const std::size_t n = rows.size();
  const Tensor<float> z0 = normal_rows(rng, n, cfg.latent_dim);
  batch.t.resize(n);
  for (auto& t : batch.t) t = rng.uniform();
  const Tensor<float> z1 = rows_of(data.z1, rows);
  batch.z_t = ot_path(z0, z1, std::span<const double>(batch.t));
  if (p_drop > 0.0) {
    if (cfg.spatial) {
      // Drop a whole chunk at once so that attention over the slide never
      // mixes conditioned and null spots.
      if (rng.bernoulli(p_drop)) std::fill(batch.is_null.begin(), batch.is_null.end(), 1);
    } else {
      for (auto& f : batch.is_null) f = rng.bernoulli(p_drop) ? 1 : 0;
    }
  }
  auto out = model.net.forward(g, batch);
  auto cfm = cfm_loss(out.velocity, target_velocity(z0, z1));
  ad::Var<float> gene, aux;
  if (gene_on) {
    auto zt = g.constant(batch.z_t);
    auto zhat = terminal_estimate(zt, std::span<const double>(batch.t), out.velocity);
    gene = gene_consistency_loss(rows_of(data.expression, rows), zhat, vae->net);
  }
  if (cfg.moe) aux = load_balance_loss(out.probs);
  StepTerms s;
  s.total = total_loss(cfm, gene, aux, w, &s.parts);
  return s;
}

bool gene_term_enabled(const FlowDataset& data, const VaeModel<float>* vae,
                       const LossWeights& w) {
  if (w.gene <= 0.0 || !data.has_expression()) return false;
  if (!vae)
    throw ConfigError(
        "train_flow: the gene-consistency term needs a Stage-I checkpoint "
        "(--vae-checkpoint)");
  return true;
}

}  // namespace

LossBreakdown flow_validation_loss(const FlowModel& model,
                                   const VaeModel<float>* vae,
                                   const FlowDataset& val,
                                   const LossWeights& weights,
                                   std::size_t chunk_cap,
                                   std::size_t batch_size, std::uint64_t seed) {
  MOLF_EXPECT(val.rows() > 0, "flow_validation_loss: empty validation set");
  const bool gene_on = gene_term_enabled(val, vae, weights);
  Rng rng(seed, 0x76616CULL);
  LossBreakdown acc;
  const auto chunks =
      dataset_chunks(val, model.config.spatial ? chunk_cap : batch_size);
  for (const auto& [begin, len] : chunks) {
    ad::Graph<float> g(false);
    auto s = step_objective(g, model, vae, val, iota_rows(begin, len), rng, 0.0,
                            weights, gene_on);
    const double f = static_cast<double>(len) / static_cast<double>(val.rows());
    acc.cfm += f * s.parts.cfm;
    acc.gene += f * s.parts.gene;
    acc.aux += f * s.parts.aux;
    acc.total += f * s.parts.total;
  }
  return acc;
}

FlowTrainResult train_flow(const FlowDataset& train, const FlowDataset& val,
                           const VelocityConfig& cfg, const VaeModel<float>* vae,
                           const FlowTrainOptions& opt) {
  train.validate();
  cfg.validate();
  opt.weights.validate();
  MOLF_EXPECT(train.rows() > 0, "train_flow: empty training set");
  MOLF_EXPECT(train.z1.cols() == cfg.latent_dim,
              "train_flow: latent width does not match the velocity config");
  MOLF_EXPECT(!cfg.spatial || !train.slides.empty(),
              "train_flow: spatial mode needs slide boundaries");
  MOLF_EXPECT(opt.p_drop >= 0.0 && opt.p_drop <= 1.0,
              "train_flow: p_drop outside [0, 1]");
  const bool gene_on = gene_term_enabled(train, vae, opt.weights);
  if (gene_on)
    MOLF_EXPECT(vae->net.decoder_frozen(),
                "train_flow: the Stage-I decoder must be frozen");
  const bool has_val = val.rows() > 0;

  FlowTrainResult res{FlowModel::create(cfg, opt.seed), 0, 0, 0, {}};
  auto& model = res.model;
  AdamW<float> adam(AdamWOptions{opt.lr, 0.9, 0.999, 1e-8, opt.weight_decay});
  adam.set_group_lr("gate", opt.gate_lr);
  Rng rng(opt.seed, 0x7472616EULL);

  ad::ParameterStore<float> best = model.params.converted<float>();
  double best_val = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;
  std::vector<std::size_t> perm(train.rows());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::size_t perm_at = perm.size();

  for (std::size_t epoch = 1; epoch <= opt.epochs; ++epoch) {
    std::vector<std::vector<std::size_t>> steps;
    if (cfg.spatial) {
      std::size_t at = 0;
      for (auto n : train.slides) {
        auto rows = iota_rows(at, n);
        at += n;
        std::shuffle(rows.begin(), rows.end(), rng);
        const std::size_t pieces = (n + opt.chunk_cap - 1) / opt.chunk_cap;
        std::size_t k = 0;
        for (std::size_t p = 0; p < pieces; ++p) {
          const std::size_t len = n / pieces + (p < n % pieces ? 1 : 0);
          steps.emplace_back(rows.begin() + k, rows.begin() + k + len);
          k += len;
        }
      }
      std::shuffle(steps.begin(), steps.end(), rng);
    } else {
      const std::size_t bs = std::min(opt.batch_size, train.rows());
      const std::size_t count = opt.steps_per_epoch > 0
                                    ? opt.steps_per_epoch
                                    : (train.rows() + bs - 1) / bs;
      for (std::size_t s = 0; s < count; ++s) {
        std::vector<std::size_t> rows;
        while (rows.size() < bs) {
          if (perm_at == perm.size()) {
            std::shuffle(perm.begin(), perm.end(), rng);
            perm_at = 0;
          }
          rows.push_back(perm[perm_at++]);
        }
        steps.push_back(std::move(rows));
      }
    }

    FlowEpochLog log;
    log.epoch = epoch;
    for (const auto& rows : steps) {
      model.params.zero_grad();
      ad::Graph<float> g;
      auto s = step_objective(g, model, vae, train, rows, rng, opt.p_drop,
                              opt.weights, gene_on);
      if (!std::isfinite(s.parts.total))
        throw NumericError("train_flow: loss diverged at epoch " +
                           std::to_string(epoch) + " (seed " +
                           std::to_string(opt.seed) + ")");
      g.backward(s.total);
      adam.step(model.params);
      ++res.steps;
      const double f = 1.0 / static_cast<double>(steps.size());
      log.cfm += f * s.parts.cfm;
      log.gene += f * s.parts.gene;
      log.aux += f * s.parts.aux;
      log.total += f * s.parts.total;
    }
    log.val_total = has_val ? flow_validation_loss(model, vae, val, opt.weights,
                                                   opt.chunk_cap, opt.batch_size,
                                                   opt.seed)
                                  .total
                            : log.total;
    res.log.push_back(log);
    res.epochs_run = epoch;
    if (opt.on_epoch) opt.on_epoch(log);
    if (!has_val) {
      res.best_epoch = epoch;
      continue;
    }
    if (log.val_total < best_val) {
      best_val = log.val_total;
      res.best_epoch = epoch;
      best.assign_from(model.params);
      since_best = 0;
    } else if (++since_best > opt.patience) {
      break;
    }
  }
  if (has_val) model.params.assign_from(best);
  return res;
}

RoutingTrace routing_trace(const FlowModel& model, const FlowDataset& data,
                           double t, std::uint64_t seed, std::size_t chunk_cap) {
  MOLF_EXPECT(model.config.moe, "routing_trace: the dense network has no gate");
  check_t(t, "routing_trace");
  RoutingTrace all;
  all.experts = model.config.experts;
  all.k = model.config.top_k;
  all.probs = Tensor<double>(Shape{data.rows(), all.experts});
  std::size_t at = 0;
  for (const auto& [begin, len] : dataset_chunks(data, chunk_cap)) {
    const auto rows = iota_rows(begin, len);
    auto batch = batch_for_rows(data, rows, model.config.spatial);
    batch.z_t = Tensor<float>(Shape{len, model.config.latent_dim});
    for (std::size_t i = 0; i < len; ++i) {
      Rng rng(seed, rows[i]);
      for (std::size_t j = 0; j < model.config.latent_dim; ++j)
        batch.z_t.at(i, j) = static_cast<float>(rng.normal());
    }
    batch.t.assign(len, t);
    ad::Graph<float> g(false);
    RoutingTrace tr;
    model.net.forward(g, batch, &tr);
    all.indices.insert(all.indices.end(), tr.indices.begin(), tr.indices.end());
    all.weights.insert(all.weights.end(), tr.weights.begin(), tr.weights.end());
    std::copy(tr.probs.values().begin(), tr.probs.values().end(),
              all.probs.data() + at * all.experts);
    at += len;
  }
  return all;
}

void write_loss_csv(std::ostream& os, const std::vector<FlowEpochLog>& log) {
  os << "epoch,L_CFM,L_gene,L_aux,total,val_total\n";
  char buf[256];
  for (const auto& e : log) {
    std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%.9g,%.9g,%.9g\n", e.epoch,
                  e.cfm, e.gene, e.aux, e.total, e.val_total);
    os << buf;
  }
}

#define MOLF_INSTANTIATE_FLOW(T)                                               \
  template Tensor<T> ot_path<T>(const Tensor<T>&, const Tensor<T>&,            \
                                std::span<const double>);                      \
  template Tensor<T> ot_path<T>(const Tensor<T>&, const Tensor<T>&, double);   \
  template Tensor<T> target_velocity<T>(const Tensor<T>&, const Tensor<T>&);   \
  template Tensor<T> terminal_estimate<T>(const Tensor<T>&,                    \
                                          std::span<const double>,             \
                                          const Tensor<T>&);                   \
  template ad::Var<T> terminal_estimate<T>(ad::Var<T>, std::span<const double>, \
                                           ad::Var<T>);                        \
  template ad::Var<T> cfm_loss<T>(ad::Var<T>, const Tensor<T>&);               \
  template ad::Var<T> gene_consistency_loss<T>(const Tensor<T>&, ad::Var<T>,   \
                                               const GeneVae<T>&);             \
  template ad::Var<T> total_loss<T>(ad::Var<T>, ad::Var<T>, ad::Var<T>,        \
                                    const LossWeights&, LossBreakdown*);

MOLF_INSTANTIATE_FLOW(float)
MOLF_INSTANTIATE_FLOW(double)

}  // namespace molf
