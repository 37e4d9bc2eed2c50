// Copyright 2026 The MoLF Authors
// SPDX-License-Identifier: Apache-2.0

#include "molf/toy.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <ostream>

#include "molf/sampler.hpp"

namespace molf::toy {

namespace {

constexpr std::uint64_t kTrainStream = 1, kEvalStream = 2, kSampleStream = 3,
                        kCvStream = 4;
constexpr double kTwoPi = 2.0 * std::numbers::pi;

}  // namespace

VelocityConfig toy_velocity_config(bool moe) {
  VelocityConfig c;
  c.latent_dim = 2;
  c.condition_dim = 2;
  c.num_types = 0;
  c.spatial = false;
  c.pe_enabled = false;
  c.moe = moe;
  c.experts = 8;
  c.top_k = 1;
  c.expert_dim = 32;
  c.expert_heads = 1;
  c.ffn_mult = 4;
  c.gate_hidden = {64};
  c.gate_time_dim = 16;
  return c;
}

ToyConfig::ToyConfig() : moe(toy_velocity_config(true)), dense(toy_velocity_config(false)) {}

void ToyConfig::validate() const {
  if (!(radius > 0.0)) throw ConfigError("toy: radius must be positive");
  if (!(variance > 0.0)) throw ConfigError("toy: variance must be positive");
  if (train_samples == 0 || eval_samples == 0)
    throw ConfigError("toy: sample counts must be positive");
  if (steps == 0 || steps_per_epoch == 0 || batch_size == 0)
    throw ConfigError("toy: steps and batch size must be positive");
  if (sample_steps == 0) throw ConfigError("toy: sample_steps must be >= 1");
  if (w < 0.0) throw ConfigError("toy: guidance scale must be >= 0");
  moe.validate();
  dense.validate();
}

std::size_t mode_of(double theta) {
  const auto k = static_cast<long>(std::floor(4.0 * theta / std::numbers::pi));
  return static_cast<std::size_t>(std::clamp(k, 0L, 7L));
}

std::vector<double> mode_mean(std::size_t k, double radius) {
  const double a = static_cast<double>(k) * std::numbers::pi / 4.0;
  return {radius * std::cos(a), radius * std::sin(a)};
}

ToySample gen_toy_sample(Rng& rng, const ToyConfig& cfg, std::optional<double> theta) {
  ToySample s;
  s.theta = theta ? *theta : kTwoPi * rng.uniform();
  s.condition[0] = std::cos(s.theta);
  s.condition[1] = std::sin(s.theta);
  s.mode = mode_of(s.theta);
  const auto mu = mode_mean(s.mode, cfg.radius);
  const double sd = std::sqrt(cfg.variance);
  s.target[0] = mu[0] + sd * rng.normal();
  s.target[1] = mu[1] + sd * rng.normal();
  return s;
}

FlowDataset ToyData::flow_dataset() const {
  FlowDataset d;
  d.z1 = target;
  d.condition = condition;
  return d;
}

ToyData gen_toy_dataset(const ToyConfig& cfg, std::size_t n, Rng& rng) {
  ToyData d;
  d.condition = Tensor<float>(Shape{n, 2});
  d.target = Tensor<float>(Shape{n, 2});
  for (std::size_t i = 0; i < n; ++i) {
    const auto s = gen_toy_sample(rng, cfg);
    for (std::size_t j = 0; j < 2; ++j) {
      d.condition.at(i, j) = static_cast<float>(s.condition[j]);
      d.target.at(i, j) = static_cast<float>(s.target[j]);
    }
    d.modes.push_back(s.mode);
    d.theta.push_back(s.theta);
  }
  return d;
}

ModeStats mode_statistics(const ToyData& data) {
  ModeStats st;
  st.frequency.assign(kModes, 0.0);
  st.mean.assign(kModes, std::vector<double>(2, 0.0));
  for (std::size_t i = 0; i < data.rows(); ++i) {
    const auto k = data.modes[i];
    st.frequency[k] += 1.0;
    st.mean[k][0] += data.target.at(i, 0);
    st.mean[k][1] += data.target.at(i, 1);
  }
  for (std::size_t k = 0; k < kModes; ++k) {
    if (st.frequency[k] > 0) {
      st.mean[k][0] /= st.frequency[k];
      st.mean[k][1] /= st.frequency[k];
    }
    st.frequency[k] /= static_cast<double>(std::max<std::size_t>(1, data.rows()));
  }
  return st;
}

metrics::W2Result evaluate_toy_model(const ToyConfig& cfg, const FlowModel& model,
                                     const ToyData& eval, std::uint64_t seed,
                                     Tensor<float>* samples) {
  auto data = eval.flow_dataset();
  auto r = generate_dataset(data, model, nullptr, cfg.w, cfg.sample_steps,
                            Rng(seed, kSampleStream)());
  auto w2 = metrics::w2_per_dimension(eval.target.cast<double>(),
                                      r.latents.cast<double>());
  if (samples) *samples = std::move(r.latents);
  return w2;
}

double gate_importance_cv(const FlowModel& model, const ToyData& eval,
                          std::uint64_t seed) {
  MOLF_EXPECT(model.config.moe, "gate_importance_cv: the dense network has no gate");
  Rng rng(seed, kCvStream);
  const std::size_t n = eval.rows(), l = model.config.latent_dim;
  Tensor<double> probs(Shape{n, model.config.experts});
  const auto data = eval.flow_dataset();
  for (const auto& [begin, len] : dataset_chunks(data, 1024)) {
    std::vector<std::size_t> rows(len);
    for (std::size_t i = 0; i < len; ++i) rows[i] = begin + i;
    auto batch = batch_for_rows(data, rows, false);
    batch.t.resize(len);
    Tensor<float> z0(Shape{len, l}), z1(Shape{len, l});
    for (std::size_t i = 0; i < len; ++i) {
      batch.t[i] = rng.uniform();
      for (std::size_t j = 0; j < l; ++j) {
        z0.at(i, j) = static_cast<float>(rng.normal());
        z1.at(i, j) = eval.target.at(begin + i, j);
      }
    }
    batch.z_t = ot_path(z0, z1, std::span<const double>(batch.t));
    ad::Graph<float> g(false);
    RoutingTrace trace;
    model.net.forward(g, batch, &trace);
    for (std::size_t i = 0; i < len; ++i)
      for (std::size_t e = 0; e < model.config.experts; ++e)
        probs.at(begin + i, e) = trace.probs.at(i, e);
  }
  // Float rows can miss 1 by a few ulps; renormalise before the CV.
  for (std::size_t r = 0; r < n; ++r) {
    double s = 0.0;
    for (std::size_t e = 0; e < probs.cols(); ++e) s += probs.at(r, e);
    for (std::size_t e = 0; e < probs.cols(); ++e) probs.at(r, e) /= s;
  }
  return importance_cv(probs);
}

ToyRun run_toy_model(const ToyConfig& cfg, bool moe, std::uint64_t seed,
                     std::size_t steps_override) {
  cfg.validate();
  Rng train_rng(seed, kTrainStream), eval_rng(seed, kEvalStream);
  const ToyData train = gen_toy_dataset(cfg, cfg.train_samples, train_rng);
  const ToyData eval = gen_toy_dataset(cfg, cfg.eval_samples, eval_rng);

  FlowTrainOptions opt;
  const std::size_t steps = steps_override ? steps_override : cfg.steps;
  opt.steps_per_epoch = std::min(cfg.steps_per_epoch, steps);
  opt.epochs = steps / opt.steps_per_epoch;
  opt.batch_size = cfg.batch_size;
  opt.lr = cfg.lr;
  opt.gate_lr = cfg.gate_lr;
  opt.weight_decay = cfg.weight_decay;
  opt.p_drop = cfg.w == 1.0 ? 0.0 : 0.1;  // the null field is only needed for guidance
  opt.weights = LossWeights{1.0, 0.0, cfg.lambda_aux};
  opt.seed = seed;

  const VelocityConfig& vcfg = moe ? cfg.moe : cfg.dense;
  auto res = [&] {
    try {
      return train_flow(train.flow_dataset(), FlowDataset{}, vcfg, nullptr, opt);
    } catch (const NumericError& e) {
      throw NumericError(std::string("toy seed ") + std::to_string(seed) + " (" +
                         (moe ? "moe" : "dense") + "): " + e.what());
    }
  }();

  ToyRun run{seed, moe, {}, std::move(res.log), 0.0, 0.0, 0, {}, std::move(res.model)};
  run.w2 = evaluate_toy_model(cfg, run.model, eval, seed, &run.samples);
  if (moe) {
    run.importance_cv = gate_importance_cv(run.model, eval, seed);
    if (vcfg.top_k == 1) {
      auto trace = routing_trace(run.model, eval.flow_dataset(), 0.0,
                                 Rng(seed, kSampleStream)());
      auto p = mode_purity(trace.decisions(), eval.modes, vcfg.experts, kModes);
      run.purity = p.purity;
      run.active_experts = p.active_experts;
    }
  }
  return run;
}

double median(std::vector<double> v) {
  MOLF_EXPECT(!v.empty(), "median: empty input");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

ToyReport run_toy_benchmark(const ToyConfig& cfg,
                            const std::vector<std::uint64_t>& seeds) {
  MOLF_EXPECT(!seeds.empty(), "toy benchmark: need at least one seed");
  ToyReport rep;
  std::vector<double> moe, dense;
  for (auto seed : seeds) {
    for (bool m : {true, false}) {
      rep.runs.push_back(run_toy_model(cfg, m, seed));
      (m ? moe : dense).push_back(rep.runs.back().w2.average);
    }
  }
  rep.median_moe = median(moe);
  rep.median_dense = median(dense);
  for (double v : moe) rep.mean_moe += v / static_cast<double>(moe.size());
  for (double v : dense) rep.mean_dense += v / static_cast<double>(dense.size());
  return rep;
}

void write_toy_report(std::ostream& os, const ToyReport& report) {
  os << "seed,model,dim1,dim2,average,final_cfm,importance_cv,purity\n";
  char buf[256];
  for (const auto& r : report.runs) {
    std::snprintf(buf, sizeof buf, "%llu,%s,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f\n",
                  static_cast<unsigned long long>(r.seed), r.moe ? "moe" : "dense",
                  r.w2.per_dim[0], r.w2.per_dim[1], r.w2.average,
                  r.log.empty() ? 0.0 : r.log.back().cfm, r.importance_cv, r.purity);
    os << buf;
  }
  for (bool m : {true, false}) {
    std::vector<double> d1, d2;
    for (const auto& r : report.runs)
      if (r.moe == m) {
        d1.push_back(r.w2.per_dim[0]);
        d2.push_back(r.w2.per_dim[1]);
      }
    if (d1.empty()) continue;
    const char* name = m ? "moe" : "dense";
    std::snprintf(buf, sizeof buf, "median,%s,%.6f,%.6f,%.6f,,,\n", name, median(d1),
                  median(d2), m ? report.median_moe : report.median_dense);
    os << buf;
    double m1 = 0, m2 = 0;
    for (std::size_t i = 0; i < d1.size(); ++i) {
      m1 += d1[i] / static_cast<double>(d1.size());
      m2 += d2[i] / static_cast<double>(d2.size());
    }
    std::snprintf(buf, sizeof buf, "mean,%s,%.6f,%.6f,%.6f,,,\n", name, m1, m2,
                  m ? report.mean_moe : report.mean_dense);
    os << buf;
  }
}

void write_toy_samples(std::ostream& os, const ToyReport& report,
                       const ToyConfig& cfg) {
  os << "seed,model,c0,c1,mode,x,y\n";
  char buf[256];
  for (const auto& r : report.runs) {
    Rng eval_rng(r.seed, kEvalStream);
    const ToyData eval = gen_toy_dataset(cfg, cfg.eval_samples, eval_rng);
    for (std::size_t i = 0; i < r.samples.rows(); ++i) {
      std::snprintf(buf, sizeof buf, "%llu,%s,%.6f,%.6f,%zu,%.6f,%.6f\n",
                    static_cast<unsigned long long>(r.seed), r.moe ? "moe" : "dense",
                    eval.condition.at(i, 0), eval.condition.at(i, 1), eval.modes[i],
                    r.samples.at(i, 0), r.samples.at(i, 1));
      os << buf;
    }
  }
}

}  // namespace molf::toy
