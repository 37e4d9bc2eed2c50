// Copyright 2026 The MoLF Authors
// SPDX-License-Identifier: Apache-2.0

#include "molf/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

namespace molf::pipeline {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kLoadingStream = 1, kSpotStream = 2, kShuffleStream = 3;

template <class F>
auto stage(const char* name, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string(name) + ": " + e.what());
  } catch (const ValidationError& e) {
    throw ValidationError(std::string(name) + ": " + e.what());
  } catch (const CorruptionError& e) {
    throw CorruptionError(std::string(name) + ": " + e.what());
  } catch (const IoError& e) {
    throw IoError(std::string(name) + ": " + e.what());
  } catch (const NumericError& e) {
    throw NumericError(std::string(name) + ": " + e.what());
  } catch (const Error& e) {
    throw Error(std::string(name) + ": " + e.what());
  }
}

// The full run configuration under "run.", so a checkpoint can be traced
// back to the command that produced it.
KeyValues run_meta(const RunConfig& cfg) {
  KeyValues meta;
  const auto kv = cfg.to_kv();
  for (const auto& [k, v] : kv.entries()) meta.set("run." + k, v);
  meta.set("seed", std::to_string(cfg.seed));
  return meta;
}

std::string join(const std::vector<std::string>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + v[i];
  return s;
}

}  // namespace

void FixtureSpec::validate() const {
  if (slides < 2) throw ConfigError("fixture: need at least two slides");
  if (spots == 0 || genes == 0 || features == 0 || factors == 0)
    throw ConfigError("fixture: sizes must be positive");
  if (types.empty()) throw ConfigError("fixture: need at least one type label");
  if (!(expression_noise >= 0.0 && feature_noise >= 0.0))
    throw ConfigError("fixture: noise levels must be >= 0");
}

FixturePaths write_fixture(const FixtureSpec& spec, const std::string& dir) {
  spec.validate();
  fs::create_directories(dir);
  Rng load(spec.seed, kLoadingStream);
  const std::size_t r = spec.factors;
  // Loadings scaled so every gene and feature has unit signal variance.
  Tensor<double> a(Shape{spec.genes, r}), b(Shape{spec.features, r});
  std::vector<double> offset(spec.genes);
  for (auto& v : a.values()) v = load.normal() / std::sqrt(static_cast<double>(r));
  for (auto& v : b.values()) v = load.normal() / std::sqrt(static_cast<double>(r));
  for (auto& v : offset) v = 2.0 + 0.5 * load.normal();

  {
    Tensor<float> off(Shape{1, spec.genes});
    for (std::size_t g = 0; g < spec.genes; ++g) off.at(0, g) = static_cast<float>(offset[g]);
    io::write_matrix((fs::path(dir) / "truth.expression_loadings.molf").string(), a.cast<float>());
    io::write_matrix((fs::path(dir) / "truth.feature_loadings.molf").string(), b.cast<float>());
    io::write_matrix((fs::path(dir) / "truth.offset.molf").string(), off);
  }

  const std::size_t grid = static_cast<std::size_t>(std::ceil(std::sqrt(spec.spots)));
  io::DatasetManifest all;
  all.feature_dim = spec.features;
  for (std::size_t g = 0; g < spec.genes; ++g) all.genes.push_back("gene" + std::to_string(g));
  for (std::size_t s = 0; s < spec.slides; ++s) {
    Rng rng(spec.seed, kSpotStream + s);
    Tensor<float> x(Shape{spec.spots, spec.genes}), f(Shape{spec.spots, spec.features}),
        xy(Shape{spec.spots, 2});
    std::vector<double> u(r);
    for (std::size_t i = 0; i < spec.spots; ++i) {
      for (auto& v : u) v = rng.normal();
      for (std::size_t g = 0; g < spec.genes; ++g) {
        double v = offset[g] + spec.expression_noise * rng.normal();
        for (std::size_t k = 0; k < r; ++k) v += a.at(g, k) * u[k];
        x.at(i, g) = static_cast<float>(v);
      }
      for (std::size_t j = 0; j < spec.features; ++j) {
        double v = 0.0;
        if (spec.noise_features) {
          v = rng.normal();
        } else {
          v = spec.feature_noise * rng.normal();
          for (std::size_t k = 0; k < r; ++k) v += b.at(j, k) * u[k];
        }
        f.at(i, j) = static_cast<float>(v);
      }
      xy.at(i, 0) = static_cast<float>(i % grid);
      xy.at(i, 1) = static_cast<float>(i / grid);
    }
    const std::string name = "slide" + std::to_string(s);
    io::SlideEntry e{name, spec.spots, name + ".expr.molf", name + ".feat.molf",
                     name + ".coords.molf", spec.types[s % spec.types.size()]};
    io::write_matrix((fs::path(dir) / e.expression).string(), x);
    io::write_matrix((fs::path(dir) / e.features).string(), f);
    io::write_matrix((fs::path(dir) / e.coords).string(), xy);
    all.slides.push_back(std::move(e));
  }
  FixturePaths paths{(fs::path(dir) / "manifest.txt").string(),
                     (fs::path(dir) / "train.txt").string(),
                     (fs::path(dir) / "test.txt").string()};
  io::write_manifest(paths.all, all);
  auto train = all, test = all;
  train.slides.pop_back();
  test.slides = {all.slides.back()};
  io::write_manifest(paths.train, train);
  io::write_manifest(paths.test, test);
  return paths;
}

RunConfig fixture_config() {
  RunConfig c;
  c.seed = 7;
  c.latent_dim = 8;
  c.vae_epochs = 200;
  c.vae_lr = 2e-3;
  c.vae_batch = 64;
  c.vae_tokens = 4;
  c.vae_hidden = 32;
  c.vae_heads = 2;
  c.vae_decoder_hidden = {64};
  c.flow_epochs = 300;
  c.flow_lr = 1e-3;
  c.gate_lr = 2e-4;
  c.patience = 50;
  c.experts = 3;
  c.top_k = 2;
  c.hidden = 32;
  c.heads = 2;
  c.expert_heads = 2;
  c.ffn_mult = 2;
  c.gate_hidden = {32};
  c.chunk_cap = 256;
  c.cfg_scales = {0.5, 1, 1.5, 2, 3};
  c.val_fraction = 0.0;
  return c;
}

void remap_types(io::Dataset& d, const std::vector<std::string>& vocabulary) {
  for (auto& t : d.types) {
    const auto& label = d.vocabulary.at(t);
    auto it = std::lower_bound(vocabulary.begin(), vocabulary.end(), label);
    if (it == vocabulary.end() || *it != label)
      throw ValidationError("cancer type '" + label + "' is not in the training vocabulary {" +
                            join(vocabulary) + "}");
    t = static_cast<std::size_t>(it - vocabulary.begin());
  }
  d.vocabulary = vocabulary;
}

std::pair<io::Dataset, io::Dataset> split_validation(const io::Dataset& d,
                                                     double val_fraction) {
  const std::size_t n = d.slides.size();
  std::size_t nval = static_cast<std::size_t>(std::lround(val_fraction * n));
  nval = std::min(nval, n - 1);
  std::vector<std::size_t> tr(n - nval), va(nval);
  std::iota(tr.begin(), tr.end(), std::size_t{0});
  std::iota(va.begin(), va.end(), n - nval);
  auto train = d.select(tr);
  io::Dataset val;
  if (nval > 0) val = d.select(va);
  return {std::move(train), std::move(val)};
}

VaeTrainResult train_vae_stage(const io::Dataset& data, const RunConfig& cfg) {
  cfg.validate();
  auto [train, val] = split_validation(data, cfg.val_fraction);
  VaeTrainOptions opt;
  opt.epochs = cfg.vae_epochs;
  opt.patience = cfg.patience;
  opt.batch_size = cfg.vae_batch;
  opt.lr = cfg.vae_lr;
  opt.weight_decay = cfg.weight_decay;
  opt.seed = cfg.seed;
  return train_vae(train.expression,
                   val.rows() > 0 ? val.expression : Tensor<float>(Shape{0, data.genes.size()}),
                   cfg.vae_config(data.genes.size()), opt);
}

io::CheckpointBundle vae_checkpoint(const VaeModel<float>& vae, const RunConfig& cfg,
                                    const io::Dataset& train) {
  KeyValues meta = run_meta(cfg);
  meta.set("config_hash", hex64(cfg.hash()));
  meta.set("genes", std::to_string(train.genes.size()));
  return io::make_checkpoint(vae, meta);
}

FlowDataset flow_dataset(const io::Dataset& d, const VaeModel<float>& vae) {
  if (d.genes.size() != vae.config.gene_dim)
    throw ConfigError("dataset has " + std::to_string(d.genes.size()) +
                      " genes but the VAE checkpoint expects " +
                      std::to_string(vae.config.gene_dim));
  return make_flow_dataset(vae, d.expression, d.features, d.coords, d.types, d.slides);
}

FlowTrainResult train_flow_stage(const io::Dataset& data, const VaeModel<float>& vae,
                                 const RunConfig& cfg) {
  cfg.validate();
  auto [train, val] = split_validation(data, cfg.val_fraction);
  FlowTrainOptions opt;
  opt.epochs = cfg.flow_epochs;
  opt.patience = cfg.patience;
  opt.lr = cfg.flow_lr;
  opt.gate_lr = cfg.gate_lr;
  opt.weight_decay = cfg.weight_decay;
  opt.p_drop = cfg.p_drop;
  opt.weights = LossWeights{cfg.lambda_flow, cfg.lambda_gene, cfg.lambda_aux};
  opt.chunk_cap = cfg.chunk_cap;
  opt.seed = cfg.seed;
  const auto vcfg = cfg.velocity_config(data.features.cols(), data.vocabulary.size());
  return train_flow(flow_dataset(train, vae),
                    val.rows() > 0 ? flow_dataset(val, vae) : FlowDataset{}, vcfg, &vae, opt);
}

io::CheckpointBundle flow_checkpoint(const FlowModel& model, const RunConfig& cfg,
                                     const io::Dataset& train,
                                     const VaeModel<float>& vae) {
  KeyValues meta = run_meta(cfg);
  meta.set("config_hash", hex64(cfg.hash()));
  meta.set("vocabulary", join(train.vocabulary));
  meta.set("vae_checksum", hex64(vae.params.checksum()));
  return io::make_checkpoint(model, meta);
}

std::vector<std::string> checkpoint_vocabulary(const io::CheckpointBundle& flow) {
  std::vector<std::string> out;
  if (!flow.meta.has("vocabulary")) return out;
  std::stringstream ss(flow.meta.get("vocabulary"));
  for (std::string item; std::getline(ss, item, ',');)
    if (!item.empty()) out.push_back(item);
  return out;
}

PccComparison compare_pcc(const Tensor<float>& truth, const Tensor<float>& pred,
                          std::uint64_t seed) {
  const auto t = truth.cast<double>(), p = pred.cast<double>();
  auto direct = metrics::pearson_per_gene(t, p);
  std::vector<std::size_t> perm(p.rows());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng(seed, kShuffleStream);
  std::shuffle(perm.begin(), perm.end(), rng);
  Tensor<double> shuffled(p.shape());
  for (std::size_t r = 0; r < p.rows(); ++r)
    std::copy_n(p.data() + perm[r] * p.cols(), p.cols(), shuffled.data() + r * p.cols());
  auto base = metrics::pearson_per_gene(t, shuffled);
  return {direct.mean, base.mean, direct.defined};
}

RoutingSummary summarize_routing(const std::vector<GateDecision>& decisions,
                                 const std::vector<std::size_t>& types,
                                 const std::vector<std::string>& vocabulary,
                                 std::size_t experts, RoutingStatistic stat) {
  const auto dist = routing_distribution(decisions, types, vocabulary.size(), experts, stat);
  RoutingSummary s;
  std::vector<std::size_t> present;
  for (std::size_t c = 0; c < vocabulary.size(); ++c) {
    const auto n = static_cast<std::size_t>(std::count(types.begin(), types.end(), c));
    if (n == 0) continue;
    present.push_back(c);
    s.classes.push_back(vocabulary[c]);
    s.spots.push_back(n);
  }
  const std::size_t m = present.size();
  s.percent = Tensor<double>(Shape{m, experts});
  s.jsd = Tensor<double>(Shape{m, m});
  std::vector<std::vector<double>> p(m, std::vector<double>(experts));
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t e = 0; e < experts; ++e) {
      s.percent.at(i, e) = dist.at(present[i], e);
      p[i][e] = dist.at(present[i], e) / 100.0;
    }
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j) s.jsd.at(i, j) = i == j ? 0.0 : metrics::jsd(p[i], p[j]);
  return s;
}

void write_routing_csv(std::ostream& os, const RoutingSummary& s) {
  char buf[32];
  os << "class,spots";
  for (std::size_t e = 0; e < s.percent.cols(); ++e) os << ",expert_" << e + 1;
  os << "\n";
  for (std::size_t i = 0; i < s.classes.size(); ++i) {
    os << s.classes[i] << ',' << s.spots[i];
    for (std::size_t e = 0; e < s.percent.cols(); ++e) {
      std::snprintf(buf, sizeof buf, ",%.17g", s.percent.at(i, e));
      os << buf;
    }
    os << "\n";
  }
}

void write_jsd_csv(std::ostream& os, const RoutingSummary& s) {
  char buf[32];
  os << "class";
  for (const auto& c : s.classes) os << ',' << c;
  os << "\n";
  for (std::size_t i = 0; i < s.classes.size(); ++i) {
    os << s.classes[i];
    for (std::size_t j = 0; j < s.classes.size(); ++j) {
      std::snprintf(buf, sizeof buf, ",%.17g", s.jsd.at(i, j));
      os << buf;
    }
    os << "\n";
  }
}

EndToEndReport end_to_end_check(const FixtureSpec& fixture, const RunConfig& cfg,
                                const std::string& out_dir) {
  EndToEndReport rep;
  const fs::path out(out_dir);
  const auto paths = stage("fixture", [&] { return write_fixture(fixture, (out / "data").string()); });
  const std::string vae_path = (out / "vae.ckpt").string(), flow_path = (out / "flow.ckpt").string();

  stage("train-vae", [&] {
    auto train = io::load_dataset(io::read_manifest(paths.train));
    auto res = train_vae_stage(train, cfg);
    io::save_checkpoint(vae_checkpoint(res.model, cfg, train), vae_path);
  });
  const std::string vae_bytes = io::read_file(vae_path);

  stage("train-flow", [&] {
    auto train = io::load_dataset(io::read_manifest(paths.train));
    auto vae = io::vae_from_checkpoint(io::load_checkpoint(vae_path, io::Stage::vae));
    rep.vae_checksum = vae.params.checksum();
    auto res = train_flow_stage(train, vae, cfg);
    rep.vae_checksum_after_flow = vae.params.checksum();
    io::save_checkpoint(flow_checkpoint(res.model, cfg, train, vae), flow_path);
  });
  rep.vae_file_unchanged = io::read_file(vae_path) == vae_bytes;

  auto vae = io::vae_from_checkpoint(io::load_checkpoint(vae_path, io::Stage::vae));
  auto flow_bundle = io::load_checkpoint(flow_path, io::Stage::flow);
  auto model = io::flow_from_checkpoint(flow_bundle);
  auto test = io::load_dataset(io::read_manifest(paths.test));
  remap_types(test, checkpoint_vocabulary(flow_bundle));
  const auto data = flow_dataset(test, vae);
  const std::string sweep_path = (out / "sweep.csv").string();

  stage("sweep-cfg", [&] {
    auto table = sweep_cfg(data, model, vae, cfg.cfg_scales, cfg.sample_steps, cfg.seed,
                           cfg.chunk_cap);
    std::ostringstream os;
    write_csv_header(os, cfg, "sweep-cfg");
    write_metric_table(os, table);
    io::atomic_write(sweep_path, os.str());
  });
  stage("select-cfg", [&] {
    std::istringstream is(io::read_file(sweep_path));
    rep.sweep = read_metric_table(is);
    rep.selection = select_guidance(rep.sweep, cfg.tau);
  });
  stage("eval", [&] {
    auto gen = generate_dataset(data, model, &vae, rep.selection.w_star, cfg.sample_steps,
                                cfg.seed, cfg.chunk_cap);
    rep.pcc = compare_pcc(test.expression, gen.expression, cfg.seed);
    for (const auto& row : rep.sweep)
      if (row.w == rep.selection.w_star)
        rep.w_star_admissible = row.w1 <= (1.0 + cfg.tau) * rep.selection.e_star;
  });
  return rep;
}

}  // namespace molf::pipeline
