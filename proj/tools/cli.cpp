// Copyright 2026 The MoLF Authors
// SPDX-License-Identifier: Apache-2.0

#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>

#include "molf/pipeline.hpp"
#include "molf/toy.hpp"

namespace molf::cli {
namespace {

namespace fs = std::filesystem;

// Options shared by every command that consumes a RunConfig.
struct ConfigOptions {
  std::string config_path;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;

  void add(CLI::App* app) {
    app->add_option("--config", config_path, "key=value configuration file");
    app->add_option("--set", sets, "override one key, e.g. --set flow_lr=1e-4")
        ->allow_extra_args(false);
    app->add_option("--seed", seed, "seed for every random stream");
  }

  // defaults < --config < --set < dedicated flags (applied by the caller).
  RunConfig build() const {
    RunConfig cfg;
    if (!config_path.empty()) cfg.apply(KeyValues::load(config_path));
    KeyValues overrides;
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos || eq == 0)
        throw ConfigError("--set expects key=value, got '" + s + "'");
      overrides.set(s.substr(0, eq), s.substr(eq + 1));
    }
    cfg.apply(overrides);
    if (seed) cfg.seed = *seed;
    return cfg;
  }
};

std::string output_path(const std::string& given, const std::string& fallback) {
  if (!given.empty()) return given;
  const char* dir = std::getenv(kOutputDirEnv);
  return dir && *dir ? (fs::path(dir) / fallback).string() : fallback;
}

std::string with_header(const RunConfig& cfg, const std::string& command,
                        const std::string& body) {
  std::ostringstream os;
  write_csv_header(os, cfg, command);
  os << body;
  return os.str();
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Test-slide loading against a trained model: labels follow the training
// vocabulary and the feature width has to match.
io::Dataset load_for_model(const std::string& manifest, const io::CheckpointBundle& flow) {
  auto d = io::load_dataset(io::read_manifest(manifest));
  const auto vocab = pipeline::checkpoint_vocabulary(flow);
  if (!vocab.empty()) pipeline::remap_types(d, vocab);
  const auto vcfg = velocity_config_from(flow.config);
  if (d.features.cols() != vcfg.condition_dim)
    throw ConfigError("manifest has " + std::to_string(d.features.cols()) +
                      "-dim features but the flow checkpoint expects " +
                      std::to_string(vcfg.condition_dim));
  return d;
}

VaeModel<float> load_vae(const std::string& path) {
  return io::vae_from_checkpoint(io::load_checkpoint(path, io::Stage::vae));
}

// ---------------------------------------------------------------- commands

struct ToyGen {
  std::string fixture = "hist", out;
  std::size_t samples = 80000, slides = 3, spots = 160, genes = 64;
  bool noise_features = false;
  std::uint64_t seed = 2024;

  int run(std::ostream& os) const {
    if (fixture == "hist") {
      pipeline::FixtureSpec spec;
      spec.slides = slides;
      spec.spots = spots;
      spec.genes = genes;
      spec.noise_features = noise_features;
      spec.seed = seed;
      const auto dir = output_path(out, "hist");
      const auto paths = pipeline::write_fixture(spec, dir);
      os << "manifest=" << paths.all << "\ntrain=" << paths.train << "\ntest=" << paths.test
         << "\n";
      return kOk;
    }
    if (fixture != "toy") throw ConfigError("--fixture must be 'hist' or 'toy'");
    toy::ToyConfig cfg;
    Rng rng(seed, 0);
    const auto data = toy::gen_toy_dataset(cfg, samples, rng);
    KeyValues settings;
    settings.put("samples", samples);
    settings.put("radius", cfg.radius);
    settings.put("variance", cfg.variance);
    std::ostringstream body;
    write_csv_header(body, settings, seed, "toy-gen");
    body << "theta,c0,c1,mode,x,y\n";
    char buf[160];
    for (std::size_t i = 0; i < data.rows(); ++i) {
      std::snprintf(buf, sizeof buf, "%.9g,%.9g,%.9g,%zu,%.9g,%.9g\n", data.theta[i],
                    data.condition.at(i, 0), data.condition.at(i, 1), data.modes[i],
                    data.target.at(i, 0), data.target.at(i, 1));
      body << buf;
    }
    const auto path = output_path(out, "toy.csv");
    io::atomic_write(path, body.str());
    os << "samples=" << samples << " out=" << path << "\n";
    return kOk;
  }
};

struct ToyBench {
  std::size_t seeds = 3, steps = 0;
  std::uint64_t first_seed = 0;
  double lambda_aux = 1.0;
  std::string out, dump;

  int run(std::ostream& os) const {
    if (seeds == 0) throw ConfigError("--seeds must be >= 1");
    toy::ToyConfig cfg;
    if (steps) cfg.steps = steps;
    cfg.lambda_aux = lambda_aux;
    cfg.validate();
    std::vector<std::uint64_t> ids(seeds);
    for (std::size_t i = 0; i < seeds; ++i) ids[i] = first_seed + i;
    const auto report = toy::run_toy_benchmark(cfg, ids);

    KeyValues settings;
    settings.put("seeds", seeds);
    settings.put("steps", cfg.steps);
    settings.put("batch_size", cfg.batch_size);
    settings.put("lr", cfg.lr);
    settings.put("gate_lr", cfg.gate_lr);
    settings.put("lambda_aux", cfg.lambda_aux);
    settings.put("w", cfg.w);
    settings.put("sample_steps", cfg.sample_steps);
    std::ostringstream body;
    write_csv_header(body, settings, first_seed, "toy-bench");
    toy::write_toy_report(body, report);
    const auto path = output_path(out, "toy_report.csv");
    io::atomic_write(path, body.str());
    if (!dump.empty()) {
      std::ostringstream s;
      write_csv_header(s, settings, first_seed, "toy-bench");
      toy::write_toy_samples(s, report, cfg);
      io::atomic_write(dump, s.str());
    }
    os << "median_w2_moe=" << fmt(report.median_moe)
       << " median_w2_dense=" << fmt(report.median_dense) << " out=" << path << "\n";
    return kOk;
  }
};

struct TrainVae {
  ConfigOptions config;
  std::string manifest, out, log;

  int run(std::ostream& os) const {
    const auto cfg = config.build();
    cfg.validate();
    const auto train = io::load_dataset(io::read_manifest(manifest));
    const auto res = pipeline::train_vae_stage(train, cfg);
    const auto path = output_path(out, "vae.ckpt");
    io::save_checkpoint(pipeline::vae_checkpoint(res.model, cfg, train), path);
    if (!log.empty()) {
      std::ostringstream body;
      body << "epoch,train_loss,train_mse,train_kl,val_loss\n";
      for (const auto& e : res.log)
        body << e.epoch << ',' << fmt(e.train_loss) << ',' << fmt(e.train_mse) << ','
             << fmt(e.train_kl) << ',' << fmt(e.val_loss) << '\n';
      io::atomic_write(log, with_header(cfg, "train-vae", body.str()));
    }
    os << "epochs=" << res.epochs_run << " best_epoch=" << res.best_epoch
       << " best_val_loss=" << fmt(res.best_val_loss)
       << " checksum=" << hex64(res.model.params.checksum()) << " out=" << path << "\n";
    return kOk;
  }
};

struct TrainFlow {
  ConfigOptions config;
  std::string manifest, vae, out, log;
  bool no_moe = false, no_pe = false;

  int run(std::ostream& os) const {
    auto cfg = config.build();
    if (no_moe) cfg.moe = false;
    if (no_pe) cfg.pe = false;
    cfg.validate();
    const auto train = io::load_dataset(io::read_manifest(manifest));
    const auto stage1 = load_vae(vae);
    const auto res = pipeline::train_flow_stage(train, stage1, cfg);
    const auto path = output_path(out, "flow.ckpt");
    io::save_checkpoint(pipeline::flow_checkpoint(res.model, cfg, train, stage1), path);
    if (!log.empty()) {
      std::ostringstream body;
      write_loss_csv(body, res.log);
      io::atomic_write(log, with_header(cfg, "train-flow", body.str()));
    }
    os << "epochs=" << res.epochs_run << " best_epoch=" << res.best_epoch
       << " steps=" << res.steps << " checksum=" << hex64(res.model.params.checksum())
       << " out=" << path << "\n";
    return kOk;
  }
};

// Everything sample, sweep-cfg and routing-report need from disk.
struct Inputs {
  ConfigOptions config;
  std::string manifest, vae, flow;

  void add(CLI::App* app, bool needs_vae) {
    config.add(app);
    app->add_option("--manifest", manifest, "dataset manifest")->required();
    if (needs_vae)
      app->add_option("--vae-checkpoint", vae, "frozen Stage-I checkpoint")->required();
    app->add_option("--flow-checkpoint", flow, "Stage-II checkpoint")->required();
  }
};

struct Sample {
  Inputs in;
  std::optional<double> w;
  std::optional<std::size_t> steps;
  std::string out, latents_out;

  int run(std::ostream& os) const {
    auto cfg = in.config.build();
    if (w) cfg.w = *w;
    if (steps) cfg.sample_steps = *steps;
    cfg.validate();
    const auto stage1 = load_vae(in.vae);
    const auto bundle = io::load_checkpoint(in.flow, io::Stage::flow);
    const auto model = io::flow_from_checkpoint(bundle);
    const auto d = load_for_model(in.manifest, bundle);
    const auto gen = generate_dataset(pipeline::flow_dataset(d, stage1), model, &stage1, cfg.w,
                                      cfg.sample_steps, cfg.seed, cfg.chunk_cap);
    const auto path = output_path(out, "pred.molf");
    io::write_matrix(path, gen.expression);
    if (!latents_out.empty()) io::write_matrix(latents_out, gen.latents);
    os << "spots=" << gen.expression.rows() << " genes=" << gen.expression.cols()
       << " w=" << fmt(cfg.w) << " velocity_calls=" << gen.velocity_calls << " out=" << path
       << "\n";
    return kOk;
  }
};

struct Eval {
  std::string truth, pred, out;

  int run(std::ostream& os) const {
    const auto y = io::read_matrix(truth), yh = io::read_matrix(pred);
    if (y.shape() != yh.shape())
      throw ValidationError("--truth is " + std::to_string(y.rows()) + "x" +
                            std::to_string(y.cols()) + " but --pred is " +
                            std::to_string(yh.rows()) + "x" + std::to_string(yh.cols()));
    const auto yd = y.cast<double>(), yhd = yh.cast<double>();
    const auto pcc = metrics::pearson_per_gene(yd, yhd);
    const auto cos = metrics::cosine_distance(yd, yhd);
    std::ostringstream text;
    text << "pcc=" << fmt(pcc.mean) << "\n"
         << "pcc_defined_genes=" << pcc.defined << "\n"
         << "mse=" << fmt(metrics::mse(yd, yhd)) << "\n"
         << "w1=" << fmt(metrics::mean_w1_per_spot(yd, yhd)) << "\n"
         << "cosine_distance=" << fmt(cos.distance) << "\n"
         << "cosine_excluded=" << cos.excluded << "\n";
    os << text.str();
    if (!out.empty()) {
      std::ostringstream csv;
      csv << "gene,pcc\n";
      for (std::size_t g = 0; g < pcc.per_gene.size(); ++g)
        csv << g << ',' << (pcc.per_gene[g] ? fmt(*pcc.per_gene[g]) : "") << '\n';
      io::atomic_write(out, csv.str());
    }
    return kOk;
  }
};

struct SweepCfg {
  Inputs in;
  std::vector<double> scales;
  std::optional<std::size_t> steps;
  std::string out;

  int run(std::ostream& os) const {
    auto cfg = in.config.build();
    if (!scales.empty()) cfg.cfg_scales = scales;
    if (steps) cfg.sample_steps = *steps;
    cfg.validate();
    const auto stage1 = load_vae(in.vae);
    const auto bundle = io::load_checkpoint(in.flow, io::Stage::flow);
    const auto model = io::flow_from_checkpoint(bundle);
    const auto d = load_for_model(in.manifest, bundle);
    const auto table = sweep_cfg(pipeline::flow_dataset(d, stage1), model, stage1,
                                 cfg.cfg_scales, cfg.sample_steps, cfg.seed, cfg.chunk_cap);
    std::ostringstream body;
    write_metric_table(body, table);
    const auto path = output_path(out, "cfg_sweep.csv");
    io::atomic_write(path, with_header(cfg, "sweep-cfg", body.str()));
    os << "scales=" << table.size() << " out=" << path << "\n";
    return kOk;
  }
};

struct SelectCfg {
  std::string table;
  double tau = 0.05;

  int run(std::ostream& os) const {
    std::istringstream is(io::read_file(table));
    const auto t = read_metric_table(is);
    const auto sel = select_guidance(t, tau);
    os << "tau=" << fmt(tau) << "\n"
       << "w_star=" << fmt(sel.w_star) << "\n"
       << "e_star=" << fmt(sel.e_star) << "\n"
       << "valid=";
    for (std::size_t i = 0; i < sel.valid.size(); ++i) os << (i ? "," : "") << fmt(sel.valid[i]);
    os << "\n";
    for (std::size_t i = 0; i < sel.ranked.size(); ++i) {
      const auto& r = sel.ranked[i];
      os << "rank=" << i + 1 << " w=" << fmt(r.w) << " cos=" << fmt(r.cos)
         << " w1=" << fmt(r.w1) << " mse=" << fmt(r.mse) << "\n";
    }
    return kOk;
  }
};

struct RoutingReport {
  Inputs in;
  double t = 0.0;
  std::string stat = "weight", out, jsd_out;

  int run(std::ostream& os) const {
    const auto cfg = in.config.build();
    cfg.validate();
    if (stat != "weight" && stat != "count")
      throw ConfigError("--stat must be 'weight' or 'count'");
    const auto bundle = io::load_checkpoint(in.flow, io::Stage::flow);
    const auto model = io::flow_from_checkpoint(bundle);
    if (!model.config.moe)
      throw ConfigError("routing-report needs a MoE checkpoint; this one was trained with --no-moe");
    const auto d = load_for_model(in.manifest, bundle);
    // Only the condition is read; the gate sees fresh noise as z_t.
    FlowDataset data;
    data.z1 = Tensor<float>(Shape{d.rows(), model.config.latent_dim});
    data.condition = d.features;
    data.coords = d.coords;
    data.types = d.types;
    data.slides = d.slides;
    const auto trace = routing_trace(model, data, t, cfg.seed, cfg.chunk_cap);
    const auto summary = pipeline::summarize_routing(
        trace.decisions(), d.types, d.vocabulary, trace.experts,
        stat == "count" ? RoutingStatistic::selection_count : RoutingStatistic::weight_mass);
    std::ostringstream body, jsd;
    pipeline::write_routing_csv(body, summary);
    pipeline::write_jsd_csv(jsd, summary);
    const auto path = output_path(out, "routing.csv");
    const auto jpath =
        jsd_out.empty() ? (fs::path(path).replace_extension("").string() + ".jsd.csv") : jsd_out;
    io::atomic_write(path, with_header(cfg, "routing-report", body.str()));
    io::atomic_write(jpath, with_header(cfg, "routing-report", jsd.str()));
    os << body.str() << "jsd_out=" << jpath << "\n";
    return kOk;
  }
};

std::string one_line(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  while (!s.empty() && s.back() == ' ') s.pop_back();
  return s;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Two-stage latent flow model for spatial gene expression", "molf"};
  app.require_subcommand(1, 1);
  app.set_version_flag("--version", kVersion);

  ToyGen toy_gen;
  auto* c_toy_gen = app.add_subcommand("toy-gen", "write the histology fixture or toy samples");
  c_toy_gen->add_option("--fixture", toy_gen.fixture, "hist (pseudo-slides) or toy (8 Gaussians)")
      ->capture_default_str();
  c_toy_gen->add_option("--out", toy_gen.out, "output directory (hist) or CSV (toy)");
  c_toy_gen->add_option("--samples", toy_gen.samples, "toy samples")->capture_default_str();
  c_toy_gen->add_option("--slides", toy_gen.slides)->capture_default_str();
  c_toy_gen->add_option("--spots", toy_gen.spots, "spots per slide")->capture_default_str();
  c_toy_gen->add_option("--genes", toy_gen.genes)->capture_default_str();
  c_toy_gen->add_flag("--noise-features", toy_gen.noise_features,
                      "replace image features by pure noise");
  c_toy_gen->add_option("--seed", toy_gen.seed)->capture_default_str();

  ToyBench bench;
  auto* c_bench = app.add_subcommand("toy-bench", "MoE vs dense velocity on the 8-Gaussian task");
  c_bench->add_option("--seeds", bench.seeds, "number of seeds")->capture_default_str();
  c_bench->add_option("--seed", bench.first_seed, "first seed")->capture_default_str();
  c_bench->add_option("--steps", bench.steps, "override the optimisation steps");
  c_bench->add_option("--lambda-aux", bench.lambda_aux)->capture_default_str();
  c_bench->add_option("--out", bench.out, "report CSV");
  c_bench->add_option("--dump-samples", bench.dump, "generated samples CSV");

  TrainVae tvae;
  auto* c_tvae = app.add_subcommand("train-vae", "Stage I: gene VAE");
  tvae.config.add(c_tvae);
  c_tvae->add_option("--manifest", tvae.manifest, "training manifest")->required();
  c_tvae->add_option("--out", tvae.out, "checkpoint path");
  c_tvae->add_option("--log", tvae.log, "per-epoch loss CSV");

  TrainFlow tflow;
  auto* c_tflow = app.add_subcommand("train-flow", "Stage II: latent flow with a frozen VAE");
  tflow.config.add(c_tflow);
  c_tflow->add_option("--manifest", tflow.manifest, "training manifest")->required();
  c_tflow->add_option("--vae-checkpoint", tflow.vae, "frozen Stage-I checkpoint")->required();
  c_tflow->add_option("--out", tflow.out, "checkpoint path");
  c_tflow->add_option("--log", tflow.log, "per-epoch loss CSV");
  c_tflow->add_flag("--no-moe", tflow.no_moe, "one dense expert of matched width");
  c_tflow->add_flag("--no-pe", tflow.no_pe, "drop the spatial positional encoding");

  Sample sample;
  auto* c_sample = app.add_subcommand("sample", "generate expression for every spot");
  sample.in.add(c_sample, true);
  c_sample->add_option("--w", sample.w, "guidance scale");
  c_sample->add_option("--steps", sample.steps, "Euler steps");
  c_sample->add_option("--out", sample.out, "expression matrix (.molf)");
  c_sample->add_option("--latents-out", sample.latents_out, "latent matrix (.molf)");

  Eval eval;
  auto* c_eval = app.add_subcommand("eval", "compare predicted and measured expression");
  c_eval->add_option("--truth", eval.truth, "measured expression (.molf)")->required();
  c_eval->add_option("--pred", eval.pred, "predicted expression (.molf)")->required();
  c_eval->add_option("--out", eval.out, "per-gene PCC CSV");

  SweepCfg sweep;
  auto* c_sweep = app.add_subcommand("sweep-cfg", "metrics for each guidance scale");
  sweep.in.add(c_sweep, true);
  c_sweep->add_option("--scales", sweep.scales, "comma-separated guidance scales")
      ->delimiter(',');
  c_sweep->add_option("--steps", sweep.steps, "Euler steps");
  c_sweep->add_option("--out", sweep.out, "metric table CSV");

  SelectCfg select;
  auto* c_select = app.add_subcommand("select-cfg", "filter-and-rank a guidance sweep");
  c_select->add_option("--table", select.table, "sweep-cfg output")->required();
  c_select->add_option("--tau", select.tau, "relative W1 tolerance")->capture_default_str();

  RoutingReport routing;
  auto* c_routing = app.add_subcommand("routing-report", "expert usage per cancer type");
  routing.in.add(c_routing, false);
  c_routing->add_option("--t", routing.t, "flow time of the gate query")->capture_default_str();
  c_routing->add_option("--stat", routing.stat, "weight or count")->capture_default_str();
  c_routing->add_option("--out", routing.out, "per-class CSV");
  c_routing->add_option("--jsd-out", routing.jsd_out, "pairwise JSD CSV");

  if (argc > 1 && argv[1][0] != '-') {
    bool known = false;
    for (const auto* sub : app.get_subcommands({})) known |= sub->get_name() == argv[1];
    if (!known) {
      err << "molf: error: unknown command '" << argv[1] << "'\n" << app.help();
      return kUsageError;
    }
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::CallForVersion&) {
    out << kVersion << "\n";
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "molf: error: " << one_line(e.what()) << "\n";
    if (app.get_subcommands().empty()) err << app.help();
    return kUsageError;
  }

  try {
    if (c_toy_gen->parsed()) return toy_gen.run(out);
    if (c_bench->parsed()) return bench.run(out);
    if (c_tvae->parsed()) return tvae.run(out);
    if (c_tflow->parsed()) return tflow.run(out);
    if (c_sample->parsed()) return sample.run(out);
    if (c_eval->parsed()) return eval.run(out);
    if (c_sweep->parsed()) return sweep.run(out);
    if (c_select->parsed()) return select.run(out);
    if (c_routing->parsed()) return routing.run(out);
  } catch (const ConfigError& e) {
    err << "molf: config error: " << one_line(e.what()) << "\n";
    return kUsageError;
  } catch (const std::exception& e) {
    err << "molf: error: " << one_line(e.what()) << "\n";
    return kRuntimeError;
  }
  return kUsageError;
}

}  // namespace molf::cli
