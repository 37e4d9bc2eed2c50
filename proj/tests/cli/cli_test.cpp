// Copyright 2026 The MoLF Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <sstream>

#include "cli.hpp"
#include "molf/pipeline.hpp"
#include "support/tempdir.hpp"

namespace molf::cli {
namespace {

namespace fs = std::filesystem;
using testing::TempDir;

const fs::path kFixtures = fs::path(MOLF_SOURCE_DIR) / "fixtures";

struct Result {
  int code = -1;
  std::string out, err;
};

Result call(std::vector<std::string> args) {
  args.insert(args.begin(), "molf");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  Result r;
  r.code = run(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

// Value of `key=` on its own line of command output.
std::string field(const std::string& text, const std::string& key) {
  std::istringstream is(text);
  for (std::string line; std::getline(is, line);)
    if (line.rfind(key + "=", 0) == 0) return line.substr(key.size() + 1);
  return {};
}

std::size_t line_count(const std::string& s) {
  return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
}

// Fast settings on top of the bundled fixture config.
std::vector<std::string> quick(std::vector<std::string> args) {
  const auto conf = (kFixtures / "hist.conf").string();
  args.insert(args.end(), {"--config", conf, "--set", "vae_epochs=15", "--set", "flow_epochs=8"});
  return args;
}

TEST(Cli, UnknownCommandPrintsUsage) {
  auto r = call({"frobnicate"});
  EXPECT_EQ(r.code, kUsageError);
  EXPECT_NE(r.err.find("unknown command 'frobnicate'"), std::string::npos);
  EXPECT_NE(r.err.find("Usage:"), std::string::npos);
  EXPECT_EQ(call({}).code, kUsageError);
  EXPECT_EQ(call({"--help"}).code, kOk);
}

TEST(Cli, TrainFlowWithoutVaeCheckpointNamesTheFlag) {
  auto r = call({"train-flow", "--manifest", (kFixtures / "hist/train.txt").string()});
  EXPECT_EQ(r.code, kUsageError);
  EXPECT_NE(r.err.find("--vae-checkpoint"), std::string::npos) << r.err;
  EXPECT_EQ(line_count(r.err), 1u) << r.err;
}

TEST(Cli, InvalidConfigNamesTheField) {
  const auto manifest = (kFixtures / "hist/train.txt").string();
  auto r = call({"train-vae", "--manifest", manifest, "--set", "vae_lr=-1"});
  EXPECT_EQ(r.code, kUsageError);
  EXPECT_NE(r.err.find("vae_lr"), std::string::npos) << r.err;
  r = call({"train-vae", "--manifest", manifest, "--set", "no_such_key=3"});
  EXPECT_EQ(r.code, kUsageError);
  EXPECT_NE(r.err.find("no_such_key"), std::string::npos) << r.err;
  r = call({"train-vae", "--manifest", manifest, "--set", "patience=soon"});
  EXPECT_EQ(r.code, kUsageError);
  EXPECT_NE(r.err.find("patience"), std::string::npos) << r.err;
}

TEST(Cli, MissingCheckpointIsAUsageError) {
  TempDir dir;
  auto r = call({"routing-report", "--manifest", (kFixtures / "hist/test.txt").string(),
                 "--flow-checkpoint", dir.file("absent.ckpt")});
  EXPECT_EQ(r.code, kUsageError);
  EXPECT_NE(r.err.find("absent.ckpt"), std::string::npos);
  EXPECT_EQ(line_count(r.err), 1u);
}

TEST(Cli, MissingInputFileIsARuntimeError) {
  TempDir dir;
  auto r = call({"eval", "--truth", dir.file("a.molf"), "--pred", dir.file("b.molf")});
  EXPECT_EQ(r.code, kRuntimeError);
  EXPECT_EQ(line_count(r.err), 1u);
}

TEST(Cli, ToyBenchWritesReportWithHeader) {
  TempDir dir;
  auto r = call({"toy-bench", "--seeds", "1", "--steps", "5", "--out", dir.file("r.csv"),
                 "--dump-samples", dir.file("s.csv")});
  ASSERT_EQ(r.code, kOk) << r.err;
  const auto report = io::read_file(dir.file("r.csv"));
  EXPECT_EQ(report.rfind("# molf ", 0), 0u);
  EXPECT_NE(report.find("# config_hash="), std::string::npos);
  EXPECT_NE(report.find("seed,model,dim1,dim2,average"), std::string::npos);
  EXPECT_NE(report.find("\n0,moe,"), std::string::npos);
  EXPECT_NE(report.find("\n0,dense,"), std::string::npos);
  EXPECT_NE(io::read_file(dir.file("s.csv")).find("seed,model,c0,c1,mode,x,y"),
            std::string::npos);
}

TEST(Cli, ToyGenMatchesCommittedFixtureBitwise) {
  TempDir dir;
  for (const char* name : {"hist", "hist_noise"}) {
    std::vector<std::string> args = {"toy-gen", "--fixture", "hist", "--seed", "2024",
                                     "--out", dir.file(name)};
    if (std::string(name) == "hist_noise") args.push_back("--noise-features");
    ASSERT_EQ(call(args).code, kOk);
    std::size_t files = 0;
    for (const auto& e : fs::directory_iterator(kFixtures / name)) {
      const auto fresh = dir.path() / name / e.path().filename();
      EXPECT_EQ(io::read_file(fresh.string()), io::read_file(e.path().string())) << fresh;
      ++files;
    }
    EXPECT_EQ(files, 15u);
  }
}

TEST(Cli, BundledConfigIsTheFixtureConfig) {
  RunConfig cfg;
  cfg.apply(KeyValues::load((kFixtures / "hist.conf").string()));
  EXPECT_EQ(cfg.hash(), pipeline::fixture_config().hash());
}

TEST(Cli, ToyGenSamplesCsv) {
  TempDir dir;
  ASSERT_EQ(call({"toy-gen", "--fixture", "toy", "--samples", "100", "--out",
                  dir.file("toy.csv")}).code,
            kOk);
  const auto csv = io::read_file(dir.file("toy.csv"));
  EXPECT_NE(csv.find("theta,c0,c1,mode,x,y\n"), std::string::npos);
  std::size_t rows = 0;
  std::istringstream is(csv);
  for (std::string line; std::getline(is, line);) rows += !line.empty() && line[0] != '#';
  EXPECT_EQ(rows, 101u);
}

TEST(Cli, EvalPrintsTheMetricsModulePcc) {
  TempDir dir;
  Rng rng(5, 0);
  Tensor<float> truth(Shape{40, 6}), pred(Shape{40, 6});
  for (std::size_t i = 0; i < truth.size(); ++i) {
    truth.data()[i] = static_cast<float>(rng.normal());
    pred.data()[i] = static_cast<float>(0.6 * truth.data()[i] + rng.normal());
  }
  io::write_matrix(dir.file("a.molf"), truth);
  io::write_matrix(dir.file("b.molf"), pred);
  auto r = call({"eval", "--truth", dir.file("a.molf"), "--pred", dir.file("b.molf")});
  ASSERT_EQ(r.code, kOk) << r.err;
  const double expected =
      metrics::pearson_per_gene(truth.cast<double>(), pred.cast<double>()).mean;
  EXPECT_EQ(std::stod(field(r.out, "pcc")), expected);
  EXPECT_EQ(field(r.out, "pcc_defined_genes"), "6");
  EXPECT_EQ(std::stod(field(r.out, "mse")),
            metrics::mse(truth.cast<double>(), pred.cast<double>()));
}

TEST(Cli, SelectCfgPrintsTheSelection) {
  TempDir dir;
  io::atomic_write(dir.file("t.csv"),
                   "# comment\nw,mse,w1,cos\n1,0.5,0.100,0.30\n2,0.4,0.104,0.20\n"
                   "3,0.3,0.200,0.10\n");
  auto r = call({"select-cfg", "--table", dir.file("t.csv"), "--tau", "0.05"});
  ASSERT_EQ(r.code, kOk) << r.err;
  EXPECT_EQ(field(r.out, "w_star"), "2");
  EXPECT_EQ(field(r.out, "valid"), "1,2");
  EXPECT_NE(r.out.find("rank=1 w=2 "), std::string::npos);
}

TEST(Cli, OutputDirectoryFromEnvironment) {
  TempDir dir;
  ::setenv(kOutputDirEnv, dir.path().c_str(), 1);
  auto r = call({"toy-gen", "--fixture", "toy", "--samples", "10"});
  ::unsetenv(kOutputDirEnv);
  ASSERT_EQ(r.code, kOk) << r.err;
  EXPECT_TRUE(fs::exists(dir.path() / "toy.csv"));
}

// Runs every data command on the bundled fixture into `dir`.
void run_pipeline(const TempDir& dir, const std::vector<std::string>& flow_flags = {}) {
  const auto train = (kFixtures / "hist/train.txt").string();
  const auto test = (kFixtures / "hist/test.txt").string();
  const auto vae = dir.file("vae.ckpt"), flow = dir.file("flow.ckpt");
  auto r = call(quick({"train-vae", "--manifest", train, "--out", vae, "--log",
                       dir.file("vae_loss.csv")}));
  ASSERT_EQ(r.code, kOk) << r.err;
  auto tf = quick({"train-flow", "--manifest", train, "--vae-checkpoint", vae, "--out", flow,
                   "--log", dir.file("flow_loss.csv")});
  tf.insert(tf.end(), flow_flags.begin(), flow_flags.end());
  r = call(tf);
  ASSERT_EQ(r.code, kOk) << r.err;
  r = call(quick({"sample", "--manifest", test, "--vae-checkpoint", vae, "--flow-checkpoint",
                  flow, "--w", "1.5", "--out", dir.file("pred.molf"), "--latents-out",
                  dir.file("latents.molf")}));
  ASSERT_EQ(r.code, kOk) << r.err;
  r = call(quick({"sweep-cfg", "--manifest", test, "--vae-checkpoint", vae, "--flow-checkpoint",
                  flow, "--scales", "1,2", "--out", dir.file("sweep.csv")}));
  ASSERT_EQ(r.code, kOk) << r.err;
  r = call({"eval", "--truth", (kFixtures / "hist/slide2.expr.molf").string(), "--pred",
            dir.file("pred.molf"), "--out", dir.file("pcc.csv")});
  ASSERT_EQ(r.code, kOk) << r.err;
}

TEST(Cli, PipelineIsBitwiseReproducible) {
  TempDir a, b;
  run_pipeline(a);
  run_pipeline(b);
  ASSERT_EQ(call(quick({"routing-report", "--manifest", (kFixtures / "hist/manifest.txt").string(),
                        "--flow-checkpoint", a.file("flow.ckpt"), "--out",
                        a.file("routing.csv")})).code,
            kOk);
  ASSERT_EQ(call(quick({"routing-report", "--manifest", (kFixtures / "hist/manifest.txt").string(),
                        "--flow-checkpoint", b.file("flow.ckpt"), "--out",
                        b.file("routing.csv")})).code,
            kOk);
  for (const char* f : {"vae.ckpt", "flow.ckpt", "vae_loss.csv", "flow_loss.csv", "pred.molf",
                        "latents.molf", "sweep.csv", "pcc.csv", "routing.csv",
                        "routing.jsd.csv"})
    EXPECT_EQ(io::read_file(a.file(f)), io::read_file(b.file(f))) << f;

  // Frozen Stage I: the flow checkpoint records the VAE it was trained on.
  auto vae = io::vae_from_checkpoint(io::load_checkpoint(a.file("vae.ckpt")));
  auto flow = io::load_checkpoint(a.file("flow.ckpt"));
  EXPECT_EQ(flow.meta.get("vae_checksum"), hex64(vae.params.checksum()));
  EXPECT_EQ(flow.meta.get("run.flow_epochs"), "8");

  // Two classes (BRCA on slides 0 and 2, LUAD on slide 1); rows sum to 100.
  std::istringstream is(io::read_file(a.file("routing.csv")));
  std::size_t rows = 0;
  for (std::string line; std::getline(is, line);) {
    if (line.empty() || line[0] == '#' || line.rfind("class", 0) == 0) continue;
    std::istringstream ls(line);
    std::string cell;
    std::getline(ls, cell, ',');
    std::getline(ls, cell, ',');
    double sum = 0.0;
    while (std::getline(ls, cell, ',')) sum += std::stod(cell);
    EXPECT_NEAR(sum, 100.0, 0.01) << line;
    ++rows;
  }
  EXPECT_EQ(rows, 2u);
}

TEST(Cli, SingleClassRoutingReportHasOneRow) {
  TempDir dir;
  run_pipeline(dir);
  auto r = call(quick({"routing-report", "--manifest", (kFixtures / "hist/test.txt").string(),
                       "--flow-checkpoint", dir.file("flow.ckpt"), "--out",
                       dir.file("routing.csv"), "--stat", "count"}));
  ASSERT_EQ(r.code, kOk) << r.err;
  const auto csv = io::read_file(dir.file("routing.csv"));
  EXPECT_NE(csv.find("\nBRCA,160,"), std::string::npos);
  EXPECT_EQ(csv.find("LUAD"), std::string::npos);
  EXPECT_NE(io::read_file(dir.file("routing.jsd.csv")).find("class,BRCA\nBRCA,0\n"),
            std::string::npos);
}

TEST(Cli, AblationFlagsChangeOnlyTheCheckpoint) {
  TempDir base, no_moe, no_pe;
  run_pipeline(base);
  run_pipeline(no_moe, {"--no-moe"});
  run_pipeline(no_pe, {"--no-pe"});
  EXPECT_EQ(io::read_file(base.file("vae.ckpt")), io::read_file(no_moe.file("vae.ckpt")));
  for (const TempDir* d : {&no_moe, &no_pe}) {
    EXPECT_NE(io::read_file(base.file("flow.ckpt")), io::read_file(d->file("flow.ckpt")));
    auto flow = io::load_checkpoint(d->file("flow.ckpt"), io::Stage::flow);
    EXPECT_EQ(io::read_matrix(d->file("pred.molf")).shape(),
              io::read_matrix(base.file("pred.molf")).shape());
    std::istringstream is(io::read_file(d->file("sweep.csv")));
    EXPECT_EQ(read_metric_table(is).size(), 2u);
  }
  EXPECT_FALSE(io::flow_from_checkpoint(io::load_checkpoint(no_moe.file("flow.ckpt"))).config.moe);
  EXPECT_FALSE(
      io::flow_from_checkpoint(io::load_checkpoint(no_pe.file("flow.ckpt"))).config.pe_enabled);
  auto r = call(quick({"routing-report", "--manifest", (kFixtures / "hist/test.txt").string(),
                       "--flow-checkpoint", no_moe.file("flow.ckpt")}));
  EXPECT_EQ(r.code, kUsageError);
}

TEST(Cli, PrecedenceDefaultsConfigSetFlag) {
  TempDir dir;
  io::atomic_write(dir.file("c.conf"), "seed = 3\nflow_epochs = 4\nvae_epochs = 2\n");
  const auto train = (kFixtures / "hist/train.txt").string();
  auto r = call({"train-vae", "--manifest", train, "--config", dir.file("c.conf"), "--set", "vae_epochs=1", "--seed",
                 "9", "--set", "latent_dim=4", "--set", "vae_hidden=16", "--set",
                 "vae_tokens=2", "--set", "vae_heads=1", "--set", "vae_decoder_hidden=8",
                 "--out", dir.file("v.ckpt")});
  ASSERT_EQ(r.code, kOk) << r.err;
  auto b = io::load_checkpoint(dir.file("v.ckpt"));
  EXPECT_EQ(b.meta.get("run.vae_epochs"), "1");  // --set beats --config
  EXPECT_EQ(b.meta.get("run.flow_epochs"), "4");  // --config beats defaults
  EXPECT_EQ(b.meta.get("seed"), "9");             // flag beats --config
  EXPECT_EQ(b.meta.get("run.vae_lr"), "5.0000000000000002e-05");  // default
}

}  // namespace
}  // namespace molf::cli
