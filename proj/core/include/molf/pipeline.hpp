// Copyright 2026 The MoLF Authors
// SPDX-License-Identifier: Apache-2.0

// Stage runners shared by the command-line tool and the end-to-end tests,
// plus the synthetic histology fixture.

#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "molf/config.hpp"
#include "molf/dataio.hpp"
#include "molf/guidance.hpp"
#include "molf/metrics.hpp"

namespace molf::pipeline {

/// Linear-Gaussian stand-in for paired image features and expression:
/// per spot, factors u ~ N(0, I); expression = A u + b + noise; features =
/// B u + noise (or pure noise for the no-signal control).
struct FixtureSpec {
  std::size_t slides = 3;
  std::size_t spots = 160;
  std::size_t genes = 64;
  std::size_t features = 16;
  std::size_t factors = 4;
  double expression_noise = 0.3;
  double feature_noise = 0.1;
  bool noise_features = false;
  std::uint64_t seed = 2024;
  std::vector<std::string> types = {"BRCA", "LUAD"};  // cycled over slides

  void validate() const;
};

/// Writes per-slide matrices plus three manifests: manifest.txt (all
/// slides), train.txt (all but the last) and test.txt (the last slide).
/// The generating parameters go to truth.{expression,feature}_loadings.molf
/// and truth.offset.molf.
struct FixturePaths {
  std::string all, train, test;
};
FixturePaths write_fixture(const FixtureSpec& spec, const std::string& dir);

/// Desk-scale configuration for the fixture.
RunConfig fixture_config();

/// Relabel `d.types` against another vocabulary (the training one).
/// Labels missing from it raise ValidationError.
void remap_types(io::Dataset& d, const std::vector<std::string>& vocabulary);

/// The last round(val_fraction * slides) slides validate; at least one
/// slide always trains. Returns {train, val}.
std::pair<io::Dataset, io::Dataset> split_validation(const io::Dataset& d,
                                                     double val_fraction);

VaeTrainResult train_vae_stage(const io::Dataset& train, const RunConfig& cfg);
io::CheckpointBundle vae_checkpoint(const VaeModel<float>& vae, const RunConfig& cfg,
                                    const io::Dataset& train);

/// Conditioning and latent targets of a dataset for Stage II.
FlowDataset flow_dataset(const io::Dataset& d, const VaeModel<float>& vae);

FlowTrainResult train_flow_stage(const io::Dataset& train, const VaeModel<float>& vae,
                                 const RunConfig& cfg);
/// Meta records the training vocabulary and the parent VAE checksum.
io::CheckpointBundle flow_checkpoint(const FlowModel& model, const RunConfig& cfg,
                                     const io::Dataset& train,
                                     const VaeModel<float>& vae);
std::vector<std::string> checkpoint_vocabulary(const io::CheckpointBundle& flow);

/// Per-gene PCC of a prediction against the truth, and of the same
/// prediction with spots permuted (the shuffled baseline).
struct PccComparison {
  double pcc = 0.0;
  double shuffled = 0.0;
  std::size_t defined_genes = 0;
};
PccComparison compare_pcc(const Tensor<float>& truth, const Tensor<float>& pred,
                          std::uint64_t seed);

/// Expert utilisation per class present in `types`, in vocabulary order,
/// and the class-pair Jensen-Shannon distances between those rows.
struct RoutingSummary {
  std::vector<std::string> classes;
  std::vector<std::size_t> spots;
  Tensor<double> percent;  // [classes, experts], rows sum to 100
  Tensor<double> jsd;      // [classes, classes]
};
RoutingSummary summarize_routing(const std::vector<GateDecision>& decisions,
                                 const std::vector<std::size_t>& types,
                                 const std::vector<std::string>& vocabulary,
                                 std::size_t experts,
                                 RoutingStatistic stat = RoutingStatistic::weight_mass);
void write_routing_csv(std::ostream& os, const RoutingSummary& s);
void write_jsd_csv(std::ostream& os, const RoutingSummary& s);

struct EndToEndReport {
  std::uint64_t vae_checksum = 0;
  std::uint64_t vae_checksum_after_flow = 0;
  bool vae_file_unchanged = false;
  MetricTable sweep;
  GuidanceSelection selection;
  PccComparison pcc;
  bool w_star_admissible = false;
};

/// train-vae -> train-flow -> sweep-cfg -> select-cfg -> eval on a fixture,
/// passing every artifact through files in `out_dir`. Failures are rethrown
/// with the stage name prefixed.
EndToEndReport end_to_end_check(const FixtureSpec& fixture, const RunConfig& cfg,
                                const std::string& out_dir);

}  // namespace molf::pipeline
