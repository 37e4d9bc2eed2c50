// Copyright 2026 The MoLF Authors
// SPDX-License-Identifier: Apache-2.0

// Choosing the guidance scale from a validation sweep.

#pragma once

#include <iosfwd>
#include <vector>

#include "molf/sampler.hpp"

namespace molf {

struct MetricRow {
  double w = 0.0;
  double mse = 0.0;
  double w1 = 0.0;
  double cos = 0.0;
};

using MetricTable = std::vector<MetricRow>;

struct GuidanceSelection {
  double w_star = 0.0;
  double e_star = 0.0;              // smallest W1 in the sweep
  std::vector<double> valid;        // admissible scales, ascending
  MetricTable ranked;               // admissible rows, best first
};

/// Admissible scales have W1 <= (1 + tau) * min W1; among them the lowest
/// cosine distance wins, then the lowest MSE, then the smaller w.
GuidanceSelection select_guidance(const MetricTable& table, double tau = 0.05);

/// Header "w,mse,w1,cos"; one row per scale.
void write_metric_table(std::ostream& os, const MetricTable& table);
/// Accepts the format above; lines starting with '#' are skipped.
MetricTable read_metric_table(std::istream& is);

/// Generated versus measured expression for one guidance scale.
MetricRow evaluate_expression(double w, const Tensor<float>& truth,
                              const Tensor<float>& generated);

/// One row per scale. Every scale reuses the same per-spot noise, so rows
/// differ only through w.
MetricTable sweep_cfg(const FlowDataset& data, const FlowModel& model,
                      const VaeModel<float>& vae, const std::vector<double>& ws,
                      std::size_t steps, std::uint64_t seed,
                      std::size_t chunk_cap = 1024);

}  // namespace molf
