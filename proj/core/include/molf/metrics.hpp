// Copyright 2026 The MoLF Authors
// SPDX-License-Identifier: Apache-2.0

// Evaluation metrics. Matrices are spots x genes (or samples x dims) and
// everything is computed in double precision with sequential reductions.

#pragma once

#include <optional>
#include <span>
#include <vector>

#include "molf/tensor.hpp"

namespace molf::metrics {

struct PearsonResult {
  std::vector<std::optional<double>> per_gene;  // nullopt: zero variance
  double mean = 0.0;     // over defined genes; NaN when none is defined
  std::size_t defined = 0;
};

/// Sample correlation of every gene column across spots.
PearsonResult pearson_per_gene(const Tensor<double>& truth,
                               const Tensor<double>& pred);

enum class Tier { low, mid, high };

struct VarianceThresholds {
  double low_max = 0.9178;   // v <= low_max -> low
  double high_min = 1.0211;  // v >= high_min -> high, otherwise mid
};

struct GenePanelStats {
  std::vector<double> variances;
  std::vector<Tier> tiers;
  VarianceThresholds thresholds;
  std::size_t count(Tier t) const;
};

GenePanelStats stratify_by_thresholds(std::span<const double> variances,
                                      VarianceThresholds bounds = {});
/// Equal-count thirds of the variance order; equal variances straddling a
/// boundary all go to the lower tier.
GenePanelStats stratify_by_tertiles(std::span<const double> variances);

/// Per-column sample variance (n - 1 denominator).
std::vector<double> column_variances(const Tensor<double>& x);

/// Average over spots of the 1-D W1 between the spot's gene values.
double mean_w1_per_spot(const Tensor<double>& truth, const Tensor<double>& pred);

struct W2Result {
  std::vector<double> per_dim;
  double average = 0.0;
};

/// Exact 1-D quantile coupling per column; sample counts are truncated to
/// the smaller set.
W2Result w2_per_dimension(const Tensor<double>& truth, const Tensor<double>& pred);

struct CosineResult {
  double distance = 0.0;   // mean of 1 - cos over usable spots
  std::size_t excluded = 0;  // spots with a zero-norm row on either side
};

CosineResult cosine_distance(const Tensor<double>& truth,
                             const Tensor<double>& pred);

enum class JsMode { distance, divergence };

/// Base-2 Jensen-Shannon divergence, or its square root (default).
double jsd(std::span<const double> p, std::span<const double> q,
           JsMode mode = JsMode::distance);

double mse(const Tensor<double>& truth, const Tensor<double>& pred);

}  // namespace molf::metrics
