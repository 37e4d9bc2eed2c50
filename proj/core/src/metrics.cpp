// Copyright 2026 The MoLF Authors
// SPDX-License-Identifier: Apache-2.0

#include "molf/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace molf::metrics {

namespace {

void same_shape(const Tensor<double>& a, const Tensor<double>& b,
                const char* who) {
  MOLF_EXPECT(a.rank() == 2 && a.shape() == b.shape(),
              std::string(who) + ": shape mismatch " + shape_to_string(a.shape()) +
                  " vs " + shape_to_string(b.shape()));
}

std::vector<double> sorted_row(const Tensor<double>& x, std::size_t r) {
  auto row = x.row(r);
  std::vector<double> v(row.begin(), row.end());
  std::sort(v.begin(), v.end());
  return v;
}

std::vector<double> sorted_column(const Tensor<double>& x, std::size_t c,
                                  std::size_t n) {
  std::vector<double> v(n);
  for (std::size_t r = 0; r < n; ++r) v[r] = x.at(r, c);
  std::sort(v.begin(), v.end());
  return v;
}

}  // namespace

PearsonResult pearson_per_gene(const Tensor<double>& truth,
                               const Tensor<double>& pred) {
  same_shape(truth, pred, "pearson_per_gene");
  const std::size_t n = truth.rows(), g = truth.cols();
  MOLF_EXPECT(n >= 2, "pearson_per_gene: need at least 2 spots");
  PearsonResult res;
  res.per_gene.resize(g);
  double acc = 0.0;
  for (std::size_t j = 0; j < g; ++j) {
    double ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      ma += truth.at(i, j);
      mb += pred.at(i, j);
    }
    ma /= static_cast<double>(n);
    mb /= static_cast<double>(n);
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double a = truth.at(i, j) - ma, b = pred.at(i, j) - mb;
      sab += a * b;
      saa += a * a;
      sbb += b * b;
    }
    if (saa <= 0.0 || sbb <= 0.0) continue;
    const double r = sab / std::sqrt(saa * sbb);
    res.per_gene[j] = r;
    acc += r;
    ++res.defined;
  }
  res.mean = res.defined > 0 ? acc / static_cast<double>(res.defined)
                             : std::numeric_limits<double>::quiet_NaN();
  return res;
}

std::size_t GenePanelStats::count(Tier t) const {
  return static_cast<std::size_t>(std::count(tiers.begin(), tiers.end(), t));
}

GenePanelStats stratify_by_thresholds(std::span<const double> variances,
                                      VarianceThresholds bounds) {
  MOLF_EXPECT(!variances.empty(), "variance_stratify: no genes");
  MOLF_EXPECT(bounds.low_max <= bounds.high_min,
              "variance_stratify: thresholds out of order");
  GenePanelStats s;
  s.variances.assign(variances.begin(), variances.end());
  s.thresholds = bounds;
  for (double v : variances)
    s.tiers.push_back(v <= bounds.low_max    ? Tier::low
                      : v >= bounds.high_min ? Tier::high
                                             : Tier::mid);
  return s;
}

GenePanelStats stratify_by_tertiles(std::span<const double> variances) {
  MOLF_EXPECT(!variances.empty(), "variance_stratify: no genes");
  const std::size_t n = variances.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return variances[a] < variances[b];
  });
  GenePanelStats s;
  s.variances.assign(variances.begin(), variances.end());
  s.tiers.assign(n, Tier::low);
  std::vector<int> tier_of_rank(n);
  for (std::size_t r = 0; r < n; ++r)
    tier_of_rank[r] = static_cast<int>(std::min<std::size_t>(2, 3 * r / n));
  // Equal values take the lowest tier any of them reached.
  for (std::size_t r = 1; r < n; ++r)
    if (variances[order[r]] == variances[order[r - 1]])
      tier_of_rank[r] = tier_of_rank[r - 1];
  for (std::size_t r = 0; r < n; ++r)
    s.tiers[order[r]] = static_cast<Tier>(tier_of_rank[r]);
  double low_max = -std::numeric_limits<double>::infinity();
  double high_min = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) {
    if (s.tiers[i] == Tier::low) low_max = std::max(low_max, variances[i]);
    if (s.tiers[i] == Tier::high) high_min = std::min(high_min, variances[i]);
  }
  s.thresholds = {low_max, high_min};
  return s;
}

std::vector<double> column_variances(const Tensor<double>& x) {
  MOLF_EXPECT(x.rank() == 2 && x.rows() >= 2,
              "column_variances: need at least 2 rows");
  const std::size_t n = x.rows(), g = x.cols();
  std::vector<double> v(g, 0.0);
  for (std::size_t j = 0; j < g; ++j) {
    double m = 0.0;
    for (std::size_t i = 0; i < n; ++i) m += x.at(i, j);
    m /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) v[j] += (x.at(i, j) - m) * (x.at(i, j) - m);
    v[j] /= static_cast<double>(n - 1);
  }
  return v;
}

double mean_w1_per_spot(const Tensor<double>& truth, const Tensor<double>& pred) {
  same_shape(truth, pred, "mean_w1_per_spot");
  MOLF_EXPECT(truth.rows() > 0 && truth.cols() > 0, "mean_w1_per_spot: empty input");
  double acc = 0.0;
  for (std::size_t r = 0; r < truth.rows(); ++r) {
    const auto a = sorted_row(truth, r), b = sorted_row(pred, r);
    double s = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) s += std::abs(a[j] - b[j]);
    acc += s / static_cast<double>(a.size());
  }
  return acc / static_cast<double>(truth.rows());
}

W2Result w2_per_dimension(const Tensor<double>& truth, const Tensor<double>& pred) {
  MOLF_EXPECT(truth.rank() == 2 && pred.rank() == 2 && truth.rows() > 0 &&
                  pred.rows() > 0,
              "w2_per_dimension: empty sample set");
  MOLF_EXPECT(truth.cols() == pred.cols(), "w2_per_dimension: dimension mismatch");
  const std::size_t n = std::min(truth.rows(), pred.rows());
  W2Result res;
  for (std::size_t c = 0; c < truth.cols(); ++c) {
    const auto a = sorted_column(truth, c, n), b = sorted_column(pred, c, n);
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    res.per_dim.push_back(std::sqrt(s / static_cast<double>(n)));
  }
  for (double v : res.per_dim) res.average += v;
  res.average /= static_cast<double>(res.per_dim.size());
  return res;
}

CosineResult cosine_distance(const Tensor<double>& truth, const Tensor<double>& pred) {
  same_shape(truth, pred, "cosine_distance");
  CosineResult res;
  double acc = 0.0;
  std::size_t used = 0;
  for (std::size_t r = 0; r < truth.rows(); ++r) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t j = 0; j < truth.cols(); ++j) {
      dot += truth.at(r, j) * pred.at(r, j);
      na += truth.at(r, j) * truth.at(r, j);
      nb += pred.at(r, j) * pred.at(r, j);
    }
    if (na == 0.0 || nb == 0.0) {
      ++res.excluded;
      continue;
    }
    acc += 1.0 - dot / (std::sqrt(na) * std::sqrt(nb));
    ++used;
  }
  MOLF_EXPECT(used > 0, "cosine_distance: every spot has a zero-norm vector");
  res.distance = acc / static_cast<double>(used);
  return res;
}

double jsd(std::span<const double> p, std::span<const double> q, JsMode mode) {
  MOLF_EXPECT(p.size() == q.size() && !p.empty(), "jsd: length mismatch");
  double sp = 0.0, sq = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    MOLF_EXPECT(p[i] >= 0.0 && q[i] >= 0.0, "jsd: negative probability");
    sp += p[i];
    sq += q[i];
  }
  MOLF_EXPECT(std::abs(sp - 1.0) <= 1e-6 && std::abs(sq - 1.0) <= 1e-6,
              "jsd: inputs must sum to 1");
  double js = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double m = 0.5 * (p[i] + q[i]);
    if (p[i] > 0.0) js += 0.5 * p[i] * std::log2(p[i] / m);
    if (q[i] > 0.0) js += 0.5 * q[i] * std::log2(q[i] / m);
  }
  js = std::clamp(js, 0.0, 1.0);
  return mode == JsMode::distance ? std::sqrt(js) : js;
}

double mse(const Tensor<double>& truth, const Tensor<double>& pred) {
  same_shape(truth, pred, "mse");
  MOLF_EXPECT(truth.size() > 0, "mse: empty input");
  double s = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i)
    s += (truth[i] - pred[i]) * (truth[i] - pred[i]);
  return s / static_cast<double>(truth.size());
}

}  // namespace molf::metrics
