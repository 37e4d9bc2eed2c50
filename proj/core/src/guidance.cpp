// Copyright 2026 The MoLF Authors
// SPDX-License-Identifier: Apache-2.0

#include "molf/guidance.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

#include "molf/metrics.hpp"

namespace molf {

GuidanceSelection select_guidance(const MetricTable& table, double tau) {
  MOLF_EXPECT(!table.empty(), "select_guidance: empty sweep");
  MOLF_EXPECT(tau >= 0.0, "select_guidance: tau must be non-negative");
  for (const auto& r : table)
    MOLF_EXPECT(std::isfinite(r.w1) && std::isfinite(r.cos) && std::isfinite(r.mse),
                "select_guidance: non-finite metric at w=" + std::to_string(r.w));
  GuidanceSelection s;
  s.e_star = std::min_element(table.begin(), table.end(), [](const auto& a, const auto& b) {
               return a.w1 < b.w1;
             })->w1;
  const double bound = (1.0 + tau) * s.e_star;
  for (const auto& r : table)
    if (r.w1 <= bound) s.ranked.push_back(r);
  std::sort(s.ranked.begin(), s.ranked.end(), [](const MetricRow& a, const MetricRow& b) {
    if (a.cos != b.cos) return a.cos < b.cos;
    if (a.mse != b.mse) return a.mse < b.mse;
    return a.w < b.w;
  });
  for (const auto& r : s.ranked) s.valid.push_back(r.w);
  std::sort(s.valid.begin(), s.valid.end());
  s.w_star = s.ranked.front().w;
  return s;
}

void write_metric_table(std::ostream& os, const MetricTable& table) {
  os << "w,mse,w1,cos\n";
  char buf[128];
  for (const auto& r : table) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g\n", r.w, r.mse, r.w1, r.cos);
    os << buf;
  }
}

MetricTable read_metric_table(std::istream& is) {
  MetricTable t;
  std::string line;
  bool header = false;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    if (!header) {
      if (line != "w,mse,w1,cos")
        throw ValidationError("metric table: expected header 'w,mse,w1,cos', got '" +
                              line + "'");
      header = true;
      continue;
    }
    MetricRow r;
    char c1 = 0, c2 = 0, c3 = 0;
    std::istringstream ls(line);
    if (!(ls >> r.w >> c1 >> r.mse >> c2 >> r.w1 >> c3 >> r.cos) || c1 != ',' ||
        c2 != ',' || c3 != ',')
      throw ValidationError("metric table: malformed line " + std::to_string(lineno));
    t.push_back(r);
  }
  if (!header) throw ValidationError("metric table: missing header");
  return t;
}

MetricRow evaluate_expression(double w, const Tensor<float>& truth,
                              const Tensor<float>& generated) {
  const auto y = truth.cast<double>(), yh = generated.cast<double>();
  MetricRow r;
  r.w = w;
  r.mse = metrics::mse(y, yh);
  r.w1 = metrics::mean_w1_per_spot(y, yh);
  r.cos = metrics::cosine_distance(y, yh).distance;
  return r;
}

MetricTable sweep_cfg(const FlowDataset& data, const FlowModel& model,
                      const VaeModel<float>& vae, const std::vector<double>& ws,
                      std::size_t steps, std::uint64_t seed, std::size_t chunk_cap) {
  MOLF_EXPECT(!ws.empty(), "sweep_cfg: no guidance scales");
  MOLF_EXPECT(data.has_expression(), "sweep_cfg: measured expression required");
  MetricTable t;
  for (double w : ws) {
    auto r = generate_dataset(data, model, &vae, w, steps, seed, chunk_cap);
    t.push_back(evaluate_expression(w, data.expression, r.expression));
  }
  return t;
}

}  // namespace molf
