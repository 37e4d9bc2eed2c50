// Copyright 2026 The MoLF Authors
// SPDX-License-Identifier: Apache-2.0

// Deliberately naive reference implementations of the evaluation metrics.
// They follow different computational routes from the library code so that
// agreement is meaningful.

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include "molf/tensor.hpp"

namespace molf::testing::oracle {

inline std::vector<double> column(const Tensor<double>& x, std::size_t j) {
  std::vector<double> v;
  for (std::size_t r = 0; r < x.rows(); ++r) v.push_back(x.at(r, j));
  return v;
}

// Single-pass sums formula.
inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  double sa = 0, sb = 0, sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sa += a[i];
    sb += b[i];
    sab += a[i] * b[i];
    saa += a[i] * a[i];
    sbb += b[i] * b[i];
  }
  return (n * sab - sa * sb) /
         (std::sqrt(n * saa - sa * sa) * std::sqrt(n * sbb - sb * sb));
}

// Integral of |F_a - F_b| over the real line.
inline double w1_cdf(std::vector<double> a, std::vector<double> b) {
  std::vector<double> knots = a;
  knots.insert(knots.end(), b.begin(), b.end());
  std::sort(knots.begin(), knots.end());
  auto cdf = [](const std::vector<double>& s, double x) {
    double c = 0;
    for (double v : s) c += v <= x;
    return c / static_cast<double>(s.size());
  };
  double area = 0.0;
  for (std::size_t i = 0; i + 1 < knots.size(); ++i)
    area += std::abs(cdf(a, knots[i]) - cdf(b, knots[i])) * (knots[i + 1] - knots[i]);
  return area;
}

inline double mean_w1_cdf(const Tensor<double>& y, const Tensor<double>& yh) {
  double acc = 0.0;
  for (std::size_t r = 0; r < y.rows(); ++r) {
    auto a = y.row(r), b = yh.row(r);
    acc += w1_cdf({a.begin(), a.end()}, {b.begin(), b.end()});
  }
  return acc / static_cast<double>(y.rows());
}

// Optimal matching found by enumerating every permutation (small n only).
inline double w2_brute_force(const Tensor<double>& a, const Tensor<double>& b) {
  const std::size_t n = std::min(a.rows(), b.rows());
  double total = 0.0;
  for (std::size_t c = 0; c < a.cols(); ++c) {
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    double best = std::numeric_limits<double>::infinity();
    do {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double d = a.at(i, c) - b.at(perm[i], c);
        s += d * d;
      }
      best = std::min(best, s / static_cast<double>(n));
    } while (std::next_permutation(perm.begin(), perm.end()));
    total += std::sqrt(best);
  }
  return total / static_cast<double>(a.cols());
}

inline double cosine(const Tensor<double>& a, const Tensor<double>& b) {
  double acc = 0.0;
  std::size_t used = 0;
  for (std::size_t r = 0; r < a.rows(); ++r) {
    auto x = a.row(r), y = b.row(r);
    const double dot = std::inner_product(x.begin(), x.end(), y.begin(), 0.0);
    const double nx = std::sqrt(std::inner_product(x.begin(), x.end(), x.begin(), 0.0));
    const double ny = std::sqrt(std::inner_product(y.begin(), y.end(), y.begin(), 0.0));
    if (nx == 0 || ny == 0) continue;
    acc += 1.0 - dot / (nx * ny);
    ++used;
  }
  return acc / static_cast<double>(used);
}

inline double mse_loop(const Tensor<double>& a, const Tensor<double>& b) {
  double s = 0.0;
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t c = 0; c < a.cols(); ++c)
      s += std::pow(a.at(r, c) - b.at(r, c), 2);
  return s / static_cast<double>(a.rows() * a.cols());
}

// Natural-log KL, converted to bits at the end.
inline double js_distance_nat(std::span<const double> p, std::span<const double> q) {
  auto kl = [](std::span<const double> x, const std::vector<double>& m) {
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i)
      if (x[i] > 0) s += x[i] * std::log(x[i] / m[i]);
    return s;
  };
  std::vector<double> m(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) m[i] = (p[i] + q[i]) / 2;
  return std::sqrt((kl(p, m) + kl(q, m)) / (2 * std::log(2.0)));
}

}  // namespace molf::testing::oracle
