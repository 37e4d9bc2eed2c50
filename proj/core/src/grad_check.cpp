// Copyright 2026 The MoLF Authors
// SPDX-License-Identifier: Apache-2.0

#include "molf/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace molf {

const GradCheckEntry* GradCheckReport::worst() const {
  const GradCheckEntry* w = nullptr;
  for (const auto& e : entries)
    if (!w || e.rel_error > w->rel_error) w = &e;
  return w;
}

double grad_rel_error(double analytic, double numeric) {
  const double denom =
      std::max({1.0, std::abs(analytic), std::abs(numeric)});
  return std::abs(analytic - numeric) / denom;
}

namespace {

double eval_scalar(const ScalarFn& f, const Tensor<double>& x) {
  ad::Graph<double> g(false);
  auto y = f(g, g.constant(x));
  const double v = y.value().item();
  if (!std::isfinite(v))
    throw NumericError("grad_check: function is non-finite at a perturbed point");
  return v;
}

double eval_loss(const LossFn& f) {
  ad::Graph<double> g(false);
  const double v = f(g).value().item();
  if (!std::isfinite(v))
    throw NumericError("grad_check: loss is non-finite at a perturbed point");
  return v;
}

void record(GradCheckReport& rep, std::string name, std::size_t i, double a,
            double n) {
  GradCheckEntry e{std::move(name), i, a, n, grad_rel_error(a, n)};
  rep.max_rel_error = std::max(rep.max_rel_error, e.rel_error);
  rep.entries.push_back(std::move(e));
}

}  // namespace

GradCheckReport grad_check(const ScalarFn& f, const Tensor<double>& x,
                           double step) {
  ad::Graph<double> g;
  auto xv = g.variable(x);
  auto y = f(g, xv);
  MOLF_EXPECT(y.value().size() == 1, "grad_check: function must be scalar");
  g.backward(y);
  const Tensor<double> analytic = g.grad_of(xv);

  GradCheckReport rep;
  Tensor<double> probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + step;
    const double fp = eval_scalar(f, probe);
    probe[i] = orig - step;
    const double fm = eval_scalar(f, probe);
    probe[i] = orig;
    record(rep, "x", i, analytic[i], (fp - fm) / (2.0 * step));
  }
  return rep;
}

GradCheckReport grad_check_params(ad::ParameterStore<double>& params,
                                  const LossFn& loss, double step,
                                  const std::string& prefix,
                                  std::size_t max_per_param) {
  params.zero_grad();
  {
    ad::Graph<double> g;
    auto y = loss(g);
    MOLF_EXPECT(y.value().size() == 1, "grad_check: loss must be scalar");
    g.backward(y);
  }
  GradCheckReport rep;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k];
    if (p.frozen() || !p.name().starts_with(prefix)) continue;
    const std::size_t n = p.value().size();
    const std::size_t stride =
        (max_per_param == 0 || n <= max_per_param) ? 1 : n / max_per_param;
    for (std::size_t i = 0; i < n; i += stride) {
      const double orig = p.value()[i];
      p.value()[i] = orig + step;
      const double fp = eval_loss(loss);
      p.value()[i] = orig - step;
      const double fm = eval_loss(loss);
      p.value()[i] = orig;
      record(rep, p.name(), i, p.grad()[i], (fp - fm) / (2.0 * step));
    }
  }
  return rep;
}

}  // namespace molf
