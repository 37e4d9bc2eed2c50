// Copyright 2026 The MoLF Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <string>
#include <vector>

#include "molf/autodiff.hpp"

namespace molf {

struct GradCheckEntry {
  std::string name;  // parameter name or "x"
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::vector<GradCheckEntry> entries;
  const GradCheckEntry* worst() const;
};

/// |a - n| / max(1, |a|, |n|)
double grad_rel_error(double analytic, double numeric);

using ScalarFn =
    std::function<ad::Var<double>(ad::Graph<double>&, ad::Var<double>)>;

/// Central finite differences of f at x against reverse-mode gradients.
/// f must return a scalar; it is re-evaluated at x +/- step per element.
GradCheckReport grad_check(const ScalarFn& f, const Tensor<double>& x,
                           double step = 1e-5);

using LossFn = std::function<ad::Var<double>(ad::Graph<double>&)>;

/// Same check over every unfrozen parameter element of `params`
/// (optionally only names starting with `prefix`). At most `max_per_param`
/// elements are probed per tensor, evenly spaced, to bound the cost.
GradCheckReport grad_check_params(ad::ParameterStore<double>& params,
                                  const LossFn& loss, double step = 1e-5,
                                  const std::string& prefix = "",
                                  std::size_t max_per_param = 0);

}  // namespace molf
