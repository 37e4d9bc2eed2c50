// Copyright 2026 The MoLF Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "molf/autodiff.hpp"

namespace molf {

struct AdamWOptions {
  double lr = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// Moments and step count for one parameter tensor.
template <class T>
struct AdamWSlot {
  Tensor<T> m;
  Tensor<T> v;
  std::uint64_t step = 0;
};

/// One decoupled-weight-decay Adam update of `param` in place:
///   p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + wd * p)
template <class T>
void adamw_step(AdamWSlot<T>& slot, Tensor<T>& param, const Tensor<T>& grad,
                const AdamWOptions& opt);

/// AdamW over a ParameterStore with per-group learning rates. Frozen
/// parameters are skipped entirely.
template <class T>
class AdamW {
 public:
  explicit AdamW(AdamWOptions defaults) : defaults_(defaults) {}

  /// Learning rate override for parameters whose group() equals `group`.
  void set_group_lr(const std::string& group, double lr) {
    group_lr_[group] = lr;
  }
  double lr_for(const std::string& group) const {
    auto it = group_lr_.find(group);
    return it == group_lr_.end() ? defaults_.lr : it->second;
  }

  void step(ad::ParameterStore<T>& params);

  std::uint64_t steps() const { return steps_; }
  const AdamWOptions& defaults() const { return defaults_; }

 private:
  AdamWOptions defaults_;
  std::map<std::string, double> group_lr_;
  std::map<std::size_t, AdamWSlot<T>> slots_;
  std::uint64_t steps_ = 0;
};

}  // namespace molf
