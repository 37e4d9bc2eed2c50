// Copyright 2026 The MoLF Authors
// SPDX-License-Identifier: Apache-2.0

#include "molf/optim.hpp"

#include <cmath>

namespace molf {

template <class T>
void adamw_step(AdamWSlot<T>& slot, Tensor<T>& param, const Tensor<T>& grad,
                const AdamWOptions& opt) {
  MOLF_EXPECT(param.shape() == grad.shape(),
              "adamw_step: parameter shape " + shape_to_string(param.shape()) +
                  " does not match gradient " + shape_to_string(grad.shape()));
  if (slot.m.shape() != param.shape()) {
    slot.m = Tensor<T>(param.shape());
    slot.v = Tensor<T>(param.shape());
  }
  ++slot.step;
  const double b1 = opt.beta1, b2 = opt.beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(slot.step));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(slot.step));
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i];
    const double m = b1 * slot.m[i] + (1.0 - b1) * g;
    const double v = b2 * slot.v[i] + (1.0 - b2) * g * g;
    slot.m[i] = static_cast<T>(m);
    slot.v[i] = static_cast<T>(v);
    const double mhat = m / bc1;
    const double vhat = v / bc2;
    const double p = param[i];
    param[i] = static_cast<T>(
        p - opt.lr * (mhat / (std::sqrt(vhat) + opt.eps) + opt.weight_decay * p));
  }
}

template <class T>
void AdamW<T>::step(ad::ParameterStore<T>& params) {
  ++steps_;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    if (p.frozen()) continue;
    AdamWOptions o = defaults_;
    o.lr = lr_for(p.group());
    adamw_step(slots_[p.id()], p.value(), p.grad(), o);
  }
}

template void adamw_step<float>(AdamWSlot<float>&, Tensor<float>&,
                                const Tensor<float>&, const AdamWOptions&);
template void adamw_step<double>(AdamWSlot<double>&, Tensor<double>&,
                                 const Tensor<double>&, const AdamWOptions&);
template class AdamW<float>;
template class AdamW<double>;

}  // namespace molf
