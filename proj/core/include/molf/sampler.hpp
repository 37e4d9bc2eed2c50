// Copyright 2026 The MoLF Authors
// SPDX-License-Identifier: Apache-2.0

// Guided Euler sampling from Gaussian noise.

#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <vector>

#include "molf/flow.hpp"

namespace molf {

/// v_u + w (v_c - v_u); w = 1 and w = 0 return the operands unchanged.
template <class T>
Tensor<T> cfg_velocity(const Tensor<T>& v_cond, const Tensor<T>& v_uncond,
                       double w);

template <class T>
struct TrajectoryState {
  double t = 0.0;
  Tensor<T> z;
};
template <class T>
using Trajectory = std::vector<TrajectoryState<T>>;

template <class T>
using VelocityFn = std::function<Tensor<T>(const Tensor<T>& z, double t)>;

/// Uniform steps of 1/steps: z <- z + dt * v(z, t). A non-finite velocity
/// raises NumericError naming t.
template <class T>
Tensor<T> euler_integrate(const Tensor<T>& z0, const VelocityFn<T>& v,
                          std::size_t steps, Trajectory<T>* trajectory = nullptr);

/// Standard-normal rows keyed by (seed, spot id), independent of batch order.
Tensor<float> spot_noise(std::uint64_t seed,
                         const std::vector<std::size_t>& spot_ids,
                         std::size_t dim);

struct SampleRequest {
  VelocityBatch<float> condition;  // z_t and t are filled by the sampler
  std::vector<std::size_t> spot_ids;
  double w = 1.0;
  std::size_t steps = 1;
  std::uint64_t seed = 0;
  bool keep_trajectory = false;
};

struct SampleResult {
  Tensor<float> latents;     // [B, L]
  Tensor<float> expression;  // [B, G]; empty without a decoder
  Trajectory<float> trajectory;
  std::size_t velocity_calls = 0;  // network forward passes
};

/// The null pass is skipped when w == 1.
SampleResult generate(const SampleRequest& request, const FlowModel& model,
                      const VaeModel<float>* vae);

/// generate() over every row of a dataset, one request per chunk of at most
/// `chunk_cap` spots of a single slide. Spot ids are dataset row indices.
SampleResult generate_dataset(const FlowDataset& data, const FlowModel& model,
                              const VaeModel<float>* vae, double w,
                              std::size_t steps, std::uint64_t seed,
                              std::size_t chunk_cap = 1024,
                              bool keep_trajectory = false);

/// CSV rows "spot,t,z0,z1,..." for every state of every spot.
void write_trajectory_csv(std::ostream& os, const Trajectory<float>& trajectory,
                          const std::vector<std::size_t>& spot_ids);

}  // namespace molf
