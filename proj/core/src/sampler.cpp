// Copyright 2026 The MoLF Authors
// SPDX-License-Identifier: Apache-2.0

#include "molf/sampler.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>

namespace molf {

template <class T>
Tensor<T> cfg_velocity(const Tensor<T>& v_cond, const Tensor<T>& v_uncond,
                       double w) {
  MOLF_EXPECT(v_cond.shape() == v_uncond.shape(),
              "cfg_velocity: shape mismatch");
  MOLF_EXPECT(w >= 0.0, "cfg_velocity: guidance scale must be >= 0");
  if (w == 1.0) return v_cond;
  if (w == 0.0) return v_uncond;
  Tensor<T> out(v_cond.shape());
  const T ww = static_cast<T>(w);
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = v_uncond[i] + ww * (v_cond[i] - v_uncond[i]);
  return out;
}

template <class T>
Tensor<T> euler_integrate(const Tensor<T>& z0, const VelocityFn<T>& v,
                          std::size_t steps, Trajectory<T>* trajectory) {
  MOLF_EXPECT(steps >= 1, "euler_integrate: steps must be >= 1");
  Tensor<T> z = z0;
  if (trajectory) trajectory->push_back({0.0, z});
  const double dt = 1.0 / static_cast<double>(steps);
  for (std::size_t i = 0; i < steps; ++i) {
    const double t = static_cast<double>(i) / static_cast<double>(steps);
    const Tensor<T> vel = v(z, t);
    MOLF_EXPECT(vel.shape() == z.shape(), "euler_integrate: velocity shape mismatch");
    if (!vel.all_finite())
      throw NumericError("euler_integrate: non-finite velocity at t=" +
                         std::to_string(t));
    const T h = static_cast<T>(dt);
    for (std::size_t j = 0; j < z.size(); ++j) z[j] += h * vel[j];
    if (trajectory)
      trajectory->push_back(
          {static_cast<double>(i + 1) / static_cast<double>(steps), z});
  }
  return z;
}

Tensor<float> spot_noise(std::uint64_t seed,
                         const std::vector<std::size_t>& spot_ids,
                         std::size_t dim) {
  Tensor<float> z(Shape{spot_ids.size(), dim});
  for (std::size_t i = 0; i < spot_ids.size(); ++i) {
    Rng rng(seed, spot_ids[i]);
    for (std::size_t j = 0; j < dim; ++j)
      z.at(i, j) = static_cast<float>(rng.normal());
  }
  return z;
}

SampleResult generate(const SampleRequest& request, const FlowModel& model,
                      const VaeModel<float>* vae) {
  const std::size_t b = request.spot_ids.size();
  MOLF_EXPECT(b > 0, "generate: no spots requested");
  MOLF_EXPECT(request.w >= 0.0, "generate: guidance scale must be >= 0");
  SampleResult res;
  VelocityBatch<float> cond = request.condition;
  if (cond.is_null.empty()) cond.is_null.assign(b, 0);
  VelocityBatch<float> uncond = cond;
  std::fill(uncond.is_null.begin(), uncond.is_null.end(), 1);

  auto eval = [&](VelocityBatch<float>& batch, const Tensor<float>& z, double t) {
    batch.z_t = z;
    batch.t.assign(b, t);
    ad::Graph<float> g(false);
    ++res.velocity_calls;
    return model.net.forward(g, batch).velocity.value();
  };
  VelocityFn<float> field = [&](const Tensor<float>& z, double t) {
    Tensor<float> vc = eval(cond, z, t);
    if (request.w == 1.0) return vc;
    return cfg_velocity(vc, eval(uncond, z, t), request.w);
  };
  const Tensor<float> z0 =
      spot_noise(request.seed, request.spot_ids, model.config.latent_dim);
  res.latents = euler_integrate(z0, field, request.steps,
                                request.keep_trajectory ? &res.trajectory : nullptr);
  if (vae) res.expression = decode_rows(*vae, res.latents);
  return res;
}

SampleResult generate_dataset(const FlowDataset& data, const FlowModel& model,
                              const VaeModel<float>* vae, double w,
                              std::size_t steps, std::uint64_t seed,
                              std::size_t chunk_cap, bool keep_trajectory) {
  MOLF_EXPECT(data.rows() > 0, "generate_dataset: empty dataset");
  const std::size_t n = data.rows(), l = model.config.latent_dim;
  SampleResult all;
  all.latents = Tensor<float>(Shape{n, l});
  if (vae) all.expression = Tensor<float>(Shape{n, vae->config.gene_dim});
  if (keep_trajectory)
    for (std::size_t i = 0; i <= steps; ++i)
      all.trajectory.push_back(
          {static_cast<double>(i) / static_cast<double>(steps),
           Tensor<float>(Shape{n, l})});
  for (const auto& [begin, len] : dataset_chunks(data, chunk_cap)) {
    SampleRequest req;
    req.spot_ids.resize(len);
    std::iota(req.spot_ids.begin(), req.spot_ids.end(), begin);
    req.condition = batch_for_rows(data, req.spot_ids, model.config.spatial);
    req.w = w;
    req.steps = steps;
    req.seed = seed;
    req.keep_trajectory = keep_trajectory;
    auto r = generate(req, model, vae);
    all.velocity_calls += r.velocity_calls;
    std::copy_n(r.latents.data(), len * l, all.latents.data() + begin * l);
    if (vae) {
      const std::size_t gd = vae->config.gene_dim;
      std::copy_n(r.expression.data(), len * gd, all.expression.data() + begin * gd);
    }
    for (std::size_t i = 0; i < r.trajectory.size(); ++i)
      std::copy_n(r.trajectory[i].z.data(), len * l,
                  all.trajectory[i].z.data() + begin * l);
  }
  return all;
}

void write_trajectory_csv(std::ostream& os, const Trajectory<float>& trajectory,
                          const std::vector<std::size_t>& spot_ids) {
  if (trajectory.empty()) return;
  const std::size_t l = trajectory.front().z.cols();
  os << "spot,t";
  for (std::size_t j = 0; j < l; ++j) os << ",z" << j;
  os << '\n';
  char buf[64];
  for (std::size_t s = 0; s < spot_ids.size(); ++s)
    for (const auto& st : trajectory) {
      std::snprintf(buf, sizeof buf, "%zu,%.9g", spot_ids[s], st.t);
      os << buf;
      for (std::size_t j = 0; j < l; ++j) {
        std::snprintf(buf, sizeof buf, ",%.9g", st.z.at(s, j));
        os << buf;
      }
      os << '\n';
    }
}

template Tensor<float> cfg_velocity<float>(const Tensor<float>&,
                                           const Tensor<float>&, double);
template Tensor<double> cfg_velocity<double>(const Tensor<double>&,
                                             const Tensor<double>&, double);
template Tensor<float> euler_integrate<float>(const Tensor<float>&,
                                              const VelocityFn<float>&,
                                              std::size_t, Trajectory<float>*);
template Tensor<double> euler_integrate<double>(const Tensor<double>&,
                                                const VelocityFn<double>&,
                                                std::size_t, Trajectory<double>*);

}  // namespace molf
