// Copyright 2026 The ICM-SR Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <torch/types.h>

#include "icm/rng.hpp"

namespace icm {

/// Discrete diffusion timestep in [1, num_steps].
struct Timestep {
    int value = 1;
    constexpr explicit Timestep(int t) : value(t) {}
    constexpr auto operator<=>(const Timestep&) const = default;
};

enum class WeightMode {
    InverseNoise,  // w(t) = 1 / (C * b_t), C = latent element count
    Constant,      // w(t) = 1
};

std::string to_string(WeightMode mode);
WeightMode weight_mode_from_string(const std::string& name);

/// Variance-preserving forward process z_t = a_t z_0 + b_t eps with the
/// regularization weighting w(t). Immutable after construction.
class NoiseSchedule {
public:
    NoiseSchedule(std::vector<double> a, std::vector<double> b, WeightMode mode,
                  std::int64_t latent_elements, double beta_start, double beta_end);

    int num_steps() const { return static_cast<int>(a_.size()); }
    double a(Timestep t) const { return a_[index(t)]; }
    double b(Timestep t) const { return b_[index(t)]; }
    double weight(Timestep t) const { return weight_[index(t)]; }

    const std::vector<double>& a_values() const { return a_; }
    const std::vector<double>& b_values() const { return b_; }
    const std::vector<double>& weight_values() const { return weight_; }

    WeightMode weight_mode() const { return mode_; }
    std::int64_t latent_elements() const { return latent_elements_; }
    double beta_start() const { return beta_start_; }
    double beta_end() const { return beta_end_; }

    /// Inclusive bounds of the regularization timestep range: [20, 980] at
    /// 1000 steps, scaled proportionally otherwise.
    int reg_t_min() const;
    int reg_t_max() const;

    /// Per-sample coefficient tensors for an int64 timestep tensor of shape
    /// [B], shaped [B, 1, 1, 1] for broadcasting against NCHW latents.
    torch::Tensor a_of(const torch::Tensor& t, torch::ScalarType dtype = torch::kFloat) const;
    torch::Tensor b_of(const torch::Tensor& t, torch::ScalarType dtype = torch::kFloat) const;
    torch::Tensor weight_of(const torch::Tensor& t, torch::ScalarType dtype = torch::kFloat) const;

    void check(Timestep t) const;

private:
    std::size_t index(Timestep t) const;
    torch::Tensor gather(const std::vector<double>& values, const torch::Tensor& t,
                         torch::ScalarType dtype) const;

    std::vector<double> a_;
    std::vector<double> b_;
    std::vector<double> weight_;
    WeightMode mode_;
    std::int64_t latent_elements_;
    double beta_start_;
    double beta_end_;
};

/// Linear-beta schedule: a_t = sqrt(prod_{s<=t}(1 - beta_s)), b_t = sqrt(1 - a_t^2).
NoiseSchedule make_linear_schedule(int num_steps, double beta_start, double beta_end,
                                   WeightMode mode = WeightMode::InverseNoise,
                                   std::int64_t latent_elements = 1);

/// a_t * z0 + b_t * eps. `t` is either a scalar Timestep or a per-sample
/// int64 tensor of shape [B].
torch::Tensor perturb(const NoiseSchedule& schedule, const torch::Tensor& z0, Timestep t,
                      const torch::Tensor& eps);
torch::Tensor perturb(const NoiseSchedule& schedule, const torch::Tensor& z0,
                      const torch::Tensor& t, const torch::Tensor& eps);

/// (z_t - b_t * eps_pred) / a_t; throws NumericalDomainError when a_t < 1e-8.
torch::Tensor predict_x0(const NoiseSchedule& schedule, const torch::Tensor& zt, Timestep t,
                         const torch::Tensor& eps_pred);
torch::Tensor predict_x0(const NoiseSchedule& schedule, const torch::Tensor& zt,
                         const torch::Tensor& t, const torch::Tensor& eps_pred);

/// Uniform integer in [reg_t_min, reg_t_max].
Timestep sample_reg_timestep(const NoiseSchedule& schedule, Rng& rng);

/// One regularization timestep per sample, as an int64 tensor of shape [batch].
torch::Tensor sample_reg_timesteps(const NoiseSchedule& schedule, Rng& rng, std::int64_t batch);

}  // namespace icm
