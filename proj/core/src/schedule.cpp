// Copyright 2026 The ICM-SR Authors
// SPDX-License-Identifier: Apache-2.0

#include "icm/schedule.hpp"

#include <cmath>

#include <torch/torch.h>

#include "icm/errors.hpp"

namespace icm {

std::string to_string(WeightMode mode) {
    switch (mode) {
        case WeightMode::InverseNoise: return "inverse_noise";
        case WeightMode::Constant: return "constant";
    }
    return "unknown";
}

WeightMode weight_mode_from_string(const std::string& name) {
    if (name == "inverse_noise") return WeightMode::InverseNoise;
    if (name == "constant") return WeightMode::Constant;
    throw ParameterError("unknown weight mode '" + name + "' (expected inverse_noise|constant)");
}

NoiseSchedule::NoiseSchedule(std::vector<double> a, std::vector<double> b, WeightMode mode,
                             std::int64_t latent_elements, double beta_start, double beta_end)
    : a_(std::move(a)),
      b_(std::move(b)),
      mode_(mode),
      latent_elements_(latent_elements),
      beta_start_(beta_start),
      beta_end_(beta_end) {
    if (a_.size() != b_.size() || a_.size() < 2) {
        throw ParameterError("schedule needs matching a/b vectors with at least 2 steps");
    }
    if (latent_elements_ < 1) throw ParameterError("latent_elements must be >= 1");
    weight_.resize(a_.size());
    for (std::size_t i = 0; i < a_.size(); ++i) {
        weight_[i] = mode_ == WeightMode::Constant
                         ? 1.0
                         : 1.0 / (static_cast<double>(latent_elements_) * b_[i]);
    }
}

std::size_t NoiseSchedule::index(Timestep t) const {
    check(t);
    return static_cast<std::size_t>(t.value - 1);
}

void NoiseSchedule::check(Timestep t) const {
    if (t.value < 1 || t.value > num_steps()) {
        throw ParameterError("timestep " + std::to_string(t.value) + " outside [1, " +
                             std::to_string(num_steps()) + "]");
    }
}

int NoiseSchedule::reg_t_min() const {
    return std::max(1, static_cast<int>(std::lround(20.0 * num_steps() / 1000.0)));
}

int NoiseSchedule::reg_t_max() const {
    return std::min(num_steps(), static_cast<int>(std::lround(980.0 * num_steps() / 1000.0)));
}

torch::Tensor NoiseSchedule::gather(const std::vector<double>& values, const torch::Tensor& t,
                                    torch::ScalarType dtype) const {
    auto idx = t.to(torch::kLong).reshape({-1}).contiguous();
    auto lo = idx.min().item<std::int64_t>();
    auto hi = idx.max().item<std::int64_t>();
    if (lo < 1 || hi > num_steps()) {
        throw ParameterError("timestep tensor outside [1, " + std::to_string(num_steps()) + "]");
    }
    auto table = torch::from_blob(const_cast<double*>(values.data()),
                                  {static_cast<std::int64_t>(values.size())}, torch::kDouble);
    return table.index_select(0, idx - 1).to(dtype).view({-1, 1, 1, 1});
}

torch::Tensor NoiseSchedule::a_of(const torch::Tensor& t, torch::ScalarType dtype) const {
    return gather(a_, t, dtype);
}

torch::Tensor NoiseSchedule::b_of(const torch::Tensor& t, torch::ScalarType dtype) const {
    return gather(b_, t, dtype);
}

torch::Tensor NoiseSchedule::weight_of(const torch::Tensor& t, torch::ScalarType dtype) const {
    return gather(weight_, t, dtype);
}

NoiseSchedule make_linear_schedule(int num_steps, double beta_start, double beta_end,
                                   WeightMode mode, std::int64_t latent_elements) {
    if (num_steps < 2) throw ParameterError("num_steps must be >= 2");
    if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0)) {
        throw ParameterError("betas must satisfy 0 < beta_start <= beta_end < 1");
    }
    std::vector<double> a(num_steps);
    std::vector<double> b(num_steps);
    // Accumulate log(1 - beta) so the product stays accurate at large t.
    double log_alpha_bar = 0.0;
    for (int s = 0; s < num_steps; ++s) {
        const double beta =
            beta_start + (beta_end - beta_start) * static_cast<double>(s) / (num_steps - 1);
        log_alpha_bar += std::log1p(-beta);
        const double alpha_bar = std::exp(log_alpha_bar);
        a[s] = std::sqrt(alpha_bar);
        b[s] = std::sqrt(-std::expm1(log_alpha_bar));
    }
    return NoiseSchedule(std::move(a), std::move(b), mode, latent_elements, beta_start, beta_end);
}

namespace {

void require_same_shape(const torch::Tensor& x, const torch::Tensor& y, const char* what) {
    if (x.sizes() != y.sizes()) throw ShapeError(std::string(what) + ": shape mismatch");
}

torch::Tensor per_sample(const torch::Tensor& coeff, const torch::Tensor& like) {
    // coeff is [B,1,1,1]; reshape to broadcast against any rank >= 1 tensor.
    std::vector<std::int64_t> shape(static_cast<std::size_t>(like.dim()), 1);
    shape[0] = coeff.size(0);
    return coeff.view(shape);
}

}  // namespace

torch::Tensor perturb(const NoiseSchedule& schedule, const torch::Tensor& z0, Timestep t,
                      const torch::Tensor& eps) {
    require_same_shape(z0, eps, "perturb");
    return schedule.a(t) * z0 + schedule.b(t) * eps;
}

torch::Tensor perturb(const NoiseSchedule& schedule, const torch::Tensor& z0,
                      const torch::Tensor& t, const torch::Tensor& eps) {
    require_same_shape(z0, eps, "perturb");
    if (t.numel() != z0.size(0)) throw ShapeError("perturb: one timestep per sample required");
    auto a = per_sample(schedule.a_of(t, z0.scalar_type()), z0);
    auto b = per_sample(schedule.b_of(t, z0.scalar_type()), z0);
    return a * z0 + b * eps;
}

torch::Tensor predict_x0(const NoiseSchedule& schedule, const torch::Tensor& zt, Timestep t,
                         const torch::Tensor& eps_pred) {
    require_same_shape(zt, eps_pred, "predict_x0");
    const double a = schedule.a(t);
    if (a < 1e-8) throw NumericalDomainError("predict_x0: a_t below 1e-8");
    return (zt - schedule.b(t) * eps_pred) / a;
}

torch::Tensor predict_x0(const NoiseSchedule& schedule, const torch::Tensor& zt,
                         const torch::Tensor& t, const torch::Tensor& eps_pred) {
    require_same_shape(zt, eps_pred, "predict_x0");
    if (t.numel() != zt.size(0)) throw ShapeError("predict_x0: one timestep per sample required");
    auto a = schedule.a_of(t, torch::kDouble);
    if (a.min().item<double>() < 1e-8) throw NumericalDomainError("predict_x0: a_t below 1e-8");
    auto a_s = per_sample(a.to(zt.scalar_type()), zt);
    auto b_s = per_sample(schedule.b_of(t, zt.scalar_type()), zt);
    return (zt - b_s * eps_pred) / a_s;
}

Timestep sample_reg_timestep(const NoiseSchedule& schedule, Rng& rng) {
    return Timestep(static_cast<int>(rng.uniform_int(schedule.reg_t_min(), schedule.reg_t_max())));
}

torch::Tensor sample_reg_timesteps(const NoiseSchedule& schedule, Rng& rng, std::int64_t batch) {
    auto t = torch::empty({batch}, torch::kLong);
    auto acc = t.accessor<std::int64_t, 1>();
    for (std::int64_t i = 0; i < batch; ++i) acc[i] = sample_reg_timestep(schedule, rng).value;
    return t;
}

}  // namespace icm
