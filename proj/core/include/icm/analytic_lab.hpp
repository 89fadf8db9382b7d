// Copyright 2026 The ICM-SR Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include <torch/types.h>

#include "icm/rng.hpp"
#include "icm/schedule.hpp"

namespace icm::lab {

/// Isotropic Gaussian N(mean, variance * I) over latents. variance == 0 is
/// the deterministic case z0 | c = mean.
struct GaussianSpec {
    torch::Tensor mean;  // double, any shape
    double variance = 0.0;
    std::string condition_label;
};

/// Optimal noise prediction for data ~ spec under z_t = a z0 + b eps:
/// b (z_t - a mean) / (a^2 variance + b^2).
torch::Tensor analytic_eps(const GaussianSpec& spec, const torch::Tensor& zt, double a, double b);
torch::Tensor analytic_eps(const GaussianSpec& spec, const torch::Tensor& zt, Timestep t,
                           const NoiseSchedule& schedule);

struct Lemma1Sample {
    int t = 0;
    double deviation = 0.0;  // max_i |eps*_i - eps_i|
};

struct Lemma1Report {
    double max_deviation = 0.0;
    std::vector<Lemma1Sample> samples;

    /// Max deviation per distinct timestep, ascending in t.
    std::vector<Lemma1Sample> per_timestep() const;
};

/// Draws (t, eps), forms z_t from the deterministic spec, and measures how
/// far the analytic noise prediction is from the drawn eps. Requires
/// spec.variance == 0 for the exact identity; other variances are measured
/// as-is.
Lemma1Report verify_lemma1(const GaussianSpec& spec, int trials, const NoiseSchedule& schedule,
                           Rng& rng);

/// Same, with a fresh mean ~ mean_scale * N(0, I) of length `dim` per trial.
Lemma1Report verify_lemma1_random_means(int dim, int trials, double mean_scale,
                                        const NoiseSchedule& schedule, Rng& rng);

/// grad_theta KL(N(theta, I) || N(target.mean, I)) = theta - mean.
torch::Tensor closed_form_kl_grad(const torch::Tensor& theta, const GaussianSpec& target);

struct McGradient {
    torch::Tensor mean;       // Monte-Carlo estimate
    torch::Tensor std_error;  // elementwise standard error of the estimate
};

/// Monte-Carlo VSD gradient for a generator z0 = theta + sqrt(gen_variance) xi
/// against `target`, with both scores analytic:
/// E[w(t) a_t (eps_real*(z_t) - eps_fake*(z_t))], t ~ U(reg range).
/// gen_variance == 0 collapses eps_fake* to the drawn eps (the SDS form).
McGradient mc_vsd_grad(const torch::Tensor& theta, const GaussianSpec& target,
                       const NoiseSchedule& schedule, int num_samples, Rng& rng,
                       double gen_variance = 1.0);

double cosine_similarity(const torch::Tensor& x, const torch::Tensor& y);

}  // namespace icm::lab
