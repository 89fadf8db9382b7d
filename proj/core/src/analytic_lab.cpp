// Copyright 2026 The ICM-SR Authors
// SPDX-License-Identifier: Apache-2.0

#include "icm/analytic_lab.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include <torch/torch.h>

#include "icm/errors.hpp"

namespace icm::lab {

torch::Tensor analytic_eps(const GaussianSpec& spec, const torch::Tensor& zt, double a, double b) {
    if (spec.variance < 0.0) throw ParameterError("GaussianSpec variance must be >= 0");
    if (spec.mean.sizes() != zt.sizes()) throw ShapeError("analytic_eps: mean/zt shape mismatch");
    const double denom = a * a * spec.variance + b * b;
    if (denom < 1e-12) throw NumericalDomainError("analytic_eps: denominator below 1e-12");
    if (spec.variance == 0.0) return (zt - a * spec.mean) / b;
    return b * (zt - a * spec.mean) / denom;
}

torch::Tensor analytic_eps(const GaussianSpec& spec, const torch::Tensor& zt, Timestep t,
                           const NoiseSchedule& schedule) {
    return analytic_eps(spec, zt, schedule.a(t), schedule.b(t));
}

std::vector<Lemma1Sample> Lemma1Report::per_timestep() const {
    std::map<int, double> worst;
    for (const auto& s : samples) {
        auto [it, inserted] = worst.emplace(s.t, s.deviation);
        if (!inserted) it->second = std::max(it->second, s.deviation);
    }
    std::vector<Lemma1Sample> out;
    out.reserve(worst.size());
    for (const auto& [t, dev] : worst) out.push_back({t, dev});
    return out;
}

namespace {

Lemma1Sample lemma1_trial(const GaussianSpec& spec, const NoiseSchedule& schedule, Rng& rng) {
    const Timestep t(static_cast<int>(rng.uniform_int(1, schedule.num_steps())));
    auto eps = torch::randn(spec.mean.sizes(), rng.torch_generator(), torch::kDouble);
    auto zt = schedule.a(t) * spec.mean + schedule.b(t) * eps;
    auto pred = analytic_eps(spec, zt, t, schedule);
    return {t.value, (pred - eps).abs().max().item<double>()};
}

}  // namespace

Lemma1Report verify_lemma1(const GaussianSpec& spec, int trials, const NoiseSchedule& schedule,
                           Rng& rng) {
    if (trials < 1) throw ParameterError("verify_lemma1: trials must be >= 1");
    Lemma1Report report;
    report.samples.reserve(static_cast<std::size_t>(trials));
    for (int i = 0; i < trials; ++i) {
        auto s = lemma1_trial(spec, schedule, rng);
        report.max_deviation = std::max(report.max_deviation, s.deviation);
        report.samples.push_back(s);
    }
    return report;
}

Lemma1Report verify_lemma1_random_means(int dim, int trials, double mean_scale,
                                        const NoiseSchedule& schedule, Rng& rng) {
    if (trials < 1) throw ParameterError("verify_lemma1: trials must be >= 1");
    if (dim < 1) throw ParameterError("verify_lemma1: dim must be >= 1");
    Lemma1Report report;
    report.samples.reserve(static_cast<std::size_t>(trials));
    for (int i = 0; i < trials; ++i) {
        GaussianSpec spec{mean_scale * torch::randn({dim}, rng.torch_generator(), torch::kDouble),
                          0.0, "random"};
        auto s = lemma1_trial(spec, schedule, rng);
        report.max_deviation = std::max(report.max_deviation, s.deviation);
        report.samples.push_back(s);
    }
    return report;
}

torch::Tensor closed_form_kl_grad(const torch::Tensor& theta, const GaussianSpec& target) {
    if (theta.sizes() != target.mean.sizes()) throw ShapeError("closed_form_kl_grad: shape mismatch");
    return theta - target.mean;
}

McGradient mc_vsd_grad(const torch::Tensor& theta, const GaussianSpec& target,
                       const NoiseSchedule& schedule, int num_samples, Rng& rng,
                       double gen_variance) {
    if (num_samples < 1) throw ParameterError("mc_vsd_grad: num_samples must be >= 1");
    if (theta.sizes() != target.mean.sizes()) throw ShapeError("mc_vsd_grad: shape mismatch");
    const GaussianSpec generator{theta, gen_variance, "generator"};
    auto sum = torch::zeros_like(theta, torch::kDouble);
    auto sum_sq = torch::zeros_like(theta, torch::kDouble);
    const double gen_std = std::sqrt(gen_variance);
    for (int i = 0; i < num_samples; ++i) {
        const Timestep t = sample_reg_timestep(schedule, rng);
        const double a = schedule.a(t);
        const double b = schedule.b(t);
        auto xi = torch::randn(theta.sizes(), rng.torch_generator(), torch::kDouble);
        auto eps = torch::randn(theta.sizes(), rng.torch_generator(), torch::kDouble);
        auto zt = a * (theta + gen_std * xi) + b * eps;
        auto fake = analytic_eps(generator, zt, a, b);
        auto real = analytic_eps(target, zt, a, b);
        // dz_t / dtheta = a_t I
        auto g = schedule.weight(t) * a * (real - fake);
        sum += g;
        sum_sq += g * g;
    }
    const double n = num_samples;
    auto mean = sum / n;
    auto var = (sum_sq / n - mean * mean).clamp_min(0.0);
    return {mean, (var / n).sqrt()};
}

double cosine_similarity(const torch::Tensor& x, const torch::Tensor& y) {
    auto xd = x.to(torch::kDouble).reshape({-1});
    auto yd = y.to(torch::kDouble).reshape({-1});
    const double denom = xd.norm().item<double>() * yd.norm().item<double>();
    if (denom == 0.0) return 0.0;
    return xd.dot(yd).item<double>() / denom;
}

}  // namespace icm::lab
