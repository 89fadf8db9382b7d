// Copyright 2026 The ICM-SR Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <vector>

#include <torch/nn/module.h>
#include <torch/nn/modules/container/modulelist.h>

#include "icm/models.hpp"
#include "icm/schedule.hpp"

namespace icm {

/// Frozen, randomly initialized 4-layer conv feature extractor used as a
/// feature-space image distance. Not LPIPS: the weights carry no learned
/// semantics, only a fixed seeded random projection.
class PerceptualProxyImpl : public torch::nn::Module {
public:
    explicit PerceptualProxyImpl(std::uint64_t seed = 0x5EEDULL, int channels = 3);

    /// Per-sample distance [B] between two [B, C, H, W] images in [0, 1]:
    /// sum over layers of the spatial mean of squared differences of
    /// unit-normalized channel vectors.
    torch::Tensor distance(const torch::Tensor& a, const torch::Tensor& b);
    std::vector<torch::Tensor> features(const torch::Tensor& x);

    std::uint64_t seed() const { return seed_; }
    torch::nn::ModuleList layers;

private:
    std::uint64_t seed_;
};
TORCH_MODULE(PerceptualProxy);

struct ReconLoss {
    torch::Tensor total;
    torch::Tensor l2;
    torch::Tensor perceptual;
};

/// lambda_rec * MSE + lambda_perceptual * mean proxy distance.
ReconLoss recon_loss(const torch::Tensor& pred, const torch::Tensor& hq, PerceptualProxy& proxy,
                     double lambda_rec = 1.0, double lambda_perceptual = 1.0);

/// Mean squared error between the denoiser head and its regression target
/// for z_t = a_t z0 + b_t eps.
torch::Tensor denoising_loss(Denoiser& model, const NoiseSchedule& schedule, const torch::Tensor& z0,
                             const torch::Tensor& t, const torch::Tensor& eps,
                             const torch::Tensor& token, const FeatureStack& features = {});

/// Mean squared error ||eps_hat(z_t) - eps||^2 in noise space.
torch::Tensor eps_mse(Denoiser& model, const NoiseSchedule& schedule, const torch::Tensor& z0,
                      const torch::Tensor& t, const torch::Tensor& eps, const torch::Tensor& token,
                      const FeatureStack& features = {});

}  // namespace icm
