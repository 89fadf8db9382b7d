// Copyright 2026 The ICM-SR Authors
// SPDX-License-Identifier: Apache-2.0

#include "icm/losses.hpp"

#include <cmath>

#include <torch/torch.h>

#include "icm/errors.hpp"
#include "icm/rng.hpp"

namespace icm {

namespace {

struct LayerSpec {
    int out;
    int stride;
};

// 8352 parameters for RGB input.
constexpr LayerSpec kProxyLayers[] = {{8, 1}, {16, 2}, {16, 2}, {32, 2}};

torch::Tensor unit_normalize(const torch::Tensor& f) {
    return f / torch::sqrt(f.pow(2).sum(1, true) + 1e-10);
}

}  // namespace

PerceptualProxyImpl::PerceptualProxyImpl(std::uint64_t seed, int channels) : seed_(seed) {
    Rng rng(seed);
    auto& gen = rng.torch_generator();
    int in = channels;
    for (const auto& spec : kProxyLayers) {
        torch::nn::Conv2d conv(torch::nn::Conv2dOptions(in, spec.out, 3).stride(spec.stride).padding(1));
        torch::NoGradGuard guard;
        const double std = std::sqrt(2.0 / (in * 9));
        conv->weight.copy_(torch::randn(conv->weight.sizes(), gen, torch::kFloat) * std);
        conv->bias.copy_(torch::randn(conv->bias.sizes(), gen, torch::kFloat) * 0.1);
        layers->push_back(conv);
        in = spec.out;
    }
    register_module("layers", layers);
    for (auto& p : parameters()) p.set_requires_grad(false);
}

std::vector<torch::Tensor> PerceptualProxyImpl::features(const torch::Tensor& x) {
    std::vector<torch::Tensor> out;
    auto h = x * 2.0 - 1.0;
    for (const auto& layer : *layers) {
        h = torch::tanh(layer->as<torch::nn::Conv2d>()->forward(h));
        out.push_back(h);
    }
    return out;
}

torch::Tensor PerceptualProxyImpl::distance(const torch::Tensor& a, const torch::Tensor& b) {
    if (a.sizes() != b.sizes() || a.dim() != 4) throw ShapeError("perceptual distance: shape mismatch");
    auto fa = features(a);
    auto fb = features(b);
    auto d = torch::zeros({a.size(0)}, a.options());
    for (std::size_t l = 0; l < fa.size(); ++l) {
        auto diff = unit_normalize(fa[l]) - unit_normalize(fb[l]);
        d = d + diff.pow(2).sum(1).mean({1, 2});
    }
    return d;
}

ReconLoss recon_loss(const torch::Tensor& pred, const torch::Tensor& hq, PerceptualProxy& proxy,
                     double lambda_rec, double lambda_perceptual) {
    if (pred.sizes() != hq.sizes()) throw ShapeError("recon_loss: shape mismatch");
    ReconLoss loss;
    loss.l2 = (pred - hq).pow(2).mean();
    loss.perceptual = lambda_perceptual != 0.0 ? proxy->distance(pred, hq).mean()
                                               : torch::zeros({}, pred.options());
    loss.total = lambda_rec * loss.l2 + lambda_perceptual * loss.perceptual;
    return loss;
}

torch::Tensor denoising_loss(Denoiser& model, const NoiseSchedule& schedule, const torch::Tensor& z0,
                             const torch::Tensor& t, const torch::Tensor& eps,
                             const torch::Tensor& token, const FeatureStack& features) {
    auto zt = perturb(schedule, z0, t, eps);
    auto target = denoising_target(model->config().prediction, schedule, z0, eps, t);
    return (model->forward(zt, t, token, features) - target).pow(2).mean();
}

torch::Tensor eps_mse(Denoiser& model, const NoiseSchedule& schedule, const torch::Tensor& z0,
                      const torch::Tensor& t, const torch::Tensor& eps, const torch::Tensor& token,
                      const FeatureStack& features) {
    auto zt = perturb(schedule, z0, t, eps);
    return (denoiser_forward(model, schedule, zt, t, token, features) - eps).pow(2).mean();
}

}  // namespace icm
