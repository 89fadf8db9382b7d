// Copyright 2026 The ICM-SR Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <torch/nn/module.h>
#include <torch/nn/modules/container/modulelist.h>
#include <torch/nn/modules/container/sequential.h>
#include <torch/nn/modules/conv.h>
#include <torch/nn/modules/embedding.h>
#include <torch/nn/modules/linear.h>
#include <torch/nn/modules/normalization.h>

#include "icm/conditioning.hpp"
#include "icm/schedule.hpp"

namespace icm {

/// What the denoiser's network head regresses. Either way the public
/// forward returns a noise prediction.
enum class Prediction {
    Eps,  // head output is eps directly
    V,    // head output is v = a_t eps - b_t z0; eps = a_t v + b_t z_t
};

std::string to_string(Prediction p);
Prediction prediction_from_string(const std::string& name);

struct DenoiserConfig {
    int channels = 3;
    std::vector<int> widths{16, 32, 64};  // one encoder level per entry, halving resolution
    int emb_dim = 64;
    int num_classes = 5;  // token index num_classes is the null token
    int groups = 8;
    Prediction prediction = Prediction::V;
};

/// Adapter features, one tensor per denoiser encoder level.
using FeatureStack = std::vector<torch::Tensor>;

/// Conv2d with an optional low-rank delta: y = base(x) + m * up(down(x)).
/// `down` shares the base kernel geometry with rank output channels and `up`
/// is a zero-initialized 1x1 conv, so the effective weight is
/// base + m * (up . down) with rank <= r.
class LoraConv2dImpl : public torch::nn::Module {
public:
    LoraConv2dImpl(int in_channels, int out_channels, int kernel, int stride = 1, bool bias = true);

    torch::Tensor forward(const torch::Tensor& x);

    /// Adds fresh rank-r factors and freezes the base weights.
    void attach_lora(int rank, double multiplier);
    bool has_lora() const { return !down.is_empty(); }
    double multiplier() const { return multiplier_; }
    void set_multiplier(double m) { multiplier_ = m; }

    torch::Tensor effective_weight() const;

    torch::nn::Conv2d base{nullptr};
    torch::nn::Conv2d down{nullptr};
    torch::nn::Conv2d up{nullptr};

private:
    int in_channels_;
    int kernel_;
    int stride_;
    double multiplier_ = 1.0;
};
TORCH_MODULE(LoraConv2d);

class ResBlockImpl : public torch::nn::Module {
public:
    ResBlockImpl(int in_channels, int out_channels, int emb_dim, int groups);
    torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& emb);

    torch::nn::GroupNorm norm1{nullptr}, norm2{nullptr};
    LoraConv2d conv1{nullptr}, conv2{nullptr}, skip{nullptr};
    torch::nn::Linear emb_proj{nullptr};
};
TORCH_MODULE(ResBlock);

/// Convolutional encoder-decoder noise predictor with a sinusoidal timestep
/// embedding, a learned class/null token embedding, and additive injection
/// ports after each encoder level.
class DenoiserImpl : public torch::nn::Module {
public:
    explicit DenoiserImpl(DenoiserConfig config);

    /// Raw head output (eps or v depending on the configured prediction).
    /// `t` and `token` are int64 tensors of shape [B].
    torch::Tensor forward(const torch::Tensor& zt, const torch::Tensor& t,
                          const torch::Tensor& token, const FeatureStack& features = {});

    /// Decoder output before the output head.
    torch::Tensor hidden(const torch::Tensor& zt, const torch::Tensor& t, const torch::Tensor& token,
                         const FeatureStack& features = {});
    torch::Tensor head(const torch::Tensor& hidden);

    const DenoiserConfig& config() const { return config_; }
    std::int64_t null_token() const { return config_.num_classes; }

    /// Shapes the adapter must produce for a [B, C, H, W] latent.
    std::vector<std::vector<std::int64_t>> feature_shapes(std::int64_t batch, std::int64_t height,
                                                          std::int64_t width) const;

    void attach_lora(int rank, double multiplier);
    void set_lora_multiplier(double multiplier);
    std::vector<torch::Tensor> lora_parameters();

    torch::nn::Linear time_fc1{nullptr}, time_fc2{nullptr};
    torch::nn::Embedding token_emb{nullptr};
    LoraConv2d conv_in{nullptr};
    torch::nn::ModuleList enc_blocks, downs, dec_blocks, ups;
    torch::nn::GroupNorm norm_out{nullptr};
    LoraConv2d conv_out{nullptr};

private:
    torch::Tensor embed(const torch::Tensor& t, const torch::Tensor& token, torch::ScalarType dtype);
    std::vector<LoraConv2dImpl*> lora_convs();

    DenoiserConfig config_;
};
TORCH_MODULE(Denoiser);

/// Noise prediction eps(z_t; t, token, features).
torch::Tensor denoiser_forward(Denoiser& model, const NoiseSchedule& schedule,
                               const torch::Tensor& zt, const torch::Tensor& t,
                               const torch::Tensor& token, const FeatureStack& features = {});

/// Head-space regression target for a clean latent and its noise.
torch::Tensor denoising_target(Prediction prediction, const NoiseSchedule& schedule,
                               const torch::Tensor& z0, const torch::Tensor& eps,
                               const torch::Tensor& t);

/// uncond + guidance * (cond - uncond); exact at guidance 0 and 1.
torch::Tensor cfg_combine(const torch::Tensor& cond_pred, const torch::Tensor& uncond_pred,
                          double guidance);

/// Convolutional pyramid mapping the 4-channel structural condition to one
/// feature map per denoiser encoder level. Output heads are zero-initialized.
class AdapterImpl : public torch::nn::Module {
public:
    AdapterImpl(int cond_channels, std::vector<int> widths);
    FeatureStack forward(const torch::Tensor& cond);

    torch::nn::ModuleList stages, heads;

private:
    std::vector<int> widths_;
};
TORCH_MODULE(Adapter);

/// Adapter features for a [B, 4, H, W] condition batch, each level multiplied
/// by `scale`. Scale 0 yields exact zeros.
FeatureStack encode_condition(Adapter& adapter, const torch::Tensor& cond, double scale);
FeatureStack encode_condition(Adapter& adapter, const StructuralCondition& cond, double scale);

struct GeneratorConfig {
    int scale = 4;
    int t_fix = 1000;
    int lora_rank = 4;
    double lora_multiplier = 1.0;
    int input_hidden = 16;
    // Block size of the low-pass removed from the residual (area downsample,
    // bicubic upsample); 0 keeps the residual unfiltered.
    int residual_pool = 8;
};

/// One-step super-resolution network: a clone of the teacher (frozen base,
/// trainable low-rank deltas) evaluated at the fixed timestep t_fix on the
/// bicubically upsampled LQ image passed through a trainable input adapter.
/// A zero-initialized output head predicts a residual over the bicubic
/// upsample, so the untrained generator reproduces bicubic interpolation.
/// With residual_pool > 0 the residual's low-pass image at that block size
/// is subtracted before it is added.
class GeneratorImpl : public torch::nn::Module {
public:
    GeneratorImpl(const Denoiser& source, GeneratorConfig config);

    /// Unclamped HQ latent prediction z0_hat for a [B, C, h, w] LQ batch.
    torch::Tensor forward(const torch::Tensor& lq, const torch::Tensor& token);

    std::vector<torch::Tensor> trainable_parameters();
    const GeneratorConfig& config() const { return config_; }

    Denoiser backbone{nullptr};
    torch::nn::Sequential input_adapter{nullptr};
    torch::nn::Conv2d output_head{nullptr};

private:
    GeneratorConfig config_;
};
TORCH_MODULE(Generator);

/// Generator prediction clamped to [0, 1] (decoder = identity).
torch::Tensor generator_forward(Generator& gen, const torch::Tensor& lq, const torch::Tensor& token);

/// Copies every parameter/buffer of `src` into the same-named tensor of `dst`.
/// Names present only in `dst` (e.g. low-rank factors) are left untouched.
void copy_weights(const torch::nn::Module& src, torch::nn::Module& dst);

void set_requires_grad(torch::nn::Module& module, bool requires_grad);
std::int64_t count_parameters(const torch::nn::Module& module, bool trainable_only = false);

/// Teacher clone with trainable low-rank deltas on every conv (base frozen).
Denoiser make_auxiliary(const Denoiser& teacher, int rank, double multiplier);

/// The four networks of the distillation loop.
struct ModelBundle {
    Denoiser teacher{nullptr};    // frozen
    Denoiser aux{nullptr};        // teacher + trainable low-rank deltas
    Adapter adapter{nullptr};     // frozen
    Generator generator{nullptr};

    static ModelBundle assemble(const Denoiser& teacher, const Adapter& adapter,
                                const GeneratorConfig& generator_config);
};

}  // namespace icm
