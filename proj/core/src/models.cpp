// Copyright 2026 The ICM-SR Authors
// SPDX-License-Identifier: Apache-2.0

#include "icm/models.hpp"

#include <cmath>
#include <numeric>

#include <torch/torch.h>

#include "icm/errors.hpp"
#include "icm/image.hpp"

namespace icm {

namespace F = torch::nn::functional;

std::string to_string(Prediction p) { return p == Prediction::V ? "v" : "eps"; }

Prediction prediction_from_string(const std::string& name) {
    if (name == "v") return Prediction::V;
    if (name == "eps") return Prediction::Eps;
    throw ParameterError("unknown prediction '" + name + "' (expected eps|v)");
}

// ---------------------------------------------------------------- LoraConv2d

LoraConv2dImpl::LoraConv2dImpl(int in_channels, int out_channels, int kernel, int stride, bool bias)
    : in_channels_(in_channels), kernel_(kernel), stride_(stride) {
    base = register_module(
        "base", torch::nn::Conv2d(torch::nn::Conv2dOptions(in_channels, out_channels, kernel)
                                      .stride(stride)
                                      .padding(kernel / 2)
                                      .bias(bias)));
}

torch::Tensor LoraConv2dImpl::forward(const torch::Tensor& x) {
    auto y = base->forward(x);
    if (has_lora() && multiplier_ != 0.0) y = y + multiplier_ * up->forward(down->forward(x));
    return y;
}

void LoraConv2dImpl::attach_lora(int rank, double multiplier) {
    if (rank < 1) throw ParameterError("attach_lora: rank must be >= 1");
    if (has_lora()) throw ParameterError("attach_lora: low-rank factors already attached");
    const auto out_channels = base->weight.size(0);
    for (auto& p : base->parameters()) p.set_requires_grad(false);
    down = register_module(
        "lora_down", torch::nn::Conv2d(torch::nn::Conv2dOptions(in_channels_, rank, kernel_)
                                           .stride(stride_)
                                           .padding(kernel_ / 2)
                                           .bias(false)));
    up = register_module("lora_up", torch::nn::Conv2d(
                                        torch::nn::Conv2dOptions(rank, out_channels, 1).bias(false)));
    down->to(base->weight.scalar_type());
    up->to(base->weight.scalar_type());
    torch::NoGradGuard guard;
    up->weight.zero_();
    multiplier_ = multiplier;
}

torch::Tensor LoraConv2dImpl::effective_weight() const {
    auto w = base->weight.detach();
    if (!has_lora()) return w.clone();
    const auto rank = down->weight.size(0);
    auto up2 = up->weight.detach().reshape({w.size(0), rank});
    auto down2 = down->weight.detach().reshape({rank, -1});
    return w + multiplier_ * torch::matmul(up2, down2).view(w.sizes());
}

// ------------------------------------------------------------------ ResBlock

namespace {

int group_count(int groups, int channels) { return std::gcd(std::max(groups, 1), channels); }

}  // namespace

ResBlockImpl::ResBlockImpl(int in_channels, int out_channels, int emb_dim, int groups) {
    norm1 = register_module("norm1", torch::nn::GroupNorm(group_count(groups, in_channels), in_channels));
    conv1 = register_module("conv1", LoraConv2d(in_channels, out_channels, 3));
    emb_proj = register_module("emb_proj", torch::nn::Linear(emb_dim, out_channels));
    norm2 = register_module("norm2", torch::nn::GroupNorm(group_count(groups, out_channels), out_channels));
    conv2 = register_module("conv2", LoraConv2d(out_channels, out_channels, 3));
    if (in_channels != out_channels) skip = register_module("skip", LoraConv2d(in_channels, out_channels, 1));
}

torch::Tensor ResBlockImpl::forward(const torch::Tensor& x, const torch::Tensor& emb) {
    auto h = conv1->forward(F::silu(norm1->forward(x)));
    h = h + emb_proj->forward(F::silu(emb)).unsqueeze(-1).unsqueeze(-1);
    h = conv2->forward(F::silu(norm2->forward(h)));
    return (skip.is_empty() ? x : skip->forward(x)) + h;
}

// ------------------------------------------------------------------ Denoiser

DenoiserImpl::DenoiserImpl(DenoiserConfig config) : config_(std::move(config)) {
    const auto& w = config_.widths;
    if (w.empty()) throw ParameterError("Denoiser: widths must not be empty");
    if (config_.emb_dim < 2 || config_.emb_dim % 2 != 0) throw ParameterError("Denoiser: emb_dim must be even");
    const int levels = static_cast<int>(w.size());
    const int e = config_.emb_dim;

    time_fc1 = register_module("time_fc1", torch::nn::Linear(e, e));
    time_fc2 = register_module("time_fc2", torch::nn::Linear(e, e));
    token_emb = register_module("token_emb", torch::nn::Embedding(config_.num_classes + 1, e));
    conv_in = register_module("conv_in", LoraConv2d(config_.channels, w[0], 3));
    for (int l = 0; l < levels; ++l) {
        enc_blocks->push_back(ResBlock(w[l], w[l], e, config_.groups));
        if (l + 1 < levels) downs->push_back(LoraConv2d(w[l], w[l + 1], 3, 2));
    }
    for (int l = levels - 1; l >= 0; --l) {
        const int in = l == levels - 1 ? w[l] : 2 * w[l];
        dec_blocks->push_back(ResBlock(in, w[l], e, config_.groups));
        if (l > 0) ups->push_back(LoraConv2d(w[l], w[l - 1], 3));
    }
    register_module("enc_blocks", enc_blocks);
    register_module("downs", downs);
    register_module("dec_blocks", dec_blocks);
    register_module("ups", ups);
    norm_out = register_module("norm_out", torch::nn::GroupNorm(group_count(config_.groups, w[0]), w[0]));
    conv_out = register_module("conv_out", LoraConv2d(w[0], config_.channels, 3));
    torch::NoGradGuard guard;
    conv_out->base->weight.zero_();
    conv_out->base->bias.zero_();
}

torch::Tensor DenoiserImpl::embed(const torch::Tensor& t, const torch::Tensor& token,
                                  torch::ScalarType dtype) {
    const auto half = config_.emb_dim / 2;
    auto freqs = torch::exp(-std::log(10000.0) *
                            torch::arange(half, torch::TensorOptions().dtype(dtype)) / half);
    auto args = t.to(dtype).reshape({-1, 1}) * freqs.unsqueeze(0);
    auto sinus = torch::cat({torch::sin(args), torch::cos(args)}, 1);
    auto temb = time_fc2->forward(F::silu(time_fc1->forward(sinus)));
    return temb + token_emb->forward(token.to(torch::kLong).reshape({-1}));
}

torch::Tensor DenoiserImpl::hidden(const torch::Tensor& zt, const torch::Tensor& t,
                                   const torch::Tensor& token, const FeatureStack& features) {
    const auto levels = config_.widths.size();
    if (zt.dim() != 4 || zt.size(1) != config_.channels) throw ShapeError("Denoiser: expected [B, C, H, W] latent");
    const auto stride = std::int64_t{1} << (levels - 1);
    if (zt.size(2) % stride != 0 || zt.size(3) % stride != 0) {
        throw ShapeError("Denoiser: spatial size must be divisible by " + std::to_string(stride));
    }
    if (t.numel() != zt.size(0) || token.numel() != zt.size(0)) {
        throw ShapeError("Denoiser: one timestep and one token per sample required");
    }
    if (!features.empty() && features.size() != levels) {
        throw ShapeError("Denoiser: feature stack has " + std::to_string(features.size()) +
                         " levels, expected " + std::to_string(levels));
    }
    auto emb = embed(t, token, zt.scalar_type());
    auto h = conv_in->forward(zt);
    std::vector<torch::Tensor> skips;
    for (std::size_t l = 0; l < levels; ++l) {
        h = enc_blocks[l]->as<ResBlock>()->forward(h, emb);
        if (!features.empty()) {
            if (features[l].sizes() != h.sizes()) {
                throw ShapeError("Denoiser: adapter feature " + std::to_string(l) +
                                 " does not match the injection port shape");
            }
            h = h + features[l];
        }
        skips.push_back(h);
        if (l + 1 < levels) h = downs[l]->as<LoraConv2d>()->forward(h);
    }
    std::size_t dec = 0, up = 0;
    for (auto l = static_cast<std::ptrdiff_t>(levels) - 1; l >= 0; --l, ++dec) {
        if (l != static_cast<std::ptrdiff_t>(levels) - 1) h = torch::cat({h, skips[l]}, 1);
        h = dec_blocks[dec]->as<ResBlock>()->forward(h, emb);
        if (l > 0) {
            h = ups[up++]->as<LoraConv2d>()->forward(h);
            h = F::interpolate(h, F::InterpolateFuncOptions()
                                      .scale_factor(std::vector<double>{2.0, 2.0})
                                      .mode(torch::kNearest));
        }
    }
    return h;
}

torch::Tensor DenoiserImpl::head(const torch::Tensor& hidden) {
    return conv_out->forward(F::silu(norm_out->forward(hidden)));
}

torch::Tensor DenoiserImpl::forward(const torch::Tensor& zt, const torch::Tensor& t,
                                    const torch::Tensor& token, const FeatureStack& features) {
    return head(hidden(zt, t, token, features));
}

std::vector<std::vector<std::int64_t>> DenoiserImpl::feature_shapes(std::int64_t batch,
                                                                    std::int64_t height,
                                                                    std::int64_t width) const {
    std::vector<std::vector<std::int64_t>> shapes;
    for (std::size_t l = 0; l < config_.widths.size(); ++l) {
        shapes.push_back({batch, config_.widths[l], height >> l, width >> l});
    }
    return shapes;
}

std::vector<LoraConv2dImpl*> DenoiserImpl::lora_convs() {
    std::vector<LoraConv2dImpl*> out;
    for (auto& m : modules(/*include_self=*/false)) {
        if (auto* conv = dynamic_cast<LoraConv2dImpl*>(m.get())) out.push_back(conv);
    }
    return out;
}

void DenoiserImpl::attach_lora(int rank, double multiplier) {
    for (auto& p : parameters()) p.set_requires_grad(false);
    for (auto* conv : lora_convs()) conv->attach_lora(rank, multiplier);
}

void DenoiserImpl::set_lora_multiplier(double multiplier) {
    for (auto* conv : lora_convs()) conv->set_multiplier(multiplier);
}

std::vector<torch::Tensor> DenoiserImpl::lora_parameters() {
    std::vector<torch::Tensor> out;
    for (auto* conv : lora_convs()) {
        if (!conv->has_lora()) continue;
        out.push_back(conv->down->weight);
        out.push_back(conv->up->weight);
    }
    return out;
}

// ------------------------------------------------------------ free functions

torch::Tensor denoiser_forward(Denoiser& model, const NoiseSchedule& schedule,
                               const torch::Tensor& zt, const torch::Tensor& t,
                               const torch::Tensor& token, const FeatureStack& features) {
    auto raw = model->forward(zt, t, token, features);
    if (model->config().prediction == Prediction::Eps) return raw;
    auto a = schedule.a_of(t, zt.scalar_type());
    auto b = schedule.b_of(t, zt.scalar_type());
    return a * raw + b * zt;
}

torch::Tensor denoising_target(Prediction prediction, const NoiseSchedule& schedule,
                               const torch::Tensor& z0, const torch::Tensor& eps,
                               const torch::Tensor& t) {
    if (z0.sizes() != eps.sizes()) throw ShapeError("denoising_target: shape mismatch");
    if (prediction == Prediction::Eps) return eps;
    auto a = schedule.a_of(t, z0.scalar_type());
    auto b = schedule.b_of(t, z0.scalar_type());
    return a * eps - b * z0;
}

torch::Tensor cfg_combine(const torch::Tensor& cond_pred, const torch::Tensor& uncond_pred,
                          double guidance) {
    if (cond_pred.sizes() != uncond_pred.sizes()) throw ShapeError("cfg_combine: shape mismatch");
    if (guidance < 0.0) throw ParameterError("cfg_combine: guidance must be >= 0");
    if (guidance == 1.0) return cond_pred;
    if (guidance == 0.0) return uncond_pred;
    return uncond_pred + guidance * (cond_pred - uncond_pred);
}

// ------------------------------------------------------------------- Adapter

AdapterImpl::AdapterImpl(int cond_channels, std::vector<int> widths) : widths_(std::move(widths)) {
    if (widths_.empty()) throw ParameterError("Adapter: widths must not be empty");
    int in = cond_channels;
    for (std::size_t l = 0; l < widths_.size(); ++l) {
        const int w = widths_[l];
        torch::nn::Sequential stage(
            torch::nn::Conv2d(torch::nn::Conv2dOptions(in, w, 3).stride(l == 0 ? 1 : 2).padding(1)),
            torch::nn::SiLU(),
            torch::nn::Conv2d(torch::nn::Conv2dOptions(w, w, 3).padding(1)),
            torch::nn::SiLU());
        stages->push_back(stage);
        torch::nn::Conv2d head(torch::nn::Conv2dOptions(w, w, 1));
        torch::NoGradGuard guard;
        head->weight.zero_();
        head->bias.zero_();
        heads->push_back(head);
        in = w;
    }
    register_module("stages", stages);
    register_module("heads", heads);
}

FeatureStack AdapterImpl::forward(const torch::Tensor& cond) {
    FeatureStack out;
    auto h = cond;
    for (std::size_t l = 0; l < widths_.size(); ++l) {
        h = stages[l]->as<torch::nn::Sequential>()->forward(h);
        out.push_back(heads[l]->as<torch::nn::Conv2d>()->forward(h));
    }
    return out;
}

FeatureStack encode_condition(Adapter& adapter, const torch::Tensor& cond, double scale) {
    if (scale < 0.0) throw ParameterError("encode_condition: scale must be >= 0");
    if (cond.dim() != 4 || cond.size(1) != 4) throw ShapeError("encode_condition: expected [B, 4, H, W]");
    auto features = adapter->forward(cond);
    for (auto& f : features) f = f * scale;
    return features;
}

FeatureStack encode_condition(Adapter& adapter, const StructuralCondition& cond, double scale) {
    auto dtype = adapter->heads[0]->as<torch::nn::Conv2d>()->weight.scalar_type();
    return encode_condition(adapter, condition_tensor(cond, dtype), scale);
}

// ----------------------------------------------------------------- Generator

GeneratorImpl::GeneratorImpl(const Denoiser& source, GeneratorConfig config)
    : config_(std::move(config)) {
    const auto& dc = source->config();
    backbone = register_module("backbone", Denoiser(dc));
    copy_weights(*source, *backbone);
    backbone->to(source->conv_in->base->weight.scalar_type());
    backbone->attach_lora(config_.lora_rank, config_.lora_multiplier);

    const int c = dc.channels;
    input_adapter = register_module(
        "input_adapter",
        torch::nn::Sequential(
            torch::nn::Conv2d(torch::nn::Conv2dOptions(c, config_.input_hidden, 3).padding(1)),
            torch::nn::SiLU(),
            torch::nn::Conv2d(torch::nn::Conv2dOptions(config_.input_hidden, c, 3).padding(1))));
    output_head = register_module(
        "output_head", torch::nn::Conv2d(torch::nn::Conv2dOptions(dc.widths[0] + c, c, 3).padding(1)));
    input_adapter->to(backbone->conv_in->base->weight.scalar_type());
    output_head->to(backbone->conv_in->base->weight.scalar_type());
    torch::NoGradGuard guard;
    auto last = input_adapter[2]->as<torch::nn::Conv2d>();
    last->weight.zero_();
    last->bias.zero_();
    output_head->weight.zero_();
    output_head->bias.zero_();
}

torch::Tensor GeneratorImpl::forward(const torch::Tensor& lq, const torch::Tensor& token) {
    if (lq.dim() != 4) throw ShapeError("Generator: expected [B, C, h, w] input");
    const auto b = lq.size(0);
    auto u = bicubic_resize(lq, lq.size(2) * config_.scale, lq.size(3) * config_.scale);
    auto z_in = u + input_adapter->forward(u);
    auto t = torch::full({b}, config_.t_fix, torch::kLong);
    auto h = backbone->hidden(z_in, t, token);
    auto r = output_head->forward(torch::cat({F::silu(backbone->norm_out->forward(h)), u}, 1));
    if (config_.residual_pool > 0) {
        const int k = config_.residual_pool;
        auto low = F::avg_pool2d(r, F::AvgPool2dFuncOptions(k).stride(k));
        r = r - bicubic_resize(low, r.size(2), r.size(3));
    }
    return u + r;
}

std::vector<torch::Tensor> GeneratorImpl::trainable_parameters() {
    std::vector<torch::Tensor> out;
    for (auto& p : parameters())
        if (p.requires_grad()) out.push_back(p);
    return out;
}

torch::Tensor generator_forward(Generator& gen, const torch::Tensor& lq, const torch::Tensor& token) {
    return gen->forward(lq, token).clamp(0.0, 1.0);
}

// ------------------------------------------------------------------- helpers

void copy_weights(const torch::nn::Module& src, torch::nn::Module& dst) {
    torch::NoGradGuard guard;
    auto dst_params = dst.named_parameters(true);
    for (const auto& item : src.named_parameters(true)) {
        auto* target = dst_params.find(item.key());
        if (target == nullptr) throw ShapeError("copy_weights: missing parameter " + item.key());
        if (target->sizes() != item.value().sizes()) {
            throw ShapeError("copy_weights: shape mismatch for " + item.key());
        }
        target->copy_(item.value());
    }
    auto dst_buffers = dst.named_buffers(true);
    for (const auto& item : src.named_buffers(true)) {
        auto* target = dst_buffers.find(item.key());
        if (target == nullptr) throw ShapeError("copy_weights: missing buffer " + item.key());
        target->copy_(item.value());
    }
}

void set_requires_grad(torch::nn::Module& module, bool requires_grad) {
    for (auto& p : module.parameters()) p.set_requires_grad(requires_grad);
}

std::int64_t count_parameters(const torch::nn::Module& module, bool trainable_only) {
    std::int64_t n = 0;
    for (const auto& p : module.parameters())
        if (!trainable_only || p.requires_grad()) n += p.numel();
    return n;
}

Denoiser make_auxiliary(const Denoiser& teacher, int rank, double multiplier) {
    Denoiser aux(teacher->config());
    copy_weights(*teacher, *aux);
    aux->to(teacher->conv_in->base->weight.scalar_type());
    aux->attach_lora(rank, multiplier);
    return aux;
}

ModelBundle ModelBundle::assemble(const Denoiser& teacher, const Adapter& adapter,
                                  const GeneratorConfig& generator_config) {
    ModelBundle bundle;
    bundle.teacher = teacher;
    bundle.adapter = adapter;
    set_requires_grad(*bundle.teacher, false);
    set_requires_grad(*bundle.adapter, false);
    bundle.aux = make_auxiliary(teacher, generator_config.lora_rank, generator_config.lora_multiplier);
    bundle.generator = Generator(teacher, generator_config);
    return bundle;
}

}  // namespace icm
