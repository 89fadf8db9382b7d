// Copyright 2026 The ICM-SR Authors
// SPDX-License-Identifier: Apache-2.0

#include "icm/distill.hpp"

#include <chrono>
#include <cmath>
#include <numbers>
#include <sstream>

#include <torch/torch.h>

#include "icm/errors.hpp"

namespace icm {

std::string to_string(Regularizer r) {
    switch (r) {
        case Regularizer::None: return "none";
        case Regularizer::Sds: return "sds";
        case Regularizer::VsdText: return "vsd_text";
        case Regularizer::Icm: return "icm";
    }
    return "?";
}

Regularizer regularizer_from_string(const std::string& name) {
    if (name == "none") return Regularizer::None;
    if (name == "sds") return Regularizer::Sds;
    if (name == "vsd_text") return Regularizer::VsdText;
    if (name == "icm") return Regularizer::Icm;
    throw ParameterError("unknown regularizer '" + name + "' (expected none|sds|vsd_text|icm)");
}

namespace {

torch::Tensor pick(const torch::Tensor& t, const torch::Tensor& idx) {
    return t.defined() ? t.index_select(0, idx) : t;
}

torch::Tensor cut(const torch::Tensor& t, std::int64_t begin, std::int64_t end) {
    return t.defined() ? t.slice(0, begin, end) : t;
}

double now_seconds() {
    return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

template <typename Optimizer>
void set_lr(Optimizer& opt, double lr) {
    for (auto& group : opt.param_groups()) {
        static_cast<torch::optim::AdamWOptions&>(group.options()).lr(lr);
    }
}

void require_finite(const torch::Tensor& value, const std::string& what, const torch::Tensor& t) {
    if (torch::isfinite(value).all().item<bool>()) return;
    std::ostringstream msg;
    msg << what << " is not finite";
    if (t.defined()) {
        msg << " (t =";
        for (std::int64_t i = 0; i < t.numel(); ++i) msg << ' ' << t[i].item<std::int64_t>();
        msg << ')';
    }
    throw TrainingError(msg.str());
}

torch::Tensor drop_tokens(const torch::Tensor& labels, std::int64_t null_token, double p, Rng& rng) {
    if (p <= 0.0) return labels;
    auto drop = torch::rand({labels.size(0)}, rng.torch_generator(), torch::kFloat) < p;
    return torch::where(drop, torch::full_like(labels, null_token), labels);
}

PretrainResult pretrain_loop(Denoiser& model, Adapter* adapter, const std::vector<torch::Tensor>& params,
                             const TensorDataset& train, const TensorDataset& heldout,
                             const NoiseSchedule& schedule, const PretrainConfig& config,
                             std::uint64_t seed, const ProgressFn& progress, const char* name) {
    if (train.size() == 0) throw ParameterError(std::string(name) + ": empty training set");
    if (config.iterations < 1 || config.batch_size < 1 || config.lr <= 0.0) {
        throw ParameterError(std::string(name) + ": iterations, batch_size and lr must be positive");
    }
    if (config.t_min < 1 || config.t_min > schedule.num_steps()) {
        throw ParameterError(std::string(name) + ": t_min outside [1, N]");
    }
    if (adapter != nullptr && !train.cond.defined()) {
        throw ParameterError(std::string(name) + ": training set has no conditions");
    }
    PretrainResult result;
    const std::uint64_t eval_seed = mix_seed(seed, 0xE7A1);
    result.heldout_before = evaluate_denoising_loss(model, adapter, 1.0, heldout, schedule, eval_seed);

    torch::optim::AdamW opt(params, torch::optim::AdamWOptions(config.lr).weight_decay(config.weight_decay));
    Rng rng(seed);
    auto& gen = rng.torch_generator();
    const auto n = train.size();
    const auto null_token = model->null_token();
    model->train();
    for (int it = 0; it < config.iterations; ++it) {
        set_lr(opt, cosine_lr(config.lr, it, config.iterations));
        auto idx = torch::randint(0, n, {config.batch_size}, gen, torch::kLong);
        auto z0 = train.hq.index_select(0, idx);
        auto t = torch::randint(config.t_min, schedule.num_steps() + 1, {config.batch_size}, gen, torch::kLong);
        auto eps = torch::randn(z0.sizes(), gen, z0.options());
        auto token = drop_tokens(train.labels.index_select(0, idx), null_token, config.p_uncond, rng);
        FeatureStack features;
        if (adapter != nullptr) features = (*adapter)->forward(train.cond.index_select(0, idx));
        opt.zero_grad();
        auto loss = denoising_loss(model, schedule, z0, t, eps, token, features);
        require_finite(loss, std::string(name) + " loss", t);
        loss.backward();
        torch::nn::utils::clip_grad_norm_(params, 1.0);
        opt.step();
        result.losses.push_back(loss.item<double>());
        if (progress && config.log_every > 0 && (it + 1) % config.log_every == 0) {
            double avg = 0.0;
            const int k = std::min<int>(config.log_every, static_cast<int>(result.losses.size()));
            for (int i = 0; i < k; ++i) avg += result.losses[result.losses.size() - 1 - i];
            std::ostringstream msg;
            msg << name << " iter " << it + 1 << "/" << config.iterations << " loss " << avg / k;
            progress(msg.str());
        }
    }
    model->eval();
    result.heldout_after = evaluate_denoising_loss(model, adapter, 1.0, heldout, schedule, eval_seed);
    return result;
}

}  // namespace

TensorDataset TensorDataset::select(const torch::Tensor& indices) const {
    return {pick(hq, indices), pick(lq, indices), pick(cond, indices), pick(labels, indices)};
}

TensorDataset TensorDataset::slice(std::int64_t begin, std::int64_t end) const {
    return {cut(hq, begin, end), cut(lq, begin, end), cut(cond, begin, end), cut(labels, begin, end)};
}

double cosine_lr(double base, int iteration, int total) {
    if (total <= 1) return base;
    const double progress = std::clamp(static_cast<double>(iteration) / total, 0.0, 1.0);
    return base * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

PretrainResult pretrain_teacher(Denoiser& teacher, const TensorDataset& train,
                                const TensorDataset& heldout, const NoiseSchedule& schedule,
                                const PretrainConfig& config, std::uint64_t seed,
                                const ProgressFn& progress) {
    set_requires_grad(*teacher, true);
    auto result = pretrain_loop(teacher, nullptr, teacher->parameters(), train, heldout, schedule,
                                config, seed, progress, "pretrain");
    set_requires_grad(*teacher, false);
    return result;
}

PretrainResult pretrain_adapter(Denoiser& teacher, Adapter& adapter, const TensorDataset& train,
                                const TensorDataset& heldout, const NoiseSchedule& schedule,
                                const PretrainConfig& config, std::uint64_t seed,
                                const ProgressFn& progress) {
    set_requires_grad(*teacher, false);
    set_requires_grad(*adapter, true);
    adapter->train();
    auto result = pretrain_loop(teacher, &adapter, adapter->parameters(), train, heldout, schedule,
                                config, seed, progress, "adapter");
    adapter->eval();
    set_requires_grad(*adapter, false);
    return result;
}

double evaluate_denoising_loss(Denoiser& model, Adapter* adapter, double scale,
                               const TensorDataset& data, const NoiseSchedule& schedule,
                               std::uint64_t seed, int draws) {
    if (data.size() == 0) return 0.0;
    torch::NoGradGuard guard;
    Rng rng(seed);
    auto& gen = rng.torch_generator();
    const std::int64_t chunk = 32;
    double total = 0.0;
    std::int64_t count = 0;
    for (int d = 0; d < draws; ++d) {
        for (std::int64_t begin = 0; begin < data.size(); begin += chunk) {
            const auto end = std::min(begin + chunk, data.size());
            auto part = data.slice(begin, end);
            const auto b = end - begin;
            auto t = torch::randint(1, schedule.num_steps() + 1, {b}, gen, torch::kLong);
            auto eps = torch::randn(part.hq.sizes(), gen, part.hq.options());
            FeatureStack features;
            if (adapter != nullptr) features = encode_condition(*adapter, part.cond, scale);
            total += denoising_loss(model, schedule, part.hq, t, eps, part.labels, features).item<double>() * b;
            count += b;
        }
    }
    return total / static_cast<double>(count);
}

namespace {

// Zeroes each sample's features where its timestep is below t_min.
FeatureStack gate_features(const FeatureStack& features, const torch::Tensor& t, int t_min) {
    if (features.empty() || t_min <= 1) return features;
    FeatureStack out;
    out.reserve(features.size());
    for (const auto& f : features) {
        auto keep = (t >= t_min).to(f.scalar_type()).view({-1, 1, 1, 1});
        out.push_back(f * keep);
    }
    return out;
}

}  // namespace

ScorePair make_score_pair(ModelBundle& bundle, const NoiseSchedule& schedule, Regularizer regularizer,
                          const FeatureStack& features, const torch::Tensor& token,
                          const TrainConfig& config, const torch::Tensor& eps) {
    if (regularizer == Regularizer::None) throw ParameterError("make_score_pair: regularizer is none");
    const bool conditioned = regularizer == Regularizer::Icm || regularizer == Regularizer::Sds;
    const FeatureStack real_features = conditioned ? features : FeatureStack{};
    const FeatureStack fake_features =
        (regularizer == Regularizer::Icm && config.aux_uses_adapter) ? features : FeatureStack{};
    auto null_token = torch::full_like(token, bundle.teacher->null_token());
    const double guidance = config.guidance;
    const int t_min = config.adapter_t_min;
    ScorePair scores;
    scores.real = [&bundle, &schedule, real_features, token, null_token, guidance, t_min](
                      const torch::Tensor& zt, const torch::Tensor& t) {
        auto cond = denoiser_forward(bundle.teacher, schedule, zt, t, token, gate_features(real_features, t, t_min));
        if (guidance == 1.0) return cond;
        auto uncond = denoiser_forward(bundle.teacher, schedule, zt, t, null_token);
        return cfg_combine(cond, uncond, guidance);
    };
    if (regularizer == Regularizer::Sds) {
        scores.fake = [eps](const torch::Tensor&, const torch::Tensor&) { return eps; };
    } else {
        scores.fake = [&bundle, &schedule, fake_features, token, t_min](const torch::Tensor& zt,
                                                                         const torch::Tensor& t) {
            return denoiser_forward(bundle.aux, schedule, zt, t, token, gate_features(fake_features, t, t_min));
        };
    }
    return scores;
}

std::pair<torch::Tensor, torch::Tensor> sample_reg_draw(const NoiseSchedule& schedule, Rng& rng,
                                                        const torch::Tensor& like) {
    auto t = sample_reg_timesteps(schedule, rng, like.size(0));
    auto eps = torch::randn(like.sizes(), rng.torch_generator(), like.options().requires_grad(false));
    return {t, eps};
}

RegTerm score_distillation(const NoiseSchedule& schedule, const torch::Tensor& z0_hat,
                           const torch::Tensor& t, const torch::Tensor& eps, const ScorePair& scores) {
    if (z0_hat.sizes() != eps.sizes()) throw ShapeError("score_distillation: noise shape mismatch");
    RegTerm term;
    term.t = t;
    term.eps = eps;
    {
        torch::NoGradGuard guard;
        term.zt = perturb(schedule, z0_hat.detach(), t, eps);
        auto real = scores.real(term.zt, t);
        auto fake = scores.fake(term.zt, t);
        term.direction = schedule.weight_of(t, z0_hat.scalar_type()) * (real - fake);
    }
    require_finite(term.direction, "regularization gradient", t);
    auto zt = perturb(schedule, z0_hat, t, eps);
    term.surrogate = (term.direction * zt).sum() / static_cast<double>(z0_hat.size(0));
    return term;
}

RegTerm icm_reg_grad(ModelBundle& bundle, const torch::Tensor& z0_hat, const torch::Tensor& cond,
                     const torch::Tensor& token, const NoiseSchedule& schedule,
                     const TrainConfig& config, Rng& rng) {
    auto [t, eps] = sample_reg_draw(schedule, rng, z0_hat);
    FeatureStack features;
    if (config.regularizer == Regularizer::Icm || config.regularizer == Regularizer::Sds) {
        torch::NoGradGuard guard;
        features = encode_condition(bundle.adapter, cond, config.adapter_scale);
    }
    auto scores = make_score_pair(bundle, schedule, config.regularizer, features, token, config, eps);
    return score_distillation(schedule, z0_hat, t, eps, scores);
}

torch::Tensor aux_loss(Denoiser& aux, const NoiseSchedule& schedule, const torch::Tensor& z0_hat,
                       const torch::Tensor& t, const torch::Tensor& eps, const torch::Tensor& token,
                       const FeatureStack& features) {
    return denoising_loss(aux, schedule, z0_hat.detach(), t, eps, token, features);
}

Distiller::Distiller(ModelBundle& bundle, const NoiseSchedule& schedule, TrainConfig config,
                     PerceptualProxy proxy)
    : bundle_(bundle),
      schedule_(schedule),
      config_(std::move(config)),
      proxy_(std::move(proxy)),
      opt_gen_(bundle.generator->trainable_parameters(),
               torch::optim::AdamWOptions(config_.lr_generator).weight_decay(config_.weight_decay)),
      opt_aux_(bundle.aux->lora_parameters(),
               torch::optim::AdamWOptions(config_.lr_aux).weight_decay(config_.weight_decay)),
      data_rng_(mix_seed(config_.seed, 0xDA7A)),
      reg_rng_(mix_seed(config_.seed, 0x5C0E)) {
    if (config_.lr_generator <= 0.0 || config_.lr_aux <= 0.0) throw ParameterError("learning rates must be > 0");
    if (config_.batch_size < 1 || config_.iterations < 1) {
        throw ParameterError("batch_size and iterations must be >= 1");
    }
    if (config_.adapter_scale < 0.0) throw ParameterError("adapter_scale must be >= 0");
    set_requires_grad(*bundle_.teacher, false);
    set_requires_grad(*bundle_.adapter, false);
    bundle_.teacher->eval();
    bundle_.adapter->eval();
    start_time_ = now_seconds();
}

LossReport Distiller::step(const TensorDataset& batch) {
    const int total = config_.iterations;
    LossReport report;
    report.iteration = ++iteration_;
    report.lr = cosine_lr(config_.lr_generator, iteration_ - 1, total);
    set_lr(opt_gen_, report.lr);
    set_lr(opt_aux_, cosine_lr(config_.lr_aux, iteration_ - 1, total));

    bundle_.generator->train();
    opt_gen_.zero_grad();
    auto z0_hat = bundle_.generator->forward(batch.lq, batch.labels);
    auto rec = recon_loss(z0_hat, batch.hq, proxy_, config_.lambda_rec, config_.lambda_perceptual);
    require_finite(rec.total, "reconstruction loss", {});
    auto loss = rec.total;
    RegTerm reg;
    if (config_.regularizer != Regularizer::None) {
        reg = icm_reg_grad(bundle_, z0_hat, batch.cond, batch.labels, schedule_, config_, reg_rng_);
        loss = loss + config_.lambda_reg * reg.surrogate;
        report.reg_grad_norm =
            (reg.direction * (config_.lambda_reg / static_cast<double>(z0_hat.size(0)))).norm().item<double>();
    }
    loss.backward();
    for (const auto& p : bundle_.generator->trainable_parameters()) {
        if (p.grad().defined()) require_finite(p.grad(), "generator gradient", reg.t);
    }
    opt_gen_.step();
    report.rec_l2 = rec.l2.item<double>();
    report.rec_perceptual = rec.perceptual.item<double>();

    if (config_.regularizer == Regularizer::Icm || config_.regularizer == Regularizer::VsdText) {
        FeatureStack features;
        if (config_.regularizer == Regularizer::Icm && config_.aux_uses_adapter) {
            torch::NoGradGuard guard;
            features = gate_features(encode_condition(bundle_.adapter, batch.cond, config_.adapter_scale), reg.t,
                                     config_.adapter_t_min);
        }
        bundle_.aux->train();
        opt_aux_.zero_grad();
        auto al = aux_loss(bundle_.aux, schedule_, z0_hat, reg.t, reg.eps, batch.labels, features);
        require_finite(al, "auxiliary loss", reg.t);
        al.backward();
        opt_aux_.step();
        report.aux_loss = al.item<double>();
    }
    report.wall_time = now_seconds() - start_time_;
    return report;
}

std::vector<LossReport> Distiller::run(const TensorDataset& train, const StepFn& on_step) {
    if (train.size() == 0) throw ParameterError("distill: empty training set");
    if (!train.lq.defined() || !train.cond.defined()) throw ParameterError("distill: dataset needs lq and cond");
    std::vector<LossReport> reports;
    start_time_ = now_seconds();
    while (iteration_ < config_.iterations) {
        auto idx = torch::randint(0, train.size(), {config_.batch_size}, data_rng_.torch_generator(),
                                  torch::kLong);
        reports.push_back(step(train.select(idx)));
        if (on_step) on_step(reports.back());
    }
    return reports;
}

std::string format_report(const LossReport& r, Regularizer regularizer, int total) {
    std::ostringstream msg;
    msg << "distill[" << to_string(regularizer) << "] iter " << r.iteration << "/" << total << " l2 "
        << r.rec_l2 << " perc " << r.rec_perceptual << " reg " << r.reg_grad_norm << " aux " << r.aux_loss
        << " (" << r.wall_time << " s)";
    return msg.str();
}

LossReport train_step(Distiller& distiller, const TensorDataset& batch) { return distiller.step(batch); }

}  // namespace icm
