// Copyright 2026 The ICM-SR Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <torch/optim/adamw.h>

#include "icm/losses.hpp"
#include "icm/models.hpp"
#include "icm/rng.hpp"
#include "icm/schedule.hpp"

namespace icm {

enum class Regularizer {
    None,     // reconstruction only
    Sds,      // fake score replaced by the sampled noise
    VsdText,  // teacher and auxiliary conditioned on the token only
    Icm,      // both scores additionally see adapter features of the HQ condition
};

std::string to_string(Regularizer r);
Regularizer regularizer_from_string(const std::string& name);

/// Stacked training tensors. `lq` and `cond` may be undefined for sets that
/// only feed denoiser pretraining without conditions.
struct TensorDataset {
    torch::Tensor hq;      // [N, 3, H, W]
    torch::Tensor lq;      // [N, 3, H/s, W/s]
    torch::Tensor cond;    // [N, 4, H, W]
    torch::Tensor labels;  // [N] int64

    std::int64_t size() const { return hq.defined() ? hq.size(0) : 0; }
    TensorDataset select(const torch::Tensor& indices) const;
    TensorDataset slice(std::int64_t begin, std::int64_t end) const;
};

struct PretrainConfig {
    int iterations = 3000;
    int batch_size = 8;
    double lr = 1e-3;
    double weight_decay = 0.01;
    double p_uncond = 0.1;  // probability of training on the null token
    int t_min = 1;          // training timesteps are drawn from [t_min, N]
    int log_every = 100;
};

struct PretrainResult {
    std::vector<double> losses;  // one per iteration
    double heldout_before = 0.0;
    double heldout_after = 0.0;
};

using ProgressFn = std::function<void(const std::string&)>;

/// Fits the denoiser to clean HQ images with the standard denoising objective.
PretrainResult pretrain_teacher(Denoiser& teacher, const TensorDataset& train,
                                const TensorDataset& heldout, const NoiseSchedule& schedule,
                                const PretrainConfig& config, std::uint64_t seed,
                                const ProgressFn& progress = {});

/// Trains the adapter through the frozen teacher with the same objective.
/// Held-out numbers are conditional losses.
PretrainResult pretrain_adapter(Denoiser& teacher, Adapter& adapter, const TensorDataset& train,
                                const TensorDataset& heldout, const NoiseSchedule& schedule,
                                const PretrainConfig& config, std::uint64_t seed,
                                const ProgressFn& progress = {});

/// Mean head-space denoising loss over `draws` fixed-seed (t, eps) draws per
/// image. With an adapter the features of `data.cond` are injected at `scale`.
double evaluate_denoising_loss(Denoiser& model, Adapter* adapter, double scale,
                               const TensorDataset& data, const NoiseSchedule& schedule,
                               std::uint64_t seed, int draws = 4);

struct TrainConfig {
    double lr_generator = 5e-5;
    double lr_aux = 5e-5;
    int batch_size = 4;
    int iterations = 2000;
    double guidance = 2.0;
    double adapter_scale = 1.0;
    double lambda_rec = 1.0;
    double lambda_perceptual = 1.0;
    double lambda_reg = 1.0;
    double weight_decay = 0.01;
    Regularizer regularizer = Regularizer::Icm;
    bool aux_uses_adapter = false;
    int adapter_t_min = 1;  // adapter features are injected only for t >= adapter_t_min
    std::uint64_t seed = 0;
};

struct LossReport {
    int iteration = 0;
    double rec_l2 = 0.0;
    double rec_perceptual = 0.0;
    double reg_grad_norm = 0.0;
    double aux_loss = 0.0;
    double wall_time = 0.0;  // seconds since the loop started
    double lr = 0.0;
};

/// Noise prediction of a frozen network at (z_t, t).
using ScoreFn = std::function<torch::Tensor(const torch::Tensor& zt, const torch::Tensor& t)>;

struct ScorePair {
    ScoreFn real;
    ScoreFn fake;
};

/// Real/fake score callables for a regularizer. `features` are the already
/// scaled adapter features of the HQ condition (ignored by VsdText/None).
/// For Sds the fake score returns the sampled noise, which the caller binds
/// through `eps`.
ScorePair make_score_pair(ModelBundle& bundle, const NoiseSchedule& schedule, Regularizer regularizer,
                          const FeatureStack& features, const torch::Tensor& token,
                          const TrainConfig& config, const torch::Tensor& eps);

struct RegTerm {
    torch::Tensor t;          // [B] int64
    torch::Tensor eps;        // sampled noise
    torch::Tensor zt;         // perturbed prediction, detached
    torch::Tensor direction;  // w(t) (eps_real - eps_fake), detached
    torch::Tensor surrogate;  // scalar whose theta-gradient is E_b[direction . dz_t/dtheta]
};

/// Draws one timestep per sample from the regularization range and the noise.
std::pair<torch::Tensor, torch::Tensor> sample_reg_draw(const NoiseSchedule& schedule, Rng& rng,
                                                        const torch::Tensor& like);

/// Score-distillation surrogate for a given draw: both scores are evaluated
/// without gradient tracking, and backpropagating `surrogate` delivers
/// w(t) (eps_real - eps_fake) / B as the gradient of z_t.
RegTerm score_distillation(const NoiseSchedule& schedule, const torch::Tensor& z0_hat,
                           const torch::Tensor& t, const torch::Tensor& eps, const ScorePair& scores);

/// Regularization term for the configured regularizer with a fresh draw.
/// `cond` is the [B, 4, H, W] condition batch of the HQ targets.
RegTerm icm_reg_grad(ModelBundle& bundle, const torch::Tensor& z0_hat, const torch::Tensor& cond,
                     const torch::Tensor& token, const NoiseSchedule& schedule,
                     const TrainConfig& config, Rng& rng);

/// Auxiliary denoising loss on a detached generator output for a given draw.
torch::Tensor aux_loss(Denoiser& aux, const NoiseSchedule& schedule, const torch::Tensor& z0_hat,
                       const torch::Tensor& t, const torch::Tensor& eps, const torch::Tensor& token,
                       const FeatureStack& features = {});

double cosine_lr(double base, int iteration, int total);

std::string format_report(const LossReport& report, Regularizer regularizer, int total);

/// Alternating generator / auxiliary optimization state.
class Distiller {
public:
    Distiller(ModelBundle& bundle, const NoiseSchedule& schedule, TrainConfig config,
              PerceptualProxy proxy);

    /// One iteration on the given batch: generator update from the
    /// reconstruction loss plus the regularization gradient, then an
    /// auxiliary update on the detached prediction.
    LossReport step(const TensorDataset& batch);

    using StepFn = std::function<void(const LossReport&)>;

    /// Runs the remaining iterations up to `config.iterations` on random
    /// batches of `train`, calling `on_step` after each one.
    std::vector<LossReport> run(const TensorDataset& train, const StepFn& on_step = {});

    int iteration() const { return iteration_; }
    const TrainConfig& config() const { return config_; }

private:
    ModelBundle& bundle_;
    const NoiseSchedule& schedule_;
    TrainConfig config_;
    PerceptualProxy proxy_;
    torch::optim::AdamW opt_gen_;
    torch::optim::AdamW opt_aux_;
    Rng data_rng_;
    Rng reg_rng_;
    int iteration_ = 0;
    double start_time_ = 0.0;
};

/// Runs one distillation iteration; same as `distiller.step(batch)`.
LossReport train_step(Distiller& distiller, const TensorDataset& batch);

}  // namespace icm
