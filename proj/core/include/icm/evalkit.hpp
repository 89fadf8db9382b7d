// Copyright 2026 The ICM-SR Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include "icm/distill.hpp"
#include "icm/image.hpp"
#include "icm/losses.hpp"
#include "icm/models.hpp"
#include "icm/schedule.hpp"

namespace icm {

inline constexpr double kPsnrCap = 100.0;

/// 10 log10(1 / MSE) for images in [0, 1]; identical images give kPsnrCap.
double psnr(const Image& a, const Image& b);

/// Mean SSIM over all valid 11x11 Gaussian windows (sigma 1.5), averaged over
/// channels; constants C1 = 0.01^2, C2 = 0.03^2.
double ssim(const Image& a, const Image& b);

inline const std::vector<int> kDefaultProbeTimesteps{500, 620, 740, 860, 980};

struct ProbeResult {
    std::vector<int> timesteps;
    std::vector<double> mse_conditional;
    std::vector<double> mse_unconditional;
    int num_images = 0;
    // [timestep][image]
    std::vector<std::vector<double>> per_image_conditional;
    std::vector<std::vector<double>> per_image_unconditional;

    /// Fraction of images whose conditional error is below the unconditional
    /// one at timestep index `k`.
    double win_rate(std::size_t k) const;
};

struct ProbeOptions {
    double adapter_scale = 1.0;
    std::optional<std::filesystem::path> grid_dir;  // writes PNG grids when set
    int grid_images = 4;
};

/// Perturbs each HQ image at every probed timestep and compares the one-step
/// x0 estimate of the teacher with and without adapter features against the
/// ground truth. Both branches use the image's class token.
ProbeResult denoise_probe(Denoiser& teacher, Adapter& adapter, const TensorDataset& data,
                          const std::vector<int>& timesteps, const NoiseSchedule& schedule, Rng& rng,
                          const ProbeOptions& options = {});

void write_probe_csv(const std::filesystem::path& path, const ProbeResult& result);

struct ImageMetrics {
    double psnr = 0.0;
    double ssim = 0.0;
    double perceptual = 0.0;
};

struct GeneratorEval {
    std::vector<ImageMetrics> generator;
    std::vector<ImageMetrics> bicubic;

    double mean_psnr() const;
    double mean_ssim() const;
    double mean_perceptual() const;
    /// Fraction of images where the generator PSNR exceeds bicubic.
    double psnr_win_rate() const;
};

/// Scores generator outputs and the clamped bicubic upsample against HQ.
GeneratorEval evaluate_generator(Generator& generator, const TensorDataset& data,
                                 PerceptualProxy& proxy);

void write_metrics_csv(const std::filesystem::path& path, const GeneratorEval& eval);

}  // namespace icm
