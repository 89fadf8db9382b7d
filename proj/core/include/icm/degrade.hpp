// Copyright 2026 The ICM-SR Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "icm/image.hpp"
#include "icm/rng.hpp"

namespace icm {

enum class ResampleFilter { Nearest, Bilinear, Area };

std::string to_string(ResampleFilter f);
ResampleFilter resample_filter_from_string(const std::string& name);

struct DegradationConfig {
    double blur_sigma_min = 0.2;
    double blur_sigma_max = 3.0;
    std::vector<ResampleFilter> filters{ResampleFilter::Nearest, ResampleFilter::Bilinear,
                                        ResampleFilter::Area};
    double noise_std_min = 0.0;
    double noise_std_max = 0.1;
    int jpeg_quality_min = 30;
    int jpeg_quality_max = 95;
    bool second_order = false;

    /// Parameters under which degrade() is the identity at scale 1.
    static DegradationConfig identity();
};

/// One blur -> resample -> noise -> compression pass with its sampled values.
/// blur_sigma == 0 skips the blur, noise_std == 0 skips the noise and
/// jpeg_quality >= 100 skips the compression.
struct DegradationPass {
    double blur_sigma = 0.0;
    ResampleFilter filter = ResampleFilter::Area;
    int factor = 1;
    double noise_std = 0.0;
    std::uint64_t noise_seed = 0;
    int jpeg_quality = 100;

    bool operator==(const DegradationPass&) const = default;
};

struct DegradationRecipe {
    int scale = 1;
    std::vector<DegradationPass> passes;

    bool operator==(const DegradationRecipe&) const = default;
};

void to_json(nlohmann::json& j, const DegradationRecipe& r);
void from_json(const nlohmann::json& j, DegradationRecipe& r);

struct ImagePair {
    Image lq;
    Image hq;
    std::uint64_t seed = 0;
    DegradationRecipe recipe;
};

/// Samples a recipe from `seed` and applies it. Output is clamped to [0, 1]
/// and has dimensions hq / scale.
ImagePair degrade(const Image& hq, int scale, const DegradationConfig& config, std::uint64_t seed);
ImagePair degrade(const Image& hq, int scale, const DegradationConfig& config, Rng& rng);

/// Re-applies a stored recipe; replay(pair.hq, pair.recipe) == pair.lq.
Image replay(const Image& hq, const DegradationRecipe& recipe);

// Individual stages, exposed for tests and benchmarks.
Image gaussian_blur(const Image& img, double sigma);
Image downsample(const Image& img, int factor, ResampleFilter filter);
Image jpeg_compress(const Image& img, int quality);

}  // namespace icm
