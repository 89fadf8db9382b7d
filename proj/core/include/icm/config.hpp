// Copyright 2026 The ICM-SR Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "icm/conditioning.hpp"
#include "icm/degrade.hpp"
#include "icm/distill.hpp"
#include "icm/models.hpp"
#include "icm/schedule.hpp"
#include "icm/textures.hpp"

namespace icm {

struct DataConfig {
    int image_size = 64;
    int num_train = 512;
    int num_test = 64;
    int scale = 4;
    std::vector<TextureFamily> families = all_texture_families();
};

struct EvalConfig {
    std::vector<int> probe_timesteps{500, 620, 740, 860, 980};
    double adapter_scale = 1.0;
    int grid_images = 4;
};

/// Experiment configuration: a JSON document whose every key has a default.
/// Unknown keys and type mismatches are rejected on load and on override.
class RunConfig {
public:
    RunConfig();

    static nlohmann::json defaults();
    /// Merges `doc` over the defaults.
    static RunConfig from_json(const nlohmann::json& doc);
    static RunConfig from_file(const std::filesystem::path& path);

    /// Applies one dotted override such as `train.lambda_reg=0.5`. The value
    /// is parsed as JSON when possible, otherwise taken as a string.
    void apply_override(const std::string& assignment);
    void set(const std::string& dotted_key, const nlohmann::json& value);

    const nlohmann::json& document() const { return doc_; }
    void write(const std::filesystem::path& path) const;

    std::uint64_t seed() const;
    std::filesystem::path out_dir() const;

    NoiseSchedule schedule() const;
    ConditioningConfig conditioning() const;
    DegradationConfig degradation() const;
    DataConfig data() const;
    DenoiserConfig denoiser() const;
    int adapter_cond_channels() const { return 4; }
    GeneratorConfig generator() const;
    std::uint64_t perceptual_seed() const;
    PretrainConfig teacher_pretrain() const;
    PretrainConfig adapter_pretrain() const;
    TrainConfig train() const;
    int train_log_every() const;
    int train_checkpoint_every() const;  // 0 = final checkpoint only
    EvalConfig eval() const;

    /// Throws ParameterError if any section fails validation.
    void validate() const;

private:
    int schedule_steps() const { return doc_.at("schedule").at("num_steps").get<int>(); }

    nlohmann::json doc_;
};

}  // namespace icm
