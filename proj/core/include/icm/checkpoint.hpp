// Copyright 2026 The ICM-SR Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <map>
#include <string>

#include <json.hpp>
#include <torch/nn/module.h>

namespace icm {

inline constexpr char kCheckpointMagic[] = "ICMSRCKPT";
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Named float32 tensors plus a free-form JSON metadata document.
struct Checkpoint {
    nlohmann::json metadata = nlohmann::json::object();
    std::map<std::string, torch::Tensor> tensors;

    /// Stores every parameter and buffer of `module` under `prefix.name`.
    void add_module(const std::string& prefix, const torch::nn::Module& module);
    /// Copies `prefix.name` tensors into `module`; every module tensor must be present.
    void load_module(const std::string& prefix, torch::nn::Module& module) const;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace icm
