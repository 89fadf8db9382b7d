// Copyright 2026 The ICM-SR Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "icm/analytic_lab.hpp"
#include "icm/checkpoint.hpp"
#include "icm/config.hpp"
#include "icm/distill.hpp"
#include "icm/evalkit.hpp"

namespace icm {

/// Run-directory layout shared by all commands.
struct RunPaths {
    std::filesystem::path root;

    std::filesystem::path data() const { return root / "data"; }
    std::filesystem::path manifest() const { return data() / "manifest.jsonl"; }
    std::filesystem::path teacher() const { return root / "teacher" / "teacher.ckpt"; }
    std::filesystem::path adapter() const { return root / "adapter" / "adapter.ckpt"; }
    std::filesystem::path distill(Regularizer r) const { return root / "distill" / to_string(r); }
    std::filesystem::path generator(Regularizer r) const { return distill(r) / "generator.ckpt"; }
    std::filesystem::path probe() const { return root / "probe"; }
    std::filesystem::path eval(Regularizer r) const { return root / "eval" / to_string(r); }
    std::filesystem::path lemma() const { return root / "lemma1"; }
};

struct ManifestRecord {
    int index = 0;
    std::string split;  // "train" | "test"
    int label = 0;
    TextureFamily family = TextureFamily::Gradient;
    std::string hq;  // paths relative to the data directory
    std::string lq;
    std::uint64_t seed = 0;
    DegradationRecipe recipe;
};

void to_json(nlohmann::json& j, const ManifestRecord& r);
void from_json(const nlohmann::json& j, ManifestRecord& r);
std::vector<ManifestRecord> read_manifest(const std::filesystem::path& path);

/// HQ texture (8-bit quantized) and its degraded LQ partner for one index.
struct GeneratedPair {
    ImagePair pair;
    int label = 0;
    TextureFamily family = TextureFamily::Gradient;
};

/// Deterministic in-memory dataset synthesis shared by gen-data and tests.
std::vector<GeneratedPair> synthesize_pairs(const DataConfig& data, const DegradationConfig& degradation,
                                            std::uint64_t seed, int count);

/// Stacks images, LQ partners, structural conditions and labels.
TensorDataset make_tensor_dataset(const std::vector<Image>& hq, const std::vector<Image>& lq,
                                  const std::vector<int>& labels, const ConditioningConfig& conditioning);

struct SplitDataset {
    TensorDataset train;
    TensorDataset test;
};

/// Builds train/test tensors straight from the synthesizer, skipping disk.
SplitDataset synthesize_split(const RunConfig& config);

/// Loads a dataset written by cmd_gen_data.
SplitDataset load_split(const RunPaths& paths, const RunConfig& config);

/// Seeds the global torch generator used for default parameter init.
void seed_init(std::uint64_t seed, std::uint64_t stream);

Denoiser make_teacher(const RunConfig& config);
Adapter make_adapter(const RunConfig& config);
Denoiser load_teacher(const RunPaths& paths, const RunConfig& config);
Adapter load_adapter(const RunPaths& paths, const RunConfig& config);
ModelBundle make_bundle(const Denoiser& teacher, const Adapter& adapter, const RunConfig& config);
PerceptualProxy make_proxy(const RunConfig& config);

/// Subcommands. Each writes `config_<name>.json` to the run directory first.
/// Validation problems and missing upstream artifacts raise ParameterError /
/// PrerequisiteError; numerical failures raise TrainingError.
void cmd_gen_data(const RunConfig& config, const ProgressFn& log);
void cmd_pretrain(const RunConfig& config, const ProgressFn& log);
void cmd_train_adapter(const RunConfig& config, const ProgressFn& log);
void cmd_distill(const RunConfig& config, const ProgressFn& log);
ProbeResult cmd_probe(const RunConfig& config, const ProgressFn& log);
GeneratorEval cmd_eval(const RunConfig& config, const ProgressFn& log);

struct LemmaOutcome {
    lab::Lemma1Report report;
    bool passed = false;
};
inline constexpr double kLemmaTolerance = 1e-9;
LemmaOutcome cmd_verify_lemma1(const RunConfig& config, int trials, const ProgressFn& log);

/// Writes colormap, edge and side-by-side PNGs for an arbitrary image.
void cmd_dump_condition(const RunConfig& config, const std::filesystem::path& image,
                        const std::filesystem::path& out_dir, const ProgressFn& log);

}  // namespace icm
