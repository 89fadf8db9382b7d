// Copyright 2026 The ICM-SR Authors
// SPDX-License-Identifier: Apache-2.0
//
// icm_sr: dataset synthesis, pretraining, distillation, probing and
// evaluation over one run directory.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <torch/torch.h>

#include "icm/errors.hpp"
#include "icm/pipeline.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInvalid = 1;
constexpr int kExitRuntime = 2;

struct GlobalOptions {
    std::string config_path;
    std::string out_dir;
    std::optional<std::uint64_t> seed;
    std::vector<std::string> overrides;
};

icm::RunConfig resolve(const GlobalOptions& opts) {
    auto config = opts.config_path.empty() ? icm::RunConfig() : icm::RunConfig::from_file(opts.config_path);
    if (const char* root = std::getenv("ICM_OUT_ROOT"); root != nullptr && *root != '\0') {
        if (config.document().at("out_dir") == icm::RunConfig::defaults().at("out_dir")) {
            config.set("out_dir", std::string(root));
        }
    }
    for (const auto& o : opts.overrides) config.apply_override(o);
    if (!opts.out_dir.empty()) config.set("out_dir", opts.out_dir);
    if (opts.seed) config.set("seed", *opts.seed);
    return config;
}

void print_line(const std::string& line) { std::cout << "[icm_sr] " << line << std::endl; }

}  // namespace

int main(int argc, char** argv) {
    torch::set_num_threads(1);
    CLI::App app{"Image-conditioned manifold regularization for one-step super-resolution"};
    app.require_subcommand(1);
    app.fallthrough();

    GlobalOptions opts;
    app.add_option("--config", opts.config_path, "JSON run configuration")->check(CLI::ExistingFile);
    app.add_option("--out", opts.out_dir, "run directory (overrides out_dir)");
    app.add_option("--seed", opts.seed, "master seed (overrides seed)");

    auto add = [&](const char* name, const char* help) {
        auto* sub = app.add_subcommand(name, help);
        sub->add_option("overrides", opts.overrides, "dotted key=value config overrides");
        return sub;
    };
    auto* gen_data = add("gen-data", "synthesize HQ textures, LQ pairs and the manifest");
    auto* pretrain = add("pretrain", "train the teacher denoiser on HQ images");
    auto* train_adapter = add("train-adapter", "train the structural-condition adapter");
    auto* distill = add("distill", "distill the one-step generator");
    auto* probe = add("probe", "conditional vs unconditional single-step denoising probe");
    auto* eval = add("eval", "PSNR / SSIM / perceptual metrics of a distilled generator");
    auto* lemma = add("verify-lemma1", "check the deterministic-condition noise identity");
    int trials = 10000;
    lemma->add_option("--trials", trials, "random draws")->check(CLI::PositiveNumber);
    auto* dump = add("dump-condition", "write colormap and edge images for a PNG");
    std::string image;
    std::string dest = "conditions";
    dump->add_option("--image", image, "input PNG")->required()->check(CLI::ExistingFile);
    dump->add_option("--dest", dest, "output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitInvalid;
    }

    try {
        const auto config = resolve(opts);
        if (*gen_data) icm::cmd_gen_data(config, print_line);
        if (*pretrain) icm::cmd_pretrain(config, print_line);
        if (*train_adapter) icm::cmd_train_adapter(config, print_line);
        if (*distill) icm::cmd_distill(config, print_line);
        if (*probe) icm::cmd_probe(config, print_line);
        if (*eval) icm::cmd_eval(config, print_line);
        if (*lemma) {
            if (!icm::cmd_verify_lemma1(config, trials, print_line).passed) return kExitInvalid;
        }
        if (*dump) icm::cmd_dump_condition(config, image, dest, print_line);
    } catch (const icm::ParameterError& e) {
        std::cerr << "icm_sr: " << e.what() << '\n';
        return kExitInvalid;
    } catch (const icm::PrerequisiteError& e) {
        std::cerr << "icm_sr: " << e.what() << '\n';
        return kExitInvalid;
    } catch (const std::exception& e) {
        std::cerr << "icm_sr: " << e.what() << '\n';
        return kExitRuntime;
    }
    return kExitOk;
}
