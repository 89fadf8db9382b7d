// Copyright 2026 The ICM-SR Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>

#include <doctest.h>
#include <torch/torch.h>

#include "icm/evalkit.hpp"
#include "oracles.hpp"

using namespace icm;

namespace {

Image constant(float v, int c = 3, int h = 24, int w = 24) { return Image(c, h, w, v); }

Image negate(const Image& img) {
    Image out = img;
    for (auto& v : out.pixels) v = 1.0f - v;
    return out;
}

}  // namespace

TEST_SUITE("evalkit") {

TEST_CASE("PSNR values") {
    const auto a = oracle::random_image(3, 16, 16, 1);
    CHECK(psnr(a, a) == kPsnrCap);
    // uniform offset of 0.1 -> MSE 0.01 -> 20 dB
    CHECK(psnr(constant(0.2f), constant(0.3f)) == doctest::Approx(20.0).epsilon(1e-5));
    const auto b = oracle::random_image(3, 16, 16, 2);
    double mse = 0.0;
    for (std::size_t i = 0; i < a.pixels.size(); ++i) mse += std::pow(double(a.pixels[i]) - b.pixels[i], 2);
    mse /= static_cast<double>(a.pixels.size());
    CHECK(psnr(a, b) == doctest::Approx(10.0 * std::log10(1.0 / mse)).epsilon(1e-9));
}

TEST_CASE("SSIM properties") {
    const auto a = oracle::random_image(3, 32, 32, 3);
    const auto b = oracle::random_image(3, 32, 32, 4);
    CHECK(ssim(a, a) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(ssim(a, b) == doctest::Approx(ssim(b, a)).epsilon(1e-12));
    CHECK(ssim(a, b) < 0.5);
    CHECK(ssim(a, negate(a)) < 0.0);

    // constant images: only the luminance term survives
    const double c1 = 0.01 * 0.01;
    const double mx = 0.2, my = 0.6;
    const double expected = (2 * mx * my + c1) / (mx * mx + my * my + c1);
    CHECK(ssim(constant(0.2f), constant(0.6f)) == doctest::Approx(expected).epsilon(1e-6));

    // permuting channels in both images leaves the mean unchanged
    auto perm = [](const Image& img) {
        Image out = img;
        for (int c = 0; c < 3; ++c) {
            const auto src = img.plane((c + 1) % 3);
            std::copy(src.begin(), src.end(), out.plane(c).begin());
        }
        return out;
    };
    CHECK(ssim(perm(a), perm(b)) == doctest::Approx(ssim(a, b)).epsilon(1e-12));
}

TEST_CASE("probe with a zero adapter scale compares identical branches") {
    torch::manual_seed(7);
    DenoiserConfig cfg;
    cfg.widths = {8, 16};
    cfg.emb_dim = 16;
    cfg.groups = 4;
    cfg.num_classes = 2;
    Denoiser teacher(cfg);
    Adapter adapter(4, std::vector<int>{8, 16});
    {
        torch::NoGradGuard guard;
        for (auto& p : teacher->parameters()) p.copy_(torch::randn_like(p) * 0.1);
        for (auto& p : adapter->parameters()) p.copy_(torch::randn_like(p) * 0.1);
    }
    TensorDataset data;
    data.hq = torch::rand({3, 3, 16, 16});
    data.cond = torch::rand({3, 4, 16, 16});
    data.labels = torch::tensor({0, 1, 0}, torch::kLong);
    const auto s = make_linear_schedule(1000, 1e-4, 0.02);
    Rng rng(1);
    ProbeOptions opt;
    opt.adapter_scale = 0.0;
    const auto r = denoise_probe(teacher, adapter, data, {500, 980}, s, rng, opt);
    REQUIRE(r.timesteps.size() == 2);
    CHECK(r.num_images == 3);
    for (std::size_t k = 0; k < 2; ++k) {
        CHECK(r.mse_conditional[k] == r.mse_unconditional[k]);
        CHECK(r.win_rate(k) == 0.0);
    }

    Rng rng2(1);
    const auto dir = std::filesystem::temp_directory_path() / "icm_probe_test";
    std::filesystem::remove_all(dir);
    ProbeOptions on;
    on.grid_dir = dir;
    on.grid_images = 2;
    const auto r2 = denoise_probe(teacher, adapter, data, {500, 980}, s, rng2, on);
    CHECK(r2.mse_conditional[1] != r2.mse_unconditional[1]);
    CHECK(std::filesystem::exists(dir / "probe_0.png"));
    CHECK(std::filesystem::exists(dir / "probe_1.png"));
    write_probe_csv(dir / "probe.csv", r2);
    std::ifstream in(dir / "probe.csv");
    std::string header;
    std::getline(in, header);
    CHECK(header == "t,mse_conditional,mse_unconditional,conditional_win_rate,num_images");
    std::filesystem::remove_all(dir);
}

TEST_CASE("untrained generator ties bicubic") {
    torch::manual_seed(8);
    DenoiserConfig cfg;
    cfg.widths = {8, 16};
    cfg.emb_dim = 16;
    cfg.groups = 4;
    cfg.num_classes = 2;
    Denoiser teacher(cfg);
    Generator gen(teacher, GeneratorConfig{});
    TensorDataset data;
    data.hq = torch::rand({2, 3, 16, 16});
    data.lq = torch::avg_pool2d(data.hq, 4);
    data.labels = torch::tensor({0, 1}, torch::kLong);
    PerceptualProxy proxy;
    const auto e = evaluate_generator(gen, data, proxy);
    REQUIRE(e.generator.size() == 2);
    for (std::size_t i = 0; i < 2; ++i) {
        CHECK(e.generator[i].psnr == e.bicubic[i].psnr);
        CHECK(e.generator[i].ssim == e.bicubic[i].ssim);
    }
    CHECK(e.psnr_win_rate() == 0.0);
}

}  // TEST_SUITE
