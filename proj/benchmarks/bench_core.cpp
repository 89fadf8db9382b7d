// Copyright 2026 The ICM-SR Authors
// SPDX-License-Identifier: Apache-2.0

#include <benchmark/benchmark.h>
#include <torch/torch.h>

#include "icm/conditioning.hpp"
#include "icm/degrade.hpp"
#include "icm/models.hpp"
#include "icm/textures.hpp"

namespace {

icm::Image texture(int size) {
    icm::Rng rng(7);
    return icm::render_texture(icm::TextureFamily::Shapes, size, rng);
}

void BM_Colormap(benchmark::State& state) {
    const auto img = texture(static_cast<int>(state.range(0)));
    for (auto _ : state) benchmark::DoNotOptimize(icm::extract_colormap(img, 8));
}
BENCHMARK(BM_Colormap)->Arg(64)->Arg(256);

void BM_Canny(benchmark::State& state) {
    const auto img = texture(static_cast<int>(state.range(0)));
    for (auto _ : state) benchmark::DoNotOptimize(icm::canny_edges(img, 1.4, 0.1, 0.2));
}
BENCHMARK(BM_Canny)->Arg(64)->Arg(256);

void BM_Degrade(benchmark::State& state) {
    const auto img = icm::quantize8(texture(static_cast<int>(state.range(0))));
    icm::DegradationConfig cfg;
    std::uint64_t seed = 0;
    for (auto _ : state) benchmark::DoNotOptimize(icm::degrade(img, 4, cfg, seed++));
}
BENCHMARK(BM_Degrade)->Arg(64)->Arg(256);

void BM_DenoiserForward(benchmark::State& state) {
    torch::set_num_threads(1);
    torch::NoGradGuard guard;
    icm::Denoiser model(icm::DenoiserConfig{});
    const auto batch = state.range(0);
    auto z = torch::randn({batch, 3, 64, 64});
    auto t = torch::full({batch}, 500, torch::kLong);
    auto token = torch::zeros({batch}, torch::kLong);
    for (auto _ : state) benchmark::DoNotOptimize(model->forward(z, t, token));
}
BENCHMARK(BM_DenoiserForward)->Arg(1)->Arg(8)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
