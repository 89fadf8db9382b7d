// Copyright 2026 The ICM-SR Authors
// SPDX-License-Identifier: Apache-2.0

#include <filesystem>

#include <doctest.h>
#include <torch/torch.h>

#include "icm/checkpoint.hpp"
#include "icm/errors.hpp"
#include "icm/image.hpp"
#include "icm/models.hpp"
#include "icm/rng.hpp"
#include "icm/schedule.hpp"

using namespace icm;

namespace {

DenoiserConfig tiny_config() {
    DenoiserConfig c;
    c.widths = {8, 16};
    c.emb_dim = 16;
    c.groups = 4;
    c.num_classes = 3;
    return c;
}

void randomize(torch::nn::Module& m, double scale = 0.1) {
    torch::NoGradGuard guard;
    for (auto& p : m.parameters()) p.copy_(torch::randn_like(p) * scale);
}

torch::Tensor tokens(std::int64_t b, std::int64_t v) { return torch::full({b}, v, torch::kLong); }

}  // namespace

TEST_SUITE("models") {

TEST_CASE("denoiser output shape and feature ports") {
    torch::manual_seed(1);
    Denoiser d(tiny_config());
    auto z = torch::randn({2, 3, 16, 16});
    auto t = torch::tensor({10, 900}, torch::kLong);
    auto out = d->forward(z, t, tokens(2, 0));
    CHECK(out.sizes() == z.sizes());

    const auto shapes = d->feature_shapes(2, 16, 16);
    REQUIRE(shapes.size() == 2);
    CHECK(shapes[0] == std::vector<std::int64_t>{2, 8, 16, 16});
    CHECK(shapes[1] == std::vector<std::int64_t>{2, 16, 8, 8});

    Adapter a(4, std::vector<int>{8, 16});
    auto feats = a->forward(torch::rand({2, 4, 16, 16}));
    REQUIRE(feats.size() == 2);
    for (std::size_t l = 0; l < feats.size(); ++l) {
        CHECK(feats[l].sizes().vec() == shapes[l]);
        // zero-initialized heads
        CHECK(feats[l].abs().max().item<double>() == 0.0);
    }
    FeatureStack bad{torch::zeros({2, 8, 8, 8}), torch::zeros({2, 16, 8, 8})};
    CHECK_THROWS_AS(d->forward(z, t, tokens(2, 0), bad), ShapeError);
}

TEST_CASE("features change the prediction and scale 0 is exact") {
    torch::manual_seed(2);
    Denoiser d(tiny_config());
    randomize(*d);
    Adapter a(4, std::vector<int>{8, 16});
    randomize(*a);
    auto z = torch::randn({1, 3, 16, 16});
    auto t = tokens(1, 500);
    auto cond = torch::rand({1, 4, 16, 16});
    auto base = d->forward(z, t, tokens(1, 1));
    auto zero = encode_condition(a, cond, 0.0);
    for (auto& f : zero) CHECK(f.abs().max().item<double>() == 0.0);
    CHECK(torch::equal(d->forward(z, t, tokens(1, 1), zero), base));
    auto with = d->forward(z, t, tokens(1, 1), encode_condition(a, cond, 1.0));
    CHECK((with - base).abs().max().item<double>() > 1e-6);
}

TEST_CASE("v-prediction conversion recovers the noise") {
    const auto s = make_linear_schedule(1000, 1e-4, 0.02);
    auto z0 = torch::randn({3, 3, 4, 4}, torch::kDouble);
    auto eps = torch::randn({3, 3, 4, 4}, torch::kDouble);
    auto t = torch::tensor({1, 400, 1000}, torch::kLong);
    auto v = denoising_target(Prediction::V, s, z0, eps, t);
    auto zt = perturb(s, z0, t, eps);
    auto a = s.a_of(t, torch::kDouble);
    auto b = s.b_of(t, torch::kDouble);
    CHECK(torch::allclose(a * v + b * zt, eps, 1e-12, 1e-12));
    CHECK(torch::equal(denoising_target(Prediction::Eps, s, z0, eps, t), eps));
}

TEST_CASE("classifier-free guidance identities") {
    auto c = torch::randn({2, 3, 4, 4});
    auto u = torch::randn({2, 3, 4, 4});
    CHECK(torch::equal(cfg_combine(c, u, 1.0), c));
    CHECK(torch::equal(cfg_combine(c, u, 0.0), u));
    CHECK(torch::allclose(cfg_combine(c, u, 2.0), 2 * c - u, 1e-6, 1e-6));
    CHECK_THROWS_AS(cfg_combine(c, u, -0.5), ParameterError);
}

TEST_CASE("low-rank delta: zero multiplier is bitwise, rank is bounded") {
    torch::manual_seed(3);
    LoraConv2d conv(6, 10, 3);
    auto x = torch::randn({2, 6, 9, 9});
    auto before = conv->forward(x).detach();
    conv->attach_lora(2, 1.0);
    CHECK(conv->has_lora());
    CHECK_FALSE(conv->base->weight.requires_grad());
    CHECK(conv->up->weight.requires_grad());
    // up starts at zero so the function is unchanged
    CHECK(torch::equal(conv->forward(x), before));
    randomize(*conv->up);
    CHECK_FALSE(torch::equal(conv->forward(x), before));
    conv->set_multiplier(0.0);
    CHECK(torch::equal(conv->forward(x), before));

    conv->set_multiplier(0.7);
    auto w = conv->effective_weight();
    auto ref = torch::conv2d(x, w, conv->base->bias, 1, 1);
    CHECK(torch::allclose(conv->forward(x), ref, 1e-5, 1e-5));
    auto delta = (w - conv->base->weight).reshape({10, -1}).to(torch::kDouble);
    auto sv = torch::linalg_svdvals(delta);
    CHECK((sv > 1e-4 * sv.max()).sum().item<std::int64_t>() <= 2);
}

TEST_CASE("untrained generator reproduces bicubic upsampling") {
    torch::manual_seed(4);
    Denoiser d(tiny_config());
    randomize(*d);
    GeneratorConfig gc;
    gc.scale = 2;
    Generator g(d, gc);
    auto lq = torch::rand({2, 3, 8, 8});
    auto out = g->forward(lq, tokens(2, 0));
    CHECK(out.sizes() == torch::IntArrayRef({2, 3, 16, 16}));
    CHECK(torch::equal(out, bicubic_resize(lq, 16, 16)));

    // only the low-rank factors and the two adapters train
    for (const auto& item : g->named_parameters()) {
        const bool lora = item.key().find(".lora_down.") != std::string::npos ||
                          item.key().find(".lora_up.") != std::string::npos;
        const bool adapters = item.key().rfind("input_adapter", 0) == 0 ||
                              item.key().rfind("output_head", 0) == 0;
        CHECK_MESSAGE(item.value().requires_grad() == (lora || adapters), item.key());
    }
    CHECK(count_parameters(*g, true) < count_parameters(*d) / 2);
}

TEST_CASE("residual low-pass removal") {
    torch::manual_seed(6);
    Denoiser d(tiny_config());
    randomize(*d);
    auto lq = torch::rand({2, 3, 8, 8});
    auto residual_mean = [&](int pool) {
        GeneratorConfig gc;
        gc.scale = 2;
        gc.residual_pool = pool;
        Generator g(d, gc);
        torch::manual_seed(7);
        randomize(*g->output_head, 0.5);
        torch::NoGradGuard guard;
        return (g->forward(lq, tokens(2, 1)) - bicubic_resize(lq, 16, 16)).mean({2, 3}).abs().max().item<double>();
    };
    // a single block covering the image removes exactly the per-channel mean
    CHECK(residual_mean(16) < 1e-6);
    CHECK(residual_mean(0) > 1e-3);
}

TEST_CASE("bundle freezes teacher and adapter") {
    torch::manual_seed(5);
    Denoiser d(tiny_config());
    Adapter a(4, std::vector<int>{8, 16});
    auto bundle = ModelBundle::assemble(d, a, GeneratorConfig{});
    CHECK(count_parameters(*bundle.teacher, true) == 0);
    CHECK(count_parameters(*bundle.adapter, true) == 0);
    CHECK(count_parameters(*bundle.aux, true) > 0);
    CHECK(count_parameters(*bundle.generator, true) > 0);
    auto z = torch::randn({1, 3, 16, 16});
    CHECK(torch::equal(bundle.aux->forward(z, tokens(1, 300), tokens(1, 3)),
                       bundle.teacher->forward(z, tokens(1, 300), tokens(1, 3))));
}

TEST_CASE("copy_weights and checkpoint round trip") {
    torch::manual_seed(6);
    Denoiser a(tiny_config());
    randomize(*a);
    Denoiser b(tiny_config());
    copy_weights(*a, *b);
    auto z = torch::randn({1, 3, 16, 16});
    CHECK(torch::equal(a->forward(z, tokens(1, 7), tokens(1, 2)), b->forward(z, tokens(1, 7), tokens(1, 2))));

    const auto path = std::filesystem::temp_directory_path() / "icm_models_roundtrip.ckpt";
    Checkpoint ck;
    ck.metadata["note"] = "unit";
    ck.add_module("teacher", *a);
    save_checkpoint(path, ck);
    const auto back = load_checkpoint(path);
    CHECK(back.metadata["note"] == "unit");
    Denoiser c(tiny_config());
    back.load_module("teacher", *c);
    CHECK(torch::equal(a->forward(z, tokens(1, 7), tokens(1, 2)), c->forward(z, tokens(1, 7), tokens(1, 2))));

    auto wide_cfg = tiny_config();
    wide_cfg.widths = {8, 32};
    Denoiser wide(wide_cfg);
    CHECK_THROWS_AS(back.load_module("teacher", *wide), ShapeError);
    std::filesystem::remove(path);
    CHECK_THROWS_AS(load_checkpoint(path), PrerequisiteError);
}

}  // TEST_SUITE
