// Copyright 2026 The ICM-SR Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>
#include <torch/torch.h>

#include "icm/analytic_lab.hpp"
#include "icm/distill.hpp"
#include "icm/errors.hpp"
#include "icm/models.hpp"
#include "icm/schedule.hpp"

using namespace icm;

namespace {

// Mean of a_t^2 over t = 1..1000 for the (1e-4, 0.02) linear schedule,
// evaluated with 50-digit arithmetic.
constexpr double kMeanA2 = 0.2755132334;

DenoiserConfig tiny_config(Prediction p = Prediction::V) {
    DenoiserConfig c;
    c.widths = {8, 16};
    c.emb_dim = 16;
    c.groups = 4;
    c.num_classes = 3;
    c.prediction = p;
    return c;
}

TensorDataset tiny_data(std::int64_t n, std::uint64_t seed) {
    torch::manual_seed(seed);
    TensorDataset d;
    d.hq = torch::rand({n, 3, 16, 16});
    d.lq = torch::avg_pool2d(d.hq, 4);
    d.cond = torch::rand({n, 4, 16, 16});
    d.labels = torch::randint(0, 3, {n}, torch::kLong);
    return d;
}

void randomize(torch::nn::Module& m, double scale) {
    torch::NoGradGuard guard;
    for (auto& p : m.parameters()) p.copy_(torch::randn_like(p) * scale);
}

struct Fixture {
    NoiseSchedule schedule = make_linear_schedule(1000, 1e-4, 0.02);
    ModelBundle bundle;

    explicit Fixture(std::uint64_t seed = 1) {
        torch::manual_seed(seed);
        Denoiser teacher(tiny_config());
        randomize(*teacher, 0.1);
        Adapter adapter(4, std::vector<int>{8, 16});
        randomize(*adapter, 0.1);
        bundle = ModelBundle::assemble(teacher, adapter, GeneratorConfig{});
    }
};

TrainConfig small_train(Regularizer r) {
    TrainConfig c;
    c.regularizer = r;
    c.batch_size = 2;
    c.iterations = 4;
    c.lr_generator = 1e-3;
    c.lr_aux = 1e-3;
    c.seed = 99;
    return c;
}

}  // namespace

TEST_SUITE("distill") {

TEST_CASE("regularizer names round-trip") {
    for (auto r : {Regularizer::None, Regularizer::Sds, Regularizer::VsdText, Regularizer::Icm}) {
        CHECK(regularizer_from_string(to_string(r)) == r);
    }
    CHECK_THROWS_AS(regularizer_from_string("vsd"), ParameterError);
}

TEST_CASE("cosine learning rate") {
    CHECK(cosine_lr(1.0, 0, 100) == doctest::Approx(1.0));
    CHECK(cosine_lr(1.0, 50, 100) == doctest::Approx(0.5));
    CHECK(cosine_lr(1.0, 100, 100) == doctest::Approx(0.0));
}

TEST_CASE("initial denoising loss of an untrained network") {
    const auto s = make_linear_schedule(1000, 1e-4, 0.02);
    const auto data = tiny_data(64, 3);
    torch::manual_seed(5);
    Denoiser eps_model(tiny_config(Prediction::Eps));
    const double eps_loss = evaluate_denoising_loss(eps_model, nullptr, 1.0, data, s, 7, 16);
    CHECK(eps_loss == doctest::Approx(1.0).epsilon(0.02));

    Denoiser v_model(tiny_config(Prediction::V));
    const double v_loss = evaluate_denoising_loss(v_model, nullptr, 1.0, data, s, 7, 16);
    const double ez2 = data.hq.pow(2).mean().item<double>();
    CHECK(v_loss == doctest::Approx(kMeanA2 + (1.0 - kMeanA2) * ez2).epsilon(0.05));
}

TEST_CASE("teacher pretraining reduces held-out loss") {
    const auto s = make_linear_schedule(1000, 1e-4, 0.02);
    auto train = tiny_data(32, 4);
    // structured images so that there is something to learn
    train.hq = torch::linspace(0, 1, 16).view({1, 1, 1, 16}).expand({32, 3, 16, 16}).contiguous();
    torch::manual_seed(6);
    Denoiser d(tiny_config());
    PretrainConfig pc;
    pc.iterations = 60;
    pc.batch_size = 8;
    pc.lr = 3e-3;
    const auto r = pretrain_teacher(d, train, train.slice(0, 8), s, pc, 11);
    CHECK(r.losses.size() == 60);
    CHECK(r.heldout_after < r.heldout_before);
    CHECK(count_parameters(*d, true) == 0);
}

TEST_CASE("regularization gradient stays out of frozen networks") {
    Fixture f;
    const auto data = tiny_data(2, 8);
    auto cfg = small_train(Regularizer::Icm);
    Rng rng(3);
    auto z0_hat = f.bundle.generator->forward(data.lq, data.labels);
    auto term = icm_reg_grad(f.bundle, z0_hat, data.cond, data.labels, f.schedule, cfg, rng);
    CHECK_FALSE(term.direction.requires_grad());
    CHECK_FALSE(term.zt.requires_grad());
    CHECK(term.surrogate.requires_grad());
    term.surrogate.backward();
    for (auto& p : f.bundle.teacher->parameters()) CHECK_FALSE(p.grad().defined());
    for (auto& p : f.bundle.adapter->parameters()) CHECK_FALSE(p.grad().defined());
    for (auto& p : f.bundle.aux->parameters()) CHECK_FALSE(p.grad().defined());
    double total = 0.0;
    for (auto& p : f.bundle.generator->trainable_parameters()) {
        if (p.grad().defined()) total += p.grad().abs().sum().item<double>();
    }
    CHECK(total > 0.0);
    const auto t = term.t;
    CHECK(t.min().item<std::int64_t>() >= f.schedule.reg_t_min());
    CHECK(t.max().item<std::int64_t>() <= f.schedule.reg_t_max());
}

TEST_CASE("surrogate delivers the direction as the latent gradient") {
    Fixture f;
    auto z0 = torch::rand({3, 3, 16, 16}).requires_grad_(true);
    auto tok = torch::tensor({0, 1, 2}, torch::kLong);
    Rng rng(4);
    auto [t, eps] = sample_reg_draw(f.schedule, rng, z0);
    auto cfg = small_train(Regularizer::VsdText);
    auto scores = make_score_pair(f.bundle, f.schedule, Regularizer::VsdText, {}, tok, cfg, eps);
    auto term = score_distillation(f.schedule, z0, t, eps, scores);
    term.surrogate.backward();
    auto a = f.schedule.a_of(t, torch::kFloat);
    CHECK(torch::allclose(z0.grad(), term.direction * a / 3.0, 1e-6, 1e-9));
}

TEST_CASE("SDS wiring matches a direct evaluation") {
    Fixture f;
    const auto data = tiny_data(2, 9);
    auto cfg = small_train(Regularizer::Sds);
    auto z0 = torch::rand({2, 3, 16, 16});
    Rng rng(21), replay(21);
    auto term = icm_reg_grad(f.bundle, z0, data.cond, data.labels, f.schedule, cfg, rng);
    auto [t, eps] = sample_reg_draw(f.schedule, replay, z0);
    REQUIRE(torch::equal(t, term.t));
    REQUIRE(torch::equal(eps, term.eps));
    torch::NoGradGuard guard;
    auto feats = encode_condition(f.bundle.adapter, data.cond, cfg.adapter_scale);
    auto zt = perturb(f.schedule, z0, t, eps);
    auto cond = denoiser_forward(f.bundle.teacher, f.schedule, zt, t, data.labels, feats);
    auto uncond = denoiser_forward(f.bundle.teacher, f.schedule, zt, t,
                                   torch::full_like(data.labels, f.bundle.teacher->null_token()));
    auto expected = f.schedule.weight_of(t, torch::kFloat) * (cfg_combine(cond, uncond, 2.0) - eps);
    CHECK(torch::equal(term.direction, expected));
}

TEST_CASE("ICM at adapter scale 0 reduces to text-only VSD") {
    Fixture f;
    const auto data = tiny_data(2, 10);
    auto z0 = torch::rand({2, 3, 16, 16});
    auto icm = small_train(Regularizer::Icm);
    icm.adapter_scale = 0.0;
    auto vsd = small_train(Regularizer::VsdText);
    Rng r1(5), r2(5);
    auto a = icm_reg_grad(f.bundle, z0, data.cond, data.labels, f.schedule, icm, r1);
    auto b = icm_reg_grad(f.bundle, z0, data.cond, data.labels, f.schedule, vsd, r2);
    CHECK(torch::equal(a.direction, b.direction));
    // with a nonzero scale the conditioned teacher differs
    icm.adapter_scale = 1.0;
    Rng r3(5);
    auto c = icm_reg_grad(f.bundle, z0, data.cond, data.labels, f.schedule, icm, r3);
    CHECK_FALSE(torch::equal(c.direction, b.direction));
}

TEST_CASE("adapter features are gated per sample below adapter_t_min") {
    Fixture f;
    const auto data = tiny_data(8, 12);
    auto z0 = torch::rand({8, 3, 16, 16});
    auto icm = small_train(Regularizer::Icm);
    auto vsd = small_train(Regularizer::VsdText);
    icm.adapter_t_min = 1000;  // above every regularization draw
    Rng r1(8), r2(8);
    auto all_gated = icm_reg_grad(f.bundle, z0, data.cond, data.labels, f.schedule, icm, r1);
    auto text = icm_reg_grad(f.bundle, z0, data.cond, data.labels, f.schedule, vsd, r2);
    CHECK(torch::equal(all_gated.direction, text.direction));

    icm.adapter_t_min = 500;
    Rng r3(8);
    auto mixed = icm_reg_grad(f.bundle, z0, data.cond, data.labels, f.schedule, icm, r3);
    int below = 0;
    for (int i = 0; i < 8; ++i) {
        const bool same = torch::equal(mixed.direction[i], text.direction[i]);
        if (mixed.t[i].item<std::int64_t>() < 500) {
            ++below;
            CHECK(same);
        } else {
            CHECK_FALSE(same);
        }
    }
    CHECK(below > 0);
    CHECK(below < 8);
}

TEST_CASE("identical real and fake networks give a zero gradient") {
    Fixture f;
    const auto data = tiny_data(2, 11);
    auto cfg = small_train(Regularizer::VsdText);
    cfg.guidance = 1.0;
    Rng rng(6);
    auto term = icm_reg_grad(f.bundle, torch::rand({2, 3, 16, 16}), data.cond, data.labels,
                             f.schedule, cfg, rng);
    CHECK(term.direction.abs().max().item<double>() == 0.0);
}

TEST_CASE("score distillation descends the KL between Gaussians") {
    // Generator z0 = theta + xi, target N(mu, I); both scores analytic.
    const auto s = make_linear_schedule(1000, 1e-4, 0.02);
    torch::manual_seed(12);
    const std::int64_t n = 10000, dim = 8;
    auto theta = torch::randn({dim}, torch::kDouble).requires_grad_(true);
    auto mu = torch::randn({dim}, torch::kDouble);
    auto xi = torch::randn({n, 1, 1, dim}, torch::kDouble);
    auto z0 = theta.view({1, 1, 1, dim}) + xi;
    Rng rng(13);
    auto [t, eps] = sample_reg_draw(s, rng, z0);
    auto gaussian_eps = [&s](const torch::Tensor& mean) {
        return [&s, mean](const torch::Tensor& zt, const torch::Tensor& tt) {
            auto a = s.a_of(tt, torch::kDouble);
            auto b = s.b_of(tt, torch::kDouble);
            return b * (zt - a * mean.view({1, 1, 1, -1})) / (a * a + b * b);
        };
    };
    ScorePair scores{gaussian_eps(mu), gaussian_eps(theta.detach())};
    auto term = score_distillation(s, z0, t, eps, scores);
    term.surrogate.backward();
    const double cos = lab::cosine_similarity(theta.grad(), (theta - mu).detach());
    CHECK(cos > 0.95);
}

TEST_CASE("reconstruction-only step ignores a zero-weighted regularizer") {
    const auto data = tiny_data(2, 14);
    Fixture f1(2), f2(2);
    auto none = small_train(Regularizer::None);
    auto icm = small_train(Regularizer::Icm);
    icm.lambda_reg = 0.0;
    Distiller d1(f1.bundle, f1.schedule, none, PerceptualProxy());
    Distiller d2(f2.bundle, f2.schedule, icm, PerceptualProxy());
    const auto r1 = d1.step(data);
    const auto r2 = d2.step(data);
    CHECK(r1.reg_grad_norm == 0.0);
    CHECK(r1.aux_loss == 0.0);
    CHECK(r2.aux_loss > 0.0);
    CHECK(r1.rec_l2 == r2.rec_l2);
    auto p1 = f1.bundle.generator->parameters();
    auto p2 = f2.bundle.generator->parameters();
    REQUIRE(p1.size() == p2.size());
    for (std::size_t i = 0; i < p1.size(); ++i) CHECK(torch::equal(p1[i], p2[i]));
}

TEST_CASE("distillation is deterministic under a fixed seed") {
    const auto train = tiny_data(6, 15);
    Fixture f1(3), f2(3);
    auto cfg = small_train(Regularizer::Icm);
    Distiller d1(f1.bundle, f1.schedule, cfg, PerceptualProxy());
    Distiller d2(f2.bundle, f2.schedule, cfg, PerceptualProxy());
    const auto a = d1.run(train);
    const auto b = d2.run(train);
    REQUIRE(a.size() == 4);
    REQUIRE(b.size() == 4);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].rec_l2 == b[i].rec_l2);
        CHECK(a[i].reg_grad_norm == b[i].reg_grad_norm);
        CHECK(a[i].aux_loss == b[i].aux_loss);
    }
    auto p1 = f1.bundle.generator->parameters();
    auto p2 = f2.bundle.generator->parameters();
    for (std::size_t i = 0; i < p1.size(); ++i) CHECK(torch::equal(p1[i], p2[i]));
    CHECK(d1.iteration() == 4);
}

TEST_CASE("auxiliary network fits a fixed generator output") {
    Fixture f;
    auto z0 = torch::rand({4, 3, 16, 16});
    auto tok = torch::tensor({0, 1, 2, 0}, torch::kLong);
    auto t = torch::tensor({100, 300, 500, 700}, torch::kLong);
    auto eps = torch::randn({4, 3, 16, 16});
    torch::optim::Adam opt(f.bundle.aux->lora_parameters(), torch::optim::AdamOptions(1e-2));
    const double first = aux_loss(f.bundle.aux, f.schedule, z0, t, eps, tok).item<double>();
    for (int i = 0; i < 40; ++i) {
        opt.zero_grad();
        auto l = aux_loss(f.bundle.aux, f.schedule, z0, t, eps, tok);
        l.backward();
        opt.step();
    }
    const double last = aux_loss(f.bundle.aux, f.schedule, z0, t, eps, tok).item<double>();
    CHECK(last < 0.8 * first);
    for (auto& p : f.bundle.teacher->parameters()) CHECK_FALSE(p.grad().defined());
}

TEST_CASE("invalid training configurations are rejected") {
    Fixture f;
    auto cfg = small_train(Regularizer::Icm);
    cfg.lr_generator = 0.0;
    CHECK_THROWS_AS(Distiller(f.bundle, f.schedule, cfg, PerceptualProxy()), ParameterError);
    cfg = small_train(Regularizer::Icm);
    cfg.adapter_scale = -1.0;
    CHECK_THROWS_AS(Distiller(f.bundle, f.schedule, cfg, PerceptualProxy()), ParameterError);
    CHECK_THROWS_AS(make_score_pair(f.bundle, f.schedule, Regularizer::None, {}, torch::zeros({1}, torch::kLong),
                                    cfg, torch::zeros({1})),
                    ParameterError);
}

}  // TEST_SUITE
