// Copyright 2026 The ICM-SR Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>
#include <torch/torch.h>

#include <cmath>

#include "icm/analytic_lab.hpp"
#include "icm/errors.hpp"
#include "icm/rng.hpp"

using namespace icm;
using namespace icm::lab;

namespace {

NoiseSchedule sched() { return make_linear_schedule(1000, 1e-4, 0.02, WeightMode::Constant); }

// Score of N(a mu, a^2 s2 + b^2) by central differences of the log density;
// eps* = -b * score.
double numeric_eps(double zt, double mu, double s2, double a, double b) {
    const double var = a * a * s2 + b * b;
    auto logp = [&](double z) { return -0.5 * (z - a * mu) * (z - a * mu) / var; };
    const double h = 1e-5;
    return -b * (logp(zt + h) - logp(zt - h)) / (2 * h);
}

}  // namespace

TEST_SUITE("analytic_lab") {

TEST_CASE("deterministic spec recovers the sampled noise") {
    const auto s = sched();
    Rng rng(3);
    auto mu = torch::randn({8}, rng.torch_generator(), torch::kDouble);
    const GaussianSpec spec{mu, 0.0, "c"};
    for (int t : {1, 20, 500, 980, 1000}) {
        auto eps = torch::randn({8}, rng.torch_generator(), torch::kDouble);
        auto zt = s.a(Timestep(t)) * mu + s.b(Timestep(t)) * eps;
        auto out = analytic_eps(spec, zt, Timestep(t), s);
        CHECK((out - eps).abs().max().item<double>() <= 1e-9);
    }
}

TEST_CASE("unit-variance plug-in value agrees with a numerical score") {
    const double a = 1.0 / std::sqrt(2.0), b = a;
    const GaussianSpec spec{torch::zeros({3}, torch::kDouble), 1.0, "c"};
    auto zt = torch::tensor({0.3, -1.2, 2.5}, torch::kDouble);
    auto out = analytic_eps(spec, zt, a, b);
    for (int i = 0; i < 3; ++i) {
        const double z = zt[i].item<double>();
        CHECK(out[i].item<double>() == doctest::Approx(z / std::sqrt(2.0)).epsilon(1e-12));
        CHECK(out[i].item<double>() == doctest::Approx(numeric_eps(z, 0.0, 1.0, a, b)).epsilon(1e-7));
    }
}

TEST_CASE("general variance matches the numerical score") {
    const auto s = sched();
    for (double s2 : {0.25, 1.0, 4.0}) {
        for (int t : {50, 400, 900}) {
            const double a = s.a(Timestep(t)), b = s.b(Timestep(t));
            const GaussianSpec spec{torch::full({1}, 0.7, torch::kDouble), s2, "c"};
            auto zt = torch::full({1}, -0.4, torch::kDouble);
            CHECK(analytic_eps(spec, zt, a, b).item<double>() ==
                  doctest::Approx(numeric_eps(-0.4, 0.7, s2, a, b)).epsilon(1e-7));
        }
    }
}

TEST_CASE("large variance drives the prediction to zero") {
    const double a = 0.8, b = 0.6;
    auto zt = torch::full({1}, 1.5, torch::kDouble);
    double prev = 1e9;
    for (double s2 : {1.0, 1e2, 1e4, 1e8}) {
        const GaussianSpec spec{torch::zeros({1}, torch::kDouble), s2, "c"};
        const double v = std::abs(analytic_eps(spec, zt, a, b).item<double>());
        CHECK(v < prev);
        prev = v;
    }
    CHECK(prev < 1e-6);
}

TEST_CASE("degenerate denominator raises a numerical-domain error") {
    const GaussianSpec spec{torch::zeros({1}, torch::kDouble), 0.0, "c"};
    CHECK_THROWS_AS(analytic_eps(spec, torch::zeros({1}, torch::kDouble), 1.0, 0.0), NumericalDomainError);
}

TEST_CASE("verify_lemma1 stays within 1e-9") {
    const auto s = sched();
    Rng rng(11);
    const GaussianSpec spec{torch::randn({32}, rng.torch_generator(), torch::kDouble) * 3.0, 0.0, "c"};
    const auto report = verify_lemma1(spec, 1000, s, rng);
    CHECK(report.samples.size() == 1000);
    CHECK(report.max_deviation <= 1e-9);
    const auto by_t = report.per_timestep();
    CHECK_FALSE(by_t.empty());
    for (std::size_t i = 1; i < by_t.size(); ++i) CHECK(by_t[i - 1].t < by_t[i].t);
    Rng rng2(12);
    CHECK(verify_lemma1_random_means(4, 1000, 5.0, s, rng2).max_deviation <= 1e-9);
}

TEST_CASE("near-deterministic targets deviate by an amount that shrinks with the variance") {
    const auto s = sched();
    auto mu = torch::full({4}, 0.5, torch::kDouble);
    auto eps = torch::tensor({0.3, -0.2, 1.1, -1.7}, torch::kDouble);
    const Timestep t(10);
    auto zt = s.a(t) * mu + s.b(t) * eps;
    double prev = 1e9;
    for (double s2 : {1e-4, 1e-6, 1e-8}) {
        const GaussianSpec spec{mu, s2, "c"};
        const double dev = (analytic_eps(spec, zt, t, s) - eps).abs().max().item<double>();
        CHECK(dev > 0.0);
        CHECK(dev < prev);
        prev = dev;
    }
}

TEST_CASE("closed-form KL gradient") {
    auto mu = torch::tensor({0.4, -1.3}, torch::kDouble);
    const GaussianSpec target{mu, 1.0, "c"};
    CHECK(torch::equal(closed_form_kl_grad(mu, target), torch::zeros({2}, torch::kDouble)));
    auto e1 = torch::tensor({1.0, 0.0}, torch::kDouble);
    CHECK(torch::allclose(closed_form_kl_grad(mu + e1, target), e1));

    Rng rng(5);
    auto theta = torch::randn({2}, rng.torch_generator(), torch::kDouble);
    auto kl = [&](const torch::Tensor& th) { return 0.5 * (th - mu).pow(2).sum().item<double>(); };
    auto g = closed_form_kl_grad(theta, target);
    for (int i = 0; i < 2; ++i) {
        auto tp = theta.clone(), tm = theta.clone();
        tp[i] += 1e-5;
        tm[i] -= 1e-5;
        CHECK(std::abs((kl(tp) - kl(tm)) / 2e-5 - g[i].item<double>()) < 1e-6);
    }
}

TEST_CASE("Monte-Carlo VSD gradient vanishes at the target and points along theta - mu") {
    const auto s = sched();
    auto mu = torch::tensor({0.2, -0.5}, torch::kDouble);
    const GaussianSpec target{mu, 1.0, "c"};
    Rng rng(21);
    auto at_target = mc_vsd_grad(mu, target, s, 5000, rng);
    CHECK((at_target.mean.abs() <= 3.0 * at_target.std_error + 1e-15).all().item<bool>());

    auto theta = mu + torch::tensor({0.6, 0.8}, torch::kDouble);
    auto est = mc_vsd_grad(theta, target, s, 20000, rng);
    CHECK(lab::cosine_similarity(est.mean, closed_form_kl_grad(theta, target)) > 0.99);
}

TEST_CASE("deterministic target turns the estimator into the SDS form") {
    // With sigma0^2 = 0 the target score is (z - a mu) / b; along a fixed draw
    // (real - fake) equals the SDS difference (real - eps) whenever the fake
    // score recovers eps, i.e. for a deterministic generator.
    const auto s = sched();
    auto mu = torch::tensor({0.1, 0.9}, torch::kDouble);
    auto theta = torch::tensor({-0.3, 0.4}, torch::kDouble);
    const GaussianSpec target{mu, 0.0, "target"};
    const GaussianSpec gen{theta, 0.0, "generator"};
    Rng rng(8);
    for (int i = 0; i < 50; ++i) {
        const Timestep t = sample_reg_timestep(s, rng);
        auto eps = torch::randn({2}, rng.torch_generator(), torch::kDouble);
        auto zt = s.a(t) * theta + s.b(t) * eps;
        auto fake = analytic_eps(gen, zt, t, s);
        auto real = analytic_eps(target, zt, t, s);
        REQUIRE((fake - eps).abs().max().item<double>() <= 1e-9);
        REQUIRE(((real - fake) - (real - eps)).abs().max().item<double>() <= 1e-9);
    }
}

TEST_CASE("cosine similarity basics") {
    auto x = torch::tensor({1.0, 0.0}, torch::kDouble);
    CHECK(lab::cosine_similarity(x, x) == doctest::Approx(1.0));
    CHECK(lab::cosine_similarity(x, -x) == doctest::Approx(-1.0));
    CHECK(lab::cosine_similarity(x, torch::tensor({0.0, 2.0}, torch::kDouble)) == doctest::Approx(0.0));
}

}  // TEST_SUITE
