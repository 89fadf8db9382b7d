// Copyright 2026 The ICM-SR Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>
#include <torch/torch.h>

#include "icm/errors.hpp"
#include "icm/rng.hpp"
#include "icm/schedule.hpp"

using namespace icm;

namespace {

// Cumulative products of (1 - beta_s) for the (1000, 1e-4, 0.02) schedule,
// evaluated with 50-digit arithmetic.
constexpr double kA1 = 0.99994999874993749609;
constexpr double kA20 = 0.99711130355951635553;
constexpr double kA860 = 0.023672006292952223805;
constexpr double kA980 = 0.0077600969167113083808;
constexpr double kA1000 = 0.006352818087570022113;

}  // namespace

TEST_SUITE("schedule") {

TEST_CASE("linear schedule matches high-precision cumulative products") {
    const auto s = make_linear_schedule(1000, 1e-4, 0.02);
    CHECK(s.num_steps() == 1000);
    CHECK(s.a(Timestep(1)) == doctest::Approx(kA1).epsilon(1e-13));
    CHECK(s.a(Timestep(20)) == doctest::Approx(kA20).epsilon(1e-12));
    CHECK(s.a(Timestep(860)) == doctest::Approx(kA860).epsilon(1e-10));
    CHECK(s.a(Timestep(980)) == doctest::Approx(kA980).epsilon(1e-10));
    CHECK(s.a(Timestep(1000)) == doctest::Approx(kA1000).epsilon(1e-10));
    CHECK(s.a(Timestep(1)) > 0.999);
    CHECK(s.b(Timestep(1)) < 0.02);
    CHECK(s.a(Timestep(1000)) < 0.01);
}

TEST_CASE("variance preservation and monotonicity") {
    for (int n : {2, 10, 1000, 4000}) {
        const auto s = make_linear_schedule(n, 1e-4, 0.02);
        for (int t = 1; t <= n; ++t) {
            const double a = s.a(Timestep(t)), b = s.b(Timestep(t));
            REQUIRE(std::abs(a * a + b * b - 1.0) <= 1e-12);
            if (t > 1) {
                REQUIRE(a < s.a(Timestep(t - 1)));
                // b saturates at 1 in double once alpha_bar is below the ulp of 1
                if (1.0 - b > 1e-12) REQUIRE(b > s.b(Timestep(t - 1)));
                else REQUIRE(b >= s.b(Timestep(t - 1)));
            }
        }
    }
}

TEST_CASE("invalid schedule parameters are rejected") {
    CHECK_THROWS_AS(make_linear_schedule(1, 1e-4, 0.02), ParameterError);
    CHECK_THROWS_AS(make_linear_schedule(100, 0.0, 0.02), ParameterError);
    CHECK_THROWS_AS(make_linear_schedule(100, 0.03, 0.02), ParameterError);
    CHECK_THROWS_AS(make_linear_schedule(100, 1e-4, 1.0), ParameterError);
    const auto s = make_linear_schedule(100, 1e-4, 0.02);
    CHECK_THROWS_AS(s.a(Timestep(0)), ParameterError);
    CHECK_THROWS_AS(s.b(Timestep(101)), ParameterError);
}

TEST_CASE("weights follow the configured mode") {
    const auto inv = make_linear_schedule(1000, 1e-4, 0.02, WeightMode::InverseNoise, 12288);
    const auto cst = make_linear_schedule(1000, 1e-4, 0.02, WeightMode::Constant, 12288);
    for (int t : {1, 500, 1000}) {
        CHECK(inv.weight(Timestep(t)) == doctest::Approx(1.0 / (12288.0 * inv.b(Timestep(t)))));
        CHECK(cst.weight(Timestep(t)) == 1.0);
    }
    CHECK(weight_mode_from_string(to_string(WeightMode::InverseNoise)) == WeightMode::InverseNoise);
    CHECK_THROWS_AS(weight_mode_from_string("cosine"), ParameterError);
}

TEST_CASE("perturb edge cases and predict_x0 round trip") {
    const auto s = make_linear_schedule(1000, 1e-4, 0.02);
    auto z0 = torch::randn({2, 3, 4, 4}, torch::kDouble);
    auto eps = torch::randn({2, 3, 4, 4}, torch::kDouble);
    for (int t : {1, 20, 500, 980, 1000}) {
        const Timestep ts(t);
        CHECK(torch::equal(perturb(s, z0, ts, torch::zeros_like(eps)), s.a(ts) * z0));
        CHECK(torch::equal(perturb(s, torch::zeros_like(z0), ts, eps), s.b(ts) * eps));
        auto back = predict_x0(s, perturb(s, z0, ts, eps), ts, eps);
        CHECK((back - z0).abs().max().item<double>() <= 1e-10);
        CHECK(torch::allclose(predict_x0(s, z0, ts, torch::zeros_like(eps)), z0 / s.a(ts)));
    }
    auto t = torch::tensor({3, 999}, torch::kLong);
    auto back = predict_x0(s, perturb(s, z0, t, eps), t, eps);
    CHECK((back - z0).abs().max().item<double>() <= 1e-10);
    CHECK_THROWS_AS(perturb(s, z0, Timestep(5), torch::zeros({2, 3})), ShapeError);
    CHECK_THROWS_AS(perturb(s, z0, torch::tensor({1}, torch::kLong), eps), ShapeError);
}

TEST_CASE("predict_x0 refuses a vanishing signal coefficient") {
    const NoiseSchedule s({1.0 - 1e-9, 1e-9}, {std::sqrt(2e-9), 1.0}, WeightMode::Constant, 1, 0.1, 0.1);
    auto z = torch::ones({1, 2}, torch::kDouble);
    CHECK_NOTHROW(predict_x0(s, z, Timestep(1), z));
    CHECK_THROWS_AS(predict_x0(s, z, Timestep(2), z), NumericalDomainError);
}

TEST_CASE("regularization timesteps are uniform on [20, 980]") {
    const auto s = make_linear_schedule(1000, 1e-4, 0.02);
    CHECK(s.reg_t_min() == 20);
    CHECK(s.reg_t_max() == 980);
    Rng rng(7);
    int lo = 1 << 30, hi = 0;
    double sum = 0.0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
        const int t = sample_reg_timestep(s, rng).value;
        lo = std::min(lo, t);
        hi = std::max(hi, t);
        sum += t;
    }
    CHECK(lo >= 20);
    CHECK(hi <= 980);
    CHECK(lo == 20);
    CHECK(hi == 980);
    CHECK(std::abs(sum / n - 500.0) < 10.0);

    Rng r1(99), r2(99);
    for (int i = 0; i < 1000; ++i) REQUIRE(sample_reg_timestep(s, r1) == sample_reg_timestep(s, r2));
    auto b1 = sample_reg_timesteps(s, r1, 64);
    auto b2 = sample_reg_timesteps(s, r2, 64);
    CHECK(torch::equal(b1, b2));
    CHECK(b1.min().item<std::int64_t>() >= 20);
    CHECK(b1.max().item<std::int64_t>() <= 980);
}

TEST_CASE("regularization bounds scale with the step count") {
    const auto s = make_linear_schedule(100, 1e-3, 0.2);
    CHECK(s.reg_t_min() == 2);
    CHECK(s.reg_t_max() == 98);
}

}  // TEST_SUITE
