// Copyright 2026 The ICM-SR Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <random>

#include <ATen/core/Generator.h>

namespace icm {

/// Random source shared by scalar draws (timesteps, degradation parameters)
/// and tensor draws (Gaussian noise). Both streams derive from one seed, so a
/// seeded Rng reproduces the same sequence on a single worker.
class Rng {
public:
    explicit Rng(std::uint64_t seed);

    std::mt19937_64& engine() { return engine_; }
    at::Generator& torch_generator() { return torch_gen_; }
    std::uint64_t seed() const { return seed_; }

    double uniform(double lo, double hi);
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);  // inclusive
    double normal();
    std::uint64_t next_u64() { return engine_(); }

    /// Independent child stream; `stream` names the purpose so that adding a
    /// consumer on one stream never shifts another.
    Rng split(std::uint64_t stream) const;

private:
    std::uint64_t seed_;
    std::mt19937_64 engine_;
    at::Generator torch_gen_;
};

/// SplitMix64 finalizer, used to derive child seeds.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace icm
