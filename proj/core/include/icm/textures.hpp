// Copyright 2026 The ICM-SR Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "icm/image.hpp"
#include "icm/rng.hpp"

namespace icm {

/// Procedural HQ image families; the family index doubles as the class token.
enum class TextureFamily { Gradient, Checkerboard, Blobs, BandNoise, Shapes };

inline constexpr int kNumTextureFamilies = 5;

std::string to_string(TextureFamily f);
TextureFamily texture_family_from_string(const std::string& name);
std::vector<TextureFamily> all_texture_families();

Image render_texture(TextureFamily family, int size, Rng& rng);

struct LabeledImage {
    Image image;
    int label = 0;  // index into the family list the set was built from
    TextureFamily family = TextureFamily::Gradient;
};

/// `count` images cycling through `families` in order; image i is rendered
/// from a seed derived from (seed, i), so sets are reproducible and prefixes
/// are stable.
std::vector<LabeledImage> make_texture_set(int count, int size, std::uint64_t seed,
                                           const std::vector<TextureFamily>& families);

}  // namespace icm
