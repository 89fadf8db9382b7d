// Copyright 2026 The ICM-SR Authors
// SPDX-License-Identifier: Apache-2.0

#include "icm/textures.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "icm/errors.hpp"

namespace icm {

std::string to_string(TextureFamily f) {
    switch (f) {
        case TextureFamily::Gradient: return "gradient";
        case TextureFamily::Checkerboard: return "checkerboard";
        case TextureFamily::Blobs: return "blobs";
        case TextureFamily::BandNoise: return "band_noise";
        case TextureFamily::Shapes: return "shapes";
    }
    return "unknown";
}

TextureFamily texture_family_from_string(const std::string& name) {
    for (auto f : all_texture_families())
        if (to_string(f) == name) return f;
    throw ParameterError("unknown texture family '" + name + "'");
}

std::vector<TextureFamily> all_texture_families() {
    return {TextureFamily::Gradient, TextureFamily::Checkerboard, TextureFamily::Blobs,
            TextureFamily::BandNoise, TextureFamily::Shapes};
}

namespace {

using Color = std::array<double, 3>;

Color random_color(Rng& rng) { return {rng.uniform(0, 1), rng.uniform(0, 1), rng.uniform(0, 1)}; }

void put(Image& img, int y, int x, const Color& c) {
    for (int ch = 0; ch < 3; ++ch) img.at(ch, y, x) = static_cast<float>(std::clamp(c[ch], 0.0, 1.0));
}

Color mix(const Color& a, const Color& b, double t) {
    return {a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t, a[2] + (b[2] - a[2]) * t};
}

Image gradient(int n, Rng& rng) {
    const Color c0 = random_color(rng), c1 = random_color(rng);
    const double angle = rng.uniform(0, 2 * std::numbers::pi);
    const double dx = std::cos(angle), dy = std::sin(angle);
    const double gamma = rng.uniform(0.5, 2.0);
    Image img(3, n, n);
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
            const double u = ((x - n / 2.0) * dx + (y - n / 2.0) * dy) / (n * 0.7071) + 0.5;
            put(img, y, x, mix(c0, c1, std::pow(std::clamp(u, 0.0, 1.0), gamma)));
        }
    return img;
}

Image checkerboard(int n, Rng& rng) {
    const Color c0 = random_color(rng), c1 = random_color(rng);
    const double period = rng.uniform(6.0, 20.0);
    const double angle = rng.uniform(-0.5, 0.5);
    const double ox = rng.uniform(0, period), oy = rng.uniform(0, period);
    const double ca = std::cos(angle), sa = std::sin(angle);
    Image img(3, n, n);
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
            const double u = (x * ca - y * sa + ox) / period;
            const double v = (x * sa + y * ca + oy) / period;
            const bool odd = (static_cast<long>(std::floor(u)) + static_cast<long>(std::floor(v))) & 1;
            put(img, y, x, odd ? c1 : c0);
        }
    return img;
}

Image blobs(int n, Rng& rng) {
    const Color bg = random_color(rng);
    const int count = static_cast<int>(rng.uniform_int(3, 7));
    struct Blob {
        double cx, cy, r;
        Color c;
    };
    std::vector<Blob> bl;
    for (int i = 0; i < count; ++i)
        bl.push_back({rng.uniform(0, n), rng.uniform(0, n), rng.uniform(n * 0.06, n * 0.25),
                      random_color(rng)});
    Image img(3, n, n);
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
            Color c = bg;
            for (const auto& b : bl) {
                const double d2 = (x - b.cx) * (x - b.cx) + (y - b.cy) * (y - b.cy);
                c = mix(c, b.c, std::exp(-0.5 * d2 / (b.r * b.r)));
            }
            put(img, y, x, c);
        }
    return img;
}

Image band_noise(int n, Rng& rng) {
    const Color c0 = random_color(rng), c1 = random_color(rng);
    const double f_lo = rng.uniform(1.5, 3.0), f_hi = f_lo * rng.uniform(1.5, 3.0);
    constexpr int waves = 12;
    struct Wave {
        double fx, fy, phase, amp;
    };
    std::vector<Wave> ws;
    for (int i = 0; i < waves; ++i) {
        const double f = rng.uniform(f_lo, f_hi) * 2 * std::numbers::pi / n;
        const double th = rng.uniform(0, std::numbers::pi);
        ws.push_back({f * std::cos(th), f * std::sin(th), rng.uniform(0, 2 * std::numbers::pi),
                      rng.uniform(0.5, 1.0)});
    }
    Image img(3, n, n);
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
            double s = 0.0;
            for (const auto& w : ws) s += w.amp * std::sin(w.fx * x + w.fy * y + w.phase);
            const double u = 0.5 + 0.5 * std::tanh(s / std::sqrt(waves * 0.3));
            put(img, y, x, mix(c0, c1, u));
        }
    return img;
}

Image shapes(int n, Rng& rng) {
    const Color bg = random_color(rng);
    Image img(3, n, n);
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) put(img, y, x, bg);
    const int count = static_cast<int>(rng.uniform_int(2, 5));
    for (int i = 0; i < count; ++i) {
        const Color c = random_color(rng);
        const auto kind = rng.uniform_int(0, 2);
        const double cx = rng.uniform(0, n), cy = rng.uniform(0, n);
        const double r = rng.uniform(n * 0.1, n * 0.3);
        const double rot = rng.uniform(0, std::numbers::pi);
        for (int y = 0; y < n; ++y)
            for (int x = 0; x < n; ++x) {
                const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
                const double u = dx * std::cos(rot) + dy * std::sin(rot);
                const double v = -dx * std::sin(rot) + dy * std::cos(rot);
                bool inside = false;
                if (kind == 0) {
                    inside = dx * dx + dy * dy <= r * r;
                } else if (kind == 1) {
                    inside = std::abs(u) <= r && std::abs(v) <= r * 0.6;
                } else {
                    // Triangle with apex at -r along v.
                    inside = v <= r * 0.5 && v >= -r && std::abs(u) <= (v + r) * 0.577;
                }
                if (inside) put(img, y, x, c);
            }
    }
    return img;
}

}  // namespace

Image render_texture(TextureFamily family, int size, Rng& rng) {
    if (size < 8) throw ParameterError("render_texture: size must be >= 8");
    switch (family) {
        case TextureFamily::Gradient: return gradient(size, rng);
        case TextureFamily::Checkerboard: return checkerboard(size, rng);
        case TextureFamily::Blobs: return blobs(size, rng);
        case TextureFamily::BandNoise: return band_noise(size, rng);
        case TextureFamily::Shapes: return shapes(size, rng);
    }
    throw ParameterError("render_texture: unknown family");
}

std::vector<LabeledImage> make_texture_set(int count, int size, std::uint64_t seed,
                                           const std::vector<TextureFamily>& families) {
    if (families.empty()) throw ParameterError("make_texture_set: no families");
    std::vector<LabeledImage> out;
    out.reserve(static_cast<std::size_t>(std::max(count, 0)));
    for (int i = 0; i < count; ++i) {
        const auto label = i % static_cast<int>(families.size());
        Rng rng(mix_seed(seed, static_cast<std::uint64_t>(i)));
        out.push_back({render_texture(families[label], size, rng), label, families[label]});
    }
    return out;
}

}  // namespace icm
