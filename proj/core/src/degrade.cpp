// Copyright 2026 The ICM-SR Authors
// SPDX-License-Identifier: Apache-2.0

#include "icm/degrade.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <random>

#include "icm/errors.hpp"

namespace icm {

std::string to_string(ResampleFilter f) {
    switch (f) {
        case ResampleFilter::Nearest: return "nearest";
        case ResampleFilter::Bilinear: return "bilinear";
        case ResampleFilter::Area: return "area";
    }
    return "unknown";
}

ResampleFilter resample_filter_from_string(const std::string& name) {
    if (name == "nearest") return ResampleFilter::Nearest;
    if (name == "bilinear") return ResampleFilter::Bilinear;
    if (name == "area") return ResampleFilter::Area;
    throw ParameterError("unknown resample filter '" + name + "'");
}

DegradationConfig DegradationConfig::identity() {
    DegradationConfig c;
    c.blur_sigma_min = c.blur_sigma_max = 0.0;
    c.filters = {ResampleFilter::Area};
    c.noise_std_min = c.noise_std_max = 0.0;
    c.jpeg_quality_min = c.jpeg_quality_max = 100;
    return c;
}

void to_json(nlohmann::json& j, const DegradationRecipe& r) {
    j = nlohmann::json{{"scale", r.scale}, {"passes", nlohmann::json::array()}};
    for (const auto& p : r.passes) {
        j["passes"].push_back({{"blur_sigma", p.blur_sigma},
                               {"filter", to_string(p.filter)},
                               {"factor", p.factor},
                               {"noise_std", p.noise_std},
                               {"noise_seed", p.noise_seed},
                               {"jpeg_quality", p.jpeg_quality}});
    }
}

void from_json(const nlohmann::json& j, DegradationRecipe& r) {
    r.scale = j.at("scale").get<int>();
    r.passes.clear();
    for (const auto& pj : j.at("passes")) {
        DegradationPass p;
        p.blur_sigma = pj.at("blur_sigma").get<double>();
        p.filter = resample_filter_from_string(pj.at("filter").get<std::string>());
        p.factor = pj.at("factor").get<int>();
        p.noise_std = pj.at("noise_std").get<double>();
        p.noise_seed = pj.at("noise_seed").get<std::uint64_t>();
        p.jpeg_quality = pj.at("jpeg_quality").get<int>();
        r.passes.push_back(p);
    }
}

Image gaussian_blur(const Image& img, double sigma) {
    if (sigma <= 0.0) return img;
    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
    double norm = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
        norm += k[i + radius];
    }
    for (auto& v : k) v /= norm;

    const int h = img.height, w = img.width;
    Image tmp(img.channels, h, w), out(img.channels, h, w);
    for (int c = 0; c < img.channels; ++c) {
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double s = 0.0;
                for (int i = -radius; i <= radius; ++i)
                    s += k[i + radius] * img.at(c, y, std::clamp(x + i, 0, w - 1));
                tmp.at(c, y, x) = static_cast<float>(s);
            }
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double s = 0.0;
                for (int i = -radius; i <= radius; ++i)
                    s += k[i + radius] * tmp.at(c, std::clamp(y + i, 0, h - 1), x);
                out.at(c, y, x) = static_cast<float>(s);
            }
    }
    return out;
}

Image downsample(const Image& img, int factor, ResampleFilter filter) {
    if (factor < 1) throw ParameterError("downsample: factor must be >= 1");
    if (img.height % factor != 0 || img.width % factor != 0) {
        throw ParameterError("downsample: dimensions not divisible by the scale factor");
    }
    if (factor == 1) return img;
    const int h = img.height / factor, w = img.width / factor;
    Image out(img.channels, h, w);
    for (int c = 0; c < img.channels; ++c)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double v = 0.0;
                switch (filter) {
                    case ResampleFilter::Nearest:
                        v = img.at(c, y * factor + factor / 2, x * factor + factor / 2);
                        break;
                    case ResampleFilter::Bilinear: {
                        // Half-pixel-center sampling position in source pixels.
                        const double sy = (y + 0.5) * factor - 0.5;
                        const double sx = (x + 0.5) * factor - 0.5;
                        const int y0 = static_cast<int>(std::floor(sy));
                        const int x0 = static_cast<int>(std::floor(sx));
                        const double fy = sy - y0, fx = sx - x0;
                        const auto px = [&](int yy, int xx) {
                            return static_cast<double>(img.at(c, std::clamp(yy, 0, img.height - 1),
                                                              std::clamp(xx, 0, img.width - 1)));
                        };
                        v = (1 - fy) * ((1 - fx) * px(y0, x0) + fx * px(y0, x0 + 1)) +
                            fy * ((1 - fx) * px(y0 + 1, x0) + fx * px(y0 + 1, x0 + 1));
                        break;
                    }
                    case ResampleFilter::Area: {
                        for (int dy = 0; dy < factor; ++dy)
                            for (int dx = 0; dx < factor; ++dx)
                                v += img.at(c, y * factor + dy, x * factor + dx);
                        v /= static_cast<double>(factor) * factor;
                        break;
                    }
                }
                out.at(c, y, x) = static_cast<float>(v);
            }
    return out;
}

namespace {

constexpr std::array<int, 64> kLumaTable = {
    16, 11, 10, 16, 24,  40,  51,  61,  12, 12, 14, 19, 26,  58,  60,  55,
    14, 13, 16, 24, 40,  57,  69,  56,  14, 17, 22, 29, 51,  87,  80,  62,
    18, 22, 37, 56, 68,  109, 103, 77,  24, 35, 55, 64, 81,  104, 113, 92,
    49, 64, 78, 87, 103, 121, 120, 101, 72, 92, 95, 98, 112, 100, 103, 99};

constexpr std::array<int, 64> kChromaTable = {
    17, 18, 24, 47, 99, 99, 99, 99, 18, 21, 26, 66, 99, 99, 99, 99,
    24, 26, 56, 99, 99, 99, 99, 99, 47, 66, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99};

std::array<double, 64> scaled_table(const std::array<int, 64>& base, int quality) {
    quality = std::clamp(quality, 1, 100);
    const int scale = quality < 50 ? 5000 / quality : 200 - 2 * quality;
    std::array<double, 64> out{};
    for (std::size_t i = 0; i < 64; ++i) out[i] = std::clamp((base[i] * scale + 50) / 100, 1, 255);
    return out;
}

const std::array<double, 64>& dct_basis() {
    static const std::array<double, 64> basis = [] {
        std::array<double, 64> b{};
        for (int u = 0; u < 8; ++u) {
            const double cu = u == 0 ? std::sqrt(1.0 / 8.0) : std::sqrt(2.0 / 8.0);
            for (int x = 0; x < 8; ++x)
                b[u * 8 + x] = cu * std::cos((2 * x + 1) * u * std::numbers::pi / 16.0);
        }
        return b;
    }();
    return basis;
}

// Quantizes one 8x8 block in place (values already level-shifted).
void quantize_block(std::array<double, 64>& block, const std::array<double, 64>& table) {
    const auto& B = dct_basis();
    std::array<double, 64> tmp{}, coef{};
    for (int u = 0; u < 8; ++u)
        for (int x = 0; x < 8; ++x) {
            double s = 0.0;
            for (int y = 0; y < 8; ++y) s += B[u * 8 + y] * block[y * 8 + x];
            tmp[u * 8 + x] = s;
        }
    for (int u = 0; u < 8; ++u)
        for (int v = 0; v < 8; ++v) {
            double s = 0.0;
            for (int x = 0; x < 8; ++x) s += tmp[u * 8 + x] * B[v * 8 + x];
            coef[u * 8 + v] = std::round(s / table[u * 8 + v]) * table[u * 8 + v];
        }
    for (int y = 0; y < 8; ++y)
        for (int v = 0; v < 8; ++v) {
            double s = 0.0;
            for (int u = 0; u < 8; ++u) s += B[u * 8 + y] * coef[u * 8 + v];
            tmp[y * 8 + v] = s;
        }
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) {
            double s = 0.0;
            for (int v = 0; v < 8; ++v) s += tmp[y * 8 + v] * B[v * 8 + x];
            block[y * 8 + x] = s;
        }
}

void compress_plane(std::vector<double>& plane, int h, int w, const std::array<double, 64>& table) {
    std::array<double, 64> block{};
    for (int by = 0; by < h; by += 8)
        for (int bx = 0; bx < w; bx += 8) {
            for (int y = 0; y < 8; ++y)
                for (int x = 0; x < 8; ++x) {
                    const int yy = std::min(by + y, h - 1), xx = std::min(bx + x, w - 1);
                    block[y * 8 + x] = plane[static_cast<std::size_t>(yy) * w + xx] - 128.0;
                }
            quantize_block(block, table);
            for (int y = 0; y < 8 && by + y < h; ++y)
                for (int x = 0; x < 8 && bx + x < w; ++x)
                    plane[static_cast<std::size_t>(by + y) * w + bx + x] = block[y * 8 + x] + 128.0;
        }
}

}  // namespace

Image jpeg_compress(const Image& img, int quality) {
    if (quality >= 100) return img;
    const int h = img.height, w = img.width;
    const auto n = img.plane_size();
    const auto luma = scaled_table(kLumaTable, quality);
    const auto chroma = scaled_table(kChromaTable, quality);
    Image out(img.channels, h, w);
    if (img.channels == 1) {
        std::vector<double> p(n);
        for (std::size_t i = 0; i < n; ++i) p[i] = 255.0 * img.pixels[i];
        compress_plane(p, h, w, luma);
        for (std::size_t i = 0; i < n; ++i) out.pixels[i] = static_cast<float>(p[i] / 255.0);
        return out;
    }
    if (img.channels != 3) throw ShapeError("jpeg_compress: expected 1 or 3 channels");
    std::vector<double> Y(n), Cb(n), Cr(n);
    auto r = img.plane(0), g = img.plane(1), b = img.plane(2);
    for (std::size_t i = 0; i < n; ++i) {
        const double R = 255.0 * r[i], G = 255.0 * g[i], B = 255.0 * b[i];
        Y[i] = 0.299 * R + 0.587 * G + 0.114 * B;
        Cb[i] = -0.168736 * R - 0.331264 * G + 0.5 * B + 128.0;
        Cr[i] = 0.5 * R - 0.418688 * G - 0.081312 * B + 128.0;
    }
    compress_plane(Y, h, w, luma);
    compress_plane(Cb, h, w, chroma);
    compress_plane(Cr, h, w, chroma);
    auto ro = out.plane(0), go = out.plane(1), bo = out.plane(2);
    for (std::size_t i = 0; i < n; ++i) {
        const double cb = Cb[i] - 128.0, cr = Cr[i] - 128.0;
        ro[i] = static_cast<float>((Y[i] + 1.402 * cr) / 255.0);
        go[i] = static_cast<float>((Y[i] - 0.344136 * cb - 0.714136 * cr) / 255.0);
        bo[i] = static_cast<float>((Y[i] + 1.772 * cb) / 255.0);
    }
    return out;
}

namespace {

Image add_noise(const Image& img, double stddev, std::uint64_t seed) {
    if (stddev <= 0.0) return img;
    Image out = img;
    std::mt19937_64 engine(seed);
    std::normal_distribution<double> normal(0.0, stddev);
    for (auto& v : out.pixels) v = static_cast<float>(v + normal(engine));
    return out;
}

Image apply_pass(const Image& img, const DegradationPass& pass) {
    Image x = gaussian_blur(img, pass.blur_sigma);
    x = downsample(x, pass.factor, pass.filter);
    x = add_noise(x, pass.noise_std, pass.noise_seed);
    clamp01(x);
    x = jpeg_compress(x, pass.jpeg_quality);
    clamp01(x);
    return x;
}

DegradationPass sample_pass(const DegradationConfig& config, int factor, Rng& rng) {
    if (config.filters.empty()) throw ParameterError("degradation config lists no resample filters");
    DegradationPass p;
    p.blur_sigma = config.blur_sigma_max > config.blur_sigma_min
                       ? rng.uniform(config.blur_sigma_min, config.blur_sigma_max)
                       : config.blur_sigma_min;
    p.filter = config.filters[static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<std::int64_t>(config.filters.size()) - 1))];
    p.factor = factor;
    p.noise_std = config.noise_std_max > config.noise_std_min
                      ? rng.uniform(config.noise_std_min, config.noise_std_max)
                      : config.noise_std_min;
    p.noise_seed = rng.next_u64();
    p.jpeg_quality =
        static_cast<int>(rng.uniform_int(config.jpeg_quality_min, config.jpeg_quality_max));
    return p;
}

}  // namespace

ImagePair degrade(const Image& hq, int scale, const DegradationConfig& config, std::uint64_t seed) {
    if (scale < 1) throw ParameterError("degrade: scale must be >= 1");
    if (hq.height % scale != 0 || hq.width % scale != 0) {
        throw ParameterError("degrade: HQ dimensions not divisible by scale");
    }
    if (config.blur_sigma_min < 0 || config.blur_sigma_max < config.blur_sigma_min ||
        config.noise_std_min < 0 || config.noise_std_max < config.noise_std_min ||
        config.jpeg_quality_min < 1 || config.jpeg_quality_max < config.jpeg_quality_min) {
        throw ParameterError("degrade: inconsistent parameter ranges");
    }
    Rng rng(seed);
    ImagePair pair;
    pair.hq = hq;
    pair.seed = seed;
    pair.recipe.scale = scale;
    pair.recipe.passes.push_back(sample_pass(config, scale, rng));
    if (config.second_order) pair.recipe.passes.push_back(sample_pass(config, 1, rng));
    pair.lq = replay(hq, pair.recipe);
    return pair;
}

ImagePair degrade(const Image& hq, int scale, const DegradationConfig& config, Rng& rng) {
    return degrade(hq, scale, config, rng.next_u64());
}

Image replay(const Image& hq, const DegradationRecipe& recipe) {
    if (recipe.scale < 1 || hq.height % recipe.scale != 0 || hq.width % recipe.scale != 0) {
        throw ParameterError("replay: HQ shape incompatible with recipe scale");
    }
    int total = 1;
    for (const auto& p : recipe.passes) total *= p.factor;
    if (total != recipe.scale) throw ParameterError("replay: pass factors do not match scale");
    Image x = hq;
    for (const auto& p : recipe.passes) x = apply_pass(x, p);
    return x;
}

}  // namespace icm
