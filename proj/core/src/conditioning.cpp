// Copyright 2026 The ICM-SR Authors
// SPDX-License-Identifier: Apache-2.0

#include "icm/conditioning.hpp"

#include <algorithm>
#include <cmath>

#include <torch/torch.h>

#include "icm/errors.hpp"

namespace icm {

BlockRange block_range(int length, int blocks, int i) {
    const auto begin = static_cast<int>(static_cast<long long>(i) * length / blocks);
    const auto end = static_cast<int>(static_cast<long long>(i + 1) * length / blocks);
    return {begin, end};
}

Image extract_colormap(const Image& hq, int grid) {
    if (grid < 1) throw ParameterError("extract_colormap: grid must be >= 1");
    if (hq.height < grid || hq.width < grid) {
        throw ParameterError("extract_colormap: image smaller than the colormap grid");
    }
    Image out(hq.channels, hq.height, hq.width);
    for (int by = 0; by < grid; ++by) {
        const auto ry = block_range(hq.height, grid, by);
        for (int bx = 0; bx < grid; ++bx) {
            const auto rx = block_range(hq.width, grid, bx);
            const double count = static_cast<double>(ry.end - ry.begin) * (rx.end - rx.begin);
            for (int c = 0; c < hq.channels; ++c) {
                double sum = 0.0;
                for (int y = ry.begin; y < ry.end; ++y)
                    for (int x = rx.begin; x < rx.end; ++x) sum += hq.at(c, y, x);
                const auto mean = static_cast<float>(sum / count);
                for (int y = ry.begin; y < ry.end; ++y)
                    for (int x = rx.begin; x < rx.end; ++x) out.at(c, y, x) = mean;
            }
        }
    }
    return out;
}

namespace {

struct Plane {
    int h = 0;
    int w = 0;
    std::vector<double> v;

    Plane(int height, int width) : h(height), w(width), v(static_cast<std::size_t>(height) * width) {}
    double& operator()(int y, int x) { return v[static_cast<std::size_t>(y) * w + x]; }
    double operator()(int y, int x) const { return v[static_cast<std::size_t>(y) * w + x]; }
    double clamped(int y, int x) const {
        return (*this)(std::clamp(y, 0, h - 1), std::clamp(x, 0, w - 1));
    }
};

Plane gaussian_smooth(const Plane& in, double sigma) {
    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
    double norm = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
        norm += k[i + radius];
    }
    for (auto& x : k) x /= norm;

    Plane tmp(in.h, in.w);
    for (int y = 0; y < in.h; ++y)
        for (int x = 0; x < in.w; ++x) {
            double s = 0.0;
            for (int i = -radius; i <= radius; ++i) s += k[i + radius] * in.clamped(y, x + i);
            tmp(y, x) = s;
        }
    Plane out(in.h, in.w);
    for (int y = 0; y < in.h; ++y)
        for (int x = 0; x < in.w; ++x) {
            double s = 0.0;
            for (int i = -radius; i <= radius; ++i) s += k[i + radius] * tmp.clamped(y + i, x);
            out(y, x) = s;
        }
    return out;
}

enum class Direction { Horizontal, Diagonal, Vertical, AntiDiagonal };

Direction quantize(double gx, double gy) {
    constexpr double tan22 = 0.41421356237309503;  // tan(22.5 deg)
    constexpr double tan67 = 2.4142135623730949;   // tan(67.5 deg)
    const double ax = std::abs(gx);
    const double ay = std::abs(gy);
    if (ay <= tan22 * ax) return Direction::Horizontal;
    if (ay >= tan67 * ax) return Direction::Vertical;
    return (gx > 0) == (gy > 0) ? Direction::Diagonal : Direction::AntiDiagonal;
}

}  // namespace

Image canny_edges(const Image& hq, double sigma, double low, double high) {
    if (!(sigma > 0.0)) throw ParameterError("canny_edges: sigma must be > 0");
    if (!(low > 0.0) || !(low < high)) throw ParameterError("canny_edges: need 0 < low < high");
    const Image luma = to_luminance(hq);
    const int h = luma.height;
    const int w = luma.width;
    Image edges(1, h, w, 0.0f);
    if (h < 3 || w < 3) return edges;

    Plane src(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) src(y, x) = luma.at(0, y, x);
    const Plane smooth = gaussian_smooth(src, sigma);

    Plane gx(h, w), gy(h, w), mag(h, w);
    double max_mag = 0.0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const auto p = [&](int dy, int dx) { return smooth.clamped(y + dy, x + dx); };
            gx(y, x) = (p(-1, 1) + 2 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2 * p(0, -1) + p(1, -1));
            gy(y, x) = (p(1, -1) + 2 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2 * p(-1, 0) + p(-1, 1));
            mag(y, x) = std::hypot(gx(y, x), gy(y, x));
            max_mag = std::max(max_mag, mag(y, x));
        }
    if (max_mag <= 1e-12) return edges;

    // Suppression keeps a pixel when it beats the "previous" neighbor strictly
    // and the "next" one non-strictly, so plateaus of equal magnitude thin to
    // a single pixel. Magnitudes within `tie` count as equal, which keeps the
    // choice independent of rounding in the smoothing.
    const double tie = 1e-9 * max_mag;
    Plane thin(h, w);
    for (int y = 1; y < h - 1; ++y)
        for (int x = 1; x < w - 1; ++x) {
            const double m = mag(y, x);
            if (m == 0.0) continue;
            double prev = 0.0, next = 0.0;
            switch (quantize(gx(y, x), gy(y, x))) {
                case Direction::Horizontal: prev = mag(y, x - 1); next = mag(y, x + 1); break;
                case Direction::Vertical: prev = mag(y - 1, x); next = mag(y + 1, x); break;
                case Direction::Diagonal: prev = mag(y - 1, x - 1); next = mag(y + 1, x + 1); break;
                case Direction::AntiDiagonal: prev = mag(y + 1, x - 1); next = mag(y - 1, x + 1); break;
            }
            if (m > prev + tie && m >= next - tie) thin(y, x) = m;
        }

    const double high_t = high * max_mag;
    const double low_t = low * max_mag;
    std::vector<std::pair<int, int>> stack;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if (thin(y, x) >= high_t) {
                edges.at(0, y, x) = 1.0f;
                stack.emplace_back(y, x);
            }
    while (!stack.empty()) {
        const auto [y, x] = stack.back();
        stack.pop_back();
        for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
                const int ny = y + dy, nx = x + dx;
                if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
                if (edges.at(0, ny, nx) != 0.0f || thin(ny, nx) < low_t) continue;
                edges.at(0, ny, nx) = 1.0f;
                stack.emplace_back(ny, nx);
            }
    }
    return edges;
}

StructuralCondition build_condition(const Image& hq, const ConditioningConfig& config) {
    if (hq.channels != 3) throw ShapeError("build_condition: expected an RGB image");
    StructuralCondition cond;
    cond.colormap = extract_colormap(hq, config.grid);
    cond.edges = canny_edges(hq, config.canny_sigma, config.canny_low, config.canny_high);
    cond.height = hq.height;
    cond.width = hq.width;
    return cond;
}

torch::Tensor condition_tensor(const StructuralCondition& cond, torch::ScalarType dtype) {
    return torch::cat({to_tensor(cond.colormap, dtype), to_tensor(cond.edges, dtype)}, 1);
}

torch::Tensor condition_batch(const std::vector<const StructuralCondition*>& conds,
                              torch::ScalarType dtype) {
    if (conds.empty()) throw ShapeError("condition_batch: empty");
    std::vector<torch::Tensor> parts;
    parts.reserve(conds.size());
    for (const auto* c : conds) parts.push_back(condition_tensor(*c, dtype));
    return torch::cat(parts, 0);
}

}  // namespace icm
