// Copyright 2026 The ICM-SR Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <torch/types.h>

namespace icm {

/// Planar (CHW) float image; pixel values are nominally in [0, 1].
struct Image {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<float> pixels;

    Image() = default;
    Image(int c, int h, int w, float fill = 0.0f)
        : channels(c), height(h), width(w), pixels(static_cast<std::size_t>(c) * h * w, fill) {}

    std::size_t plane_size() const { return static_cast<std::size_t>(height) * width; }
    bool empty() const { return pixels.empty(); }
    bool same_shape(const Image& o) const {
        return channels == o.channels && height == o.height && width == o.width;
    }

    float& at(int c, int y, int x) {
        return pixels[(static_cast<std::size_t>(c) * height + y) * width + x];
    }
    float at(int c, int y, int x) const {
        return pixels[(static_cast<std::size_t>(c) * height + y) * width + x];
    }
    std::span<float> plane(int c) { return {pixels.data() + c * plane_size(), plane_size()}; }
    std::span<const float> plane(int c) const {
        return {pixels.data() + c * plane_size(), plane_size()};
    }

    bool operator==(const Image&) const = default;
};

void clamp01(Image& img);

/// Rec.601 luma; single-channel inputs are returned unchanged.
Image to_luminance(const Image& img);

/// Round to 8-bit levels and back, matching what a PNG round trip stores.
Image quantize8(const Image& img);
std::vector<std::uint8_t> to_bytes(const Image& img);  // interleaved HWC

void write_png(const std::filesystem::path& path, const Image& img);
Image read_png(const std::filesystem::path& path);

/// Side-by-side tiles with a 2px white gutter; grayscale tiles are expanded
/// to RGB. All tiles must share a height.
Image hstack(const std::vector<Image>& tiles);
Image vstack(const std::vector<Image>& rows);

/// [C,H,W] image <-> [1,C,H,W] tensor.
torch::Tensor to_tensor(const Image& img, torch::ScalarType dtype = torch::kFloat);
torch::Tensor to_batch(std::span<const Image> imgs, torch::ScalarType dtype = torch::kFloat);
Image from_tensor(const torch::Tensor& t);  // accepts [C,H,W] or [1,C,H,W]

/// Bicubic resize (a = -0.75, half-pixel centers, edge clamp), as a tensor op.
torch::Tensor bicubic_resize(const torch::Tensor& batch, std::int64_t height, std::int64_t width);

}  // namespace icm
