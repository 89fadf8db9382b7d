// Copyright 2026 The ICM-SR Authors
// SPDX-License-Identifier: Apache-2.0

#include "icm/image.hpp"

#include <algorithm>
#include <cmath>

#include <png.h>
#include <torch/torch.h>

#include "icm/errors.hpp"

namespace icm {

void clamp01(Image& img) {
    for (auto& v : img.pixels) v = std::clamp(v, 0.0f, 1.0f);
}

Image to_luminance(const Image& img) {
    if (img.channels == 1) return img;
    if (img.channels != 3) throw ShapeError("to_luminance: expected 1 or 3 channels");
    Image out(1, img.height, img.width);
    auto r = img.plane(0), g = img.plane(1), b = img.plane(2);
    auto y = out.plane(0);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = 0.299f * r[i] + 0.587f * g[i] + 0.114f * b[i];
    return out;
}

namespace {

std::uint8_t to_byte(float v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

}  // namespace

std::vector<std::uint8_t> to_bytes(const Image& img) {
    std::vector<std::uint8_t> out(img.pixels.size());
    const auto n = img.plane_size();
    for (int c = 0; c < img.channels; ++c) {
        auto p = img.plane(c);
        for (std::size_t i = 0; i < n; ++i) out[i * img.channels + c] = to_byte(p[i]);
    }
    return out;
}

Image quantize8(const Image& img) {
    Image out = img;
    for (auto& v : out.pixels) v = static_cast<float>(to_byte(v)) / 255.0f;
    return out;
}

void write_png(const std::filesystem::path& path, const Image& img) {
    if (img.channels != 1 && img.channels != 3) throw ShapeError("write_png: 1 or 3 channels");
    png_image desc{};
    desc.version = PNG_IMAGE_VERSION;
    desc.width = static_cast<png_uint_32>(img.width);
    desc.height = static_cast<png_uint_32>(img.height);
    desc.format = img.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    auto bytes = to_bytes(img);
    if (!png_image_write_to_file(&desc, path.c_str(), 0, bytes.data(), 0, nullptr)) {
        throw Error("write_png: " + path.string() + ": " + desc.message);
    }
}

Image read_png(const std::filesystem::path& path) {
    png_image desc{};
    desc.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&desc, path.c_str())) {
        throw Error("read_png: " + path.string() + ": " + desc.message);
    }
    const bool gray = (desc.format & PNG_FORMAT_FLAG_COLOR) == 0;
    desc.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
    const int channels = gray ? 1 : 3;
    std::vector<std::uint8_t> bytes(PNG_IMAGE_SIZE(desc));
    if (!png_image_finish_read(&desc, nullptr, bytes.data(), 0, nullptr)) {
        throw Error("read_png: " + path.string() + ": " + desc.message);
    }
    Image img(channels, static_cast<int>(desc.height), static_cast<int>(desc.width));
    const auto n = img.plane_size();
    for (int c = 0; c < channels; ++c) {
        auto p = img.plane(c);
        for (std::size_t i = 0; i < n; ++i) p[i] = static_cast<float>(bytes[i * channels + c]) / 255.0f;
    }
    return img;
}

namespace {

Image as_rgb(const Image& img) {
    if (img.channels == 3) return img;
    Image out(3, img.height, img.width);
    for (int c = 0; c < 3; ++c) std::ranges::copy(img.plane(0), out.plane(c).begin());
    return out;
}

}  // namespace

Image hstack(const std::vector<Image>& tiles) {
    if (tiles.empty()) return {};
    constexpr int gutter = 2;
    const int h = tiles.front().height;
    int w = 0;
    for (const auto& t : tiles) {
        if (t.height != h) throw ShapeError("hstack: tiles must share a height");
        w += t.width;
    }
    w += gutter * static_cast<int>(tiles.size() - 1);
    Image out(3, h, w, 1.0f);
    int x0 = 0;
    for (const auto& tile : tiles) {
        auto rgb = as_rgb(tile);
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < rgb.width; ++x) out.at(c, y, x0 + x) = rgb.at(c, y, x);
        x0 += rgb.width + gutter;
    }
    return out;
}

Image vstack(const std::vector<Image>& rows) {
    if (rows.empty()) return {};
    constexpr int gutter = 2;
    int w = 0, h = 0;
    for (const auto& r : rows) {
        w = std::max(w, r.width);
        h += r.height;
    }
    h += gutter * static_cast<int>(rows.size() - 1);
    Image out(3, h, w, 1.0f);
    int y0 = 0;
    for (const auto& row : rows) {
        auto rgb = as_rgb(row);
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < rgb.height; ++y)
                for (int x = 0; x < rgb.width; ++x) out.at(c, y0 + y, x) = rgb.at(c, y, x);
        y0 += rgb.height + gutter;
    }
    return out;
}

torch::Tensor to_tensor(const Image& img, torch::ScalarType dtype) {
    auto t = torch::from_blob(const_cast<float*>(img.pixels.data()),
                              {1, img.channels, img.height, img.width}, torch::kFloat);
    return t.to(dtype, /*non_blocking=*/false, /*copy=*/true);
}

torch::Tensor to_batch(std::span<const Image> imgs, torch::ScalarType dtype) {
    if (imgs.empty()) throw ShapeError("to_batch: empty");
    std::vector<torch::Tensor> parts;
    parts.reserve(imgs.size());
    for (const auto& img : imgs) {
        if (!img.same_shape(imgs.front())) throw ShapeError("to_batch: images differ in shape");
        parts.push_back(to_tensor(img, dtype));
    }
    return torch::cat(parts, 0);
}

Image from_tensor(const torch::Tensor& t) {
    auto x = t.detach().to(torch::kFloat).contiguous();
    if (x.dim() == 4) {
        if (x.size(0) != 1) throw ShapeError("from_tensor: batch dimension must be 1");
        x = x.squeeze(0);
    }
    if (x.dim() != 3) throw ShapeError("from_tensor: expected [C,H,W]");
    Image img(static_cast<int>(x.size(0)), static_cast<int>(x.size(1)), static_cast<int>(x.size(2)));
    std::copy_n(x.data_ptr<float>(), img.pixels.size(), img.pixels.begin());
    return img;
}

torch::Tensor bicubic_resize(const torch::Tensor& batch, std::int64_t height, std::int64_t width) {
    namespace F = torch::nn::functional;
    return F::interpolate(batch, F::InterpolateFuncOptions()
                                     .size(std::vector<std::int64_t>{height, width})
                                     .mode(torch::kBicubic)
                                     .align_corners(false));
}

}  // namespace icm
