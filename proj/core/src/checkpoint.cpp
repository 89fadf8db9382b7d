// Copyright 2026 The ICM-SR Authors
// SPDX-License-Identifier: Apache-2.0

#include "icm/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include <torch/torch.h>

#include "icm/errors.hpp"

namespace icm {

namespace {

template <typename T>
void put(std::ostream& out, T value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T take(std::istream& in) {
    T value{};
    if (!in.read(reinterpret_cast<char*>(&value), sizeof(T))) throw Error("checkpoint: truncated file");
    return value;
}

void put_string(std::ostream& out, const std::string& s) {
    put<std::uint64_t>(out, s.size());
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string take_string(std::istream& in) {
    const auto n = take<std::uint64_t>(in);
    if (n > (1ull << 32)) throw Error("checkpoint: corrupt string length");
    std::string s(n, '\0');
    if (!in.read(s.data(), static_cast<std::streamsize>(n))) throw Error("checkpoint: truncated file");
    return s;
}

}  // namespace

void Checkpoint::add_module(const std::string& prefix, const torch::nn::Module& module) {
    for (const auto& item : module.named_parameters(true)) {
        tensors[prefix + "." + item.key()] = item.value().detach().to(torch::kFloat).contiguous().clone();
    }
    for (const auto& item : module.named_buffers(true)) {
        tensors[prefix + "." + item.key()] = item.value().detach().to(torch::kFloat).contiguous().clone();
    }
}

void Checkpoint::load_module(const std::string& prefix, torch::nn::Module& module) const {
    torch::NoGradGuard guard;
    auto assign = [&](const std::string& key, torch::Tensor& dst) {
        auto it = tensors.find(prefix + "." + key);
        if (it == tensors.end()) throw ShapeError("checkpoint: missing tensor " + prefix + "." + key);
        if (it->second.sizes() != dst.sizes()) {
            throw ShapeError("checkpoint: shape mismatch for " + prefix + "." + key);
        }
        dst.copy_(it->second);
    };
    for (auto& item : module.named_parameters(true)) assign(item.key(), item.value());
    for (auto& item : module.named_buffers(true)) assign(item.key(), item.value());
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw Error("checkpoint: cannot write " + tmp);
        out.write(kCheckpointMagic, sizeof(kCheckpointMagic) - 1);
        put<std::uint32_t>(out, kCheckpointVersion);
        put_string(out, ckpt.metadata.dump());
        put<std::uint64_t>(out, ckpt.tensors.size());
        for (const auto& [name, tensor] : ckpt.tensors) {
            auto t = tensor.detach().to(torch::kFloat).contiguous();
            put_string(out, name);
            put<std::uint32_t>(out, static_cast<std::uint32_t>(t.dim()));
            for (auto s : t.sizes()) put<std::int64_t>(out, s);
            out.write(reinterpret_cast<const char*>(t.data_ptr<float>()),
                      static_cast<std::streamsize>(t.numel() * sizeof(float)));
        }
        if (!out) throw Error("checkpoint: write failed for " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw PrerequisiteError("checkpoint not found: " + path.string());
    char magic[sizeof(kCheckpointMagic) - 1];
    if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
        throw Error("checkpoint: bad magic in " + path.string());
    }
    const auto version = take<std::uint32_t>(in);
    if (version != kCheckpointVersion) {
        throw Error("checkpoint: unsupported version " + std::to_string(version));
    }
    Checkpoint ckpt;
    ckpt.metadata = nlohmann::json::parse(take_string(in));
    const auto count = take<std::uint64_t>(in);
    for (std::uint64_t i = 0; i < count; ++i) {
        auto name = take_string(in);
        const auto dim = take<std::uint32_t>(in);
        if (dim > 8) throw Error("checkpoint: corrupt tensor rank");
        std::vector<std::int64_t> sizes(dim);
        for (auto& s : sizes) s = take<std::int64_t>(in);
        auto t = torch::empty(sizes, torch::kFloat);
        if (!in.read(reinterpret_cast<char*>(t.data_ptr<float>()),
                     static_cast<std::streamsize>(t.numel() * sizeof(float)))) {
            throw Error("checkpoint: truncated tensor " + name);
        }
        ckpt.tensors.emplace(std::move(name), std::move(t));
    }
    return ckpt;
}

}  // namespace icm
