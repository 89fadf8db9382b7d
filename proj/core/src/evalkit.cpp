// Copyright 2026 The ICM-SR Authors
// SPDX-License-Identifier: Apache-2.0

#include "icm/evalkit.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include <torch/torch.h>

#include "icm/errors.hpp"

namespace icm {

namespace {

constexpr int kWindow = 11;
constexpr double kSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

std::vector<double> gaussian_window() {
    std::vector<double> w(kWindow);
    double sum = 0.0;
    for (int i = 0; i < kWindow; ++i) {
        const double d = i - kWindow / 2;
        w[i] = std::exp(-d * d / (2.0 * kSigma * kSigma));
        sum += w[i];
    }
    for (auto& v : w) v /= sum;
    return w;
}

// Valid-mode separable filtering of an h x w plane.
std::vector<double> filter_valid(const std::vector<double>& plane, int h, int w,
                                 const std::vector<double>& k) {
    const int oh = h - kWindow + 1;
    const int ow = w - kWindow + 1;
    std::vector<double> rows(static_cast<std::size_t>(h) * ow);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < ow; ++x) {
            double s = 0.0;
            for (int i = 0; i < kWindow; ++i) s += k[i] * plane[static_cast<std::size_t>(y) * w + x + i];
            rows[static_cast<std::size_t>(y) * ow + x] = s;
        }
    std::vector<double> out(static_cast<std::size_t>(oh) * ow);
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
            double s = 0.0;
            for (int i = 0; i < kWindow; ++i) s += k[i] * rows[static_cast<std::size_t>(y + i) * ow + x];
            out[static_cast<std::size_t>(y) * ow + x] = s;
        }
    return out;
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

void ensure_parent(const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
}

}  // namespace

double psnr(const Image& a, const Image& b) {
    if (!a.same_shape(b)) throw ShapeError("psnr: shape mismatch");
    if (a.empty()) throw ParameterError("psnr: empty image");
    double sum = 0.0;
    for (std::size_t i = 0; i < a.pixels.size(); ++i) {
        const double d = static_cast<double>(a.pixels[i]) - b.pixels[i];
        sum += d * d;
    }
    const double mse = sum / static_cast<double>(a.pixels.size());
    if (mse == 0.0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

double ssim(const Image& a, const Image& b) {
    if (!a.same_shape(b)) throw ShapeError("ssim: shape mismatch");
    if (a.height < kWindow || a.width < kWindow) throw ParameterError("ssim: image smaller than the 11x11 window");
    const auto k = gaussian_window();
    const int h = a.height;
    const int w = a.width;
    double total = 0.0;
    for (int c = 0; c < a.channels; ++c) {
        const auto pa = a.plane(c);
        const auto pb = b.plane(c);
        std::vector<double> x(pa.begin(), pa.end()), y(pb.begin(), pb.end());
        std::vector<double> xx(x.size()), yy(x.size()), xy(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) {
            xx[i] = x[i] * x[i];
            yy[i] = y[i] * y[i];
            xy[i] = x[i] * y[i];
        }
        const auto mx = filter_valid(x, h, w, k);
        const auto my = filter_valid(y, h, w, k);
        const auto sxx = filter_valid(xx, h, w, k);
        const auto syy = filter_valid(yy, h, w, k);
        const auto sxy = filter_valid(xy, h, w, k);
        double sum = 0.0;
        for (std::size_t i = 0; i < mx.size(); ++i) {
            const double vx = sxx[i] - mx[i] * mx[i];
            const double vy = syy[i] - my[i] * my[i];
            const double cxy = sxy[i] - mx[i] * my[i];
            sum += ((2.0 * mx[i] * my[i] + kC1) * (2.0 * cxy + kC2)) /
                   ((mx[i] * mx[i] + my[i] * my[i] + kC1) * (vx + vy + kC2));
        }
        total += sum / static_cast<double>(mx.size());
    }
    return total / a.channels;
}

double ProbeResult::win_rate(std::size_t k) const {
    const auto& c = per_image_conditional.at(k);
    const auto& u = per_image_unconditional.at(k);
    if (c.empty()) return 0.0;
    int wins = 0;
    for (std::size_t i = 0; i < c.size(); ++i) wins += c[i] < u[i] ? 1 : 0;
    return static_cast<double>(wins) / static_cast<double>(c.size());
}

ProbeResult denoise_probe(Denoiser& teacher, Adapter& adapter, const TensorDataset& data,
                          const std::vector<int>& timesteps, const NoiseSchedule& schedule, Rng& rng,
                          const ProbeOptions& options) {
    if (data.size() == 0) throw ParameterError("denoise_probe: empty dataset");
    if (!data.cond.defined()) throw ParameterError("denoise_probe: dataset has no conditions");
    for (int t : timesteps) schedule.check(Timestep(t));
    torch::NoGradGuard guard;
    teacher->eval();
    adapter->eval();
    ProbeResult result;
    result.timesteps = timesteps;
    result.num_images = static_cast<int>(data.size());
    const int grid_n = options.grid_dir ? std::min<int>(options.grid_images, result.num_images) : 0;
    // grid_rows[image] = {noisy, unconditional, conditional} columns per timestep
    std::vector<std::array<std::vector<Image>, 3>> grid_rows(static_cast<std::size_t>(grid_n));
    const std::int64_t chunk = 32;
    for (int tv : timesteps) {
        std::vector<double> cond_mse, uncond_mse;
        for (std::int64_t begin = 0; begin < data.size(); begin += chunk) {
            const auto end = std::min(begin + chunk, data.size());
            auto part = data.slice(begin, end);
            auto t = torch::full({end - begin}, tv, torch::kLong);
            auto eps = torch::randn(part.hq.sizes(), rng.torch_generator(), part.hq.options());
            auto zt = perturb(schedule, part.hq, t, eps);
            auto features = encode_condition(adapter, part.cond, options.adapter_scale);
            auto x0_cond = predict_x0(schedule, zt, t,
                                      denoiser_forward(teacher, schedule, zt, t, part.labels, features));
            auto x0_uncond =
                predict_x0(schedule, zt, t, denoiser_forward(teacher, schedule, zt, t, part.labels));
            auto mc = (x0_cond - part.hq).pow(2).mean({1, 2, 3}).to(torch::kDouble).contiguous();
            auto mu = (x0_uncond - part.hq).pow(2).mean({1, 2, 3}).to(torch::kDouble).contiguous();
            for (std::int64_t i = 0; i < end - begin; ++i) {
                cond_mse.push_back(mc[i].item<double>());
                uncond_mse.push_back(mu[i].item<double>());
                const auto global = begin + i;
                if (global < grid_n) {
                    auto& rows = grid_rows[static_cast<std::size_t>(global)];
                    rows[0].push_back(from_tensor(zt[i].clamp(0.0, 1.0)));
                    rows[1].push_back(from_tensor(x0_uncond[i].clamp(0.0, 1.0)));
                    rows[2].push_back(from_tensor(x0_cond[i].clamp(0.0, 1.0)));
                }
            }
        }
        double sc = 0.0, su = 0.0;
        for (std::size_t i = 0; i < cond_mse.size(); ++i) {
            sc += cond_mse[i];
            su += uncond_mse[i];
        }
        result.mse_conditional.push_back(sc / static_cast<double>(cond_mse.size()));
        result.mse_unconditional.push_back(su / static_cast<double>(uncond_mse.size()));
        result.per_image_conditional.push_back(std::move(cond_mse));
        result.per_image_unconditional.push_back(std::move(uncond_mse));
    }
    if (options.grid_dir) {
        std::filesystem::create_directories(*options.grid_dir);
        for (int i = 0; i < grid_n; ++i) {
            auto& rows = grid_rows[static_cast<std::size_t>(i)];
            const auto gt = from_tensor(data.hq[i]);
            std::vector<Image> stacked;
            for (auto& row : rows) {
                row.push_back(gt);
                stacked.push_back(hstack(row));
            }
            write_png(*options.grid_dir / ("probe_" + std::to_string(i) + ".png"), vstack(stacked));
        }
    }
    return result;
}

void write_probe_csv(const std::filesystem::path& path, const ProbeResult& result) {
    ensure_parent(path);
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    out << "t,mse_conditional,mse_unconditional,conditional_win_rate,num_images\n";
    for (std::size_t k = 0; k < result.timesteps.size(); ++k) {
        out << result.timesteps[k] << ',' << fmt(result.mse_conditional[k]) << ','
            << fmt(result.mse_unconditional[k]) << ',' << fmt(result.win_rate(k)) << ','
            << result.num_images << '\n';
    }
}

double GeneratorEval::mean_psnr() const {
    double s = 0.0;
    for (const auto& m : generator) s += m.psnr;
    return generator.empty() ? 0.0 : s / static_cast<double>(generator.size());
}

double GeneratorEval::mean_ssim() const {
    double s = 0.0;
    for (const auto& m : generator) s += m.ssim;
    return generator.empty() ? 0.0 : s / static_cast<double>(generator.size());
}

double GeneratorEval::mean_perceptual() const {
    double s = 0.0;
    for (const auto& m : generator) s += m.perceptual;
    return generator.empty() ? 0.0 : s / static_cast<double>(generator.size());
}

double GeneratorEval::psnr_win_rate() const {
    if (generator.empty()) return 0.0;
    int wins = 0;
    for (std::size_t i = 0; i < generator.size(); ++i) wins += generator[i].psnr > bicubic[i].psnr ? 1 : 0;
    return static_cast<double>(wins) / static_cast<double>(generator.size());
}

GeneratorEval evaluate_generator(Generator& generator, const TensorDataset& data, PerceptualProxy& proxy) {
    if (data.size() == 0 || !data.lq.defined()) throw ParameterError("evaluate_generator: need lq/hq pairs");
    torch::NoGradGuard guard;
    generator->eval();
    GeneratorEval eval;
    const std::int64_t chunk = 32;
    for (std::int64_t begin = 0; begin < data.size(); begin += chunk) {
        const auto end = std::min(begin + chunk, data.size());
        auto part = data.slice(begin, end);
        auto out = generator_forward(generator, part.lq, part.labels);
        auto bic = bicubic_resize(part.lq, part.hq.size(2), part.hq.size(3)).clamp(0.0, 1.0);
        auto d_gen = proxy->distance(out, part.hq).to(torch::kDouble).contiguous();
        auto d_bic = proxy->distance(bic, part.hq).to(torch::kDouble).contiguous();
        for (std::int64_t i = 0; i < end - begin; ++i) {
            const auto hq = from_tensor(part.hq[i]);
            const auto g = from_tensor(out[i]);
            const auto b = from_tensor(bic[i]);
            eval.generator.push_back({psnr(g, hq), ssim(g, hq), d_gen[i].item<double>()});
            eval.bicubic.push_back({psnr(b, hq), ssim(b, hq), d_bic[i].item<double>()});
        }
    }
    return eval;
}

void write_metrics_csv(const std::filesystem::path& path, const GeneratorEval& eval) {
    ensure_parent(path);
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    out << "image,psnr,ssim,perceptual,bicubic_psnr,bicubic_ssim,bicubic_perceptual\n";
    for (std::size_t i = 0; i < eval.generator.size(); ++i) {
        const auto& g = eval.generator[i];
        const auto& b = eval.bicubic[i];
        out << i << ',' << fmt(g.psnr) << ',' << fmt(g.ssim) << ',' << fmt(g.perceptual) << ','
            << fmt(b.psnr) << ',' << fmt(b.ssim) << ',' << fmt(b.perceptual) << '\n';
    }
}

}  // namespace icm
