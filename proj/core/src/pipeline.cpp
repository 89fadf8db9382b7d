// Copyright 2026 The ICM-SR Authors
// SPDX-License-Identifier: Apache-2.0

#include "icm/pipeline.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include <torch/torch.h>

#include "icm/errors.hpp"

namespace icm {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Independent streams derived from the master seed.
enum Stream : std::uint64_t {
    kTextures = 0x7E57,
    kDegrade = 0xDE6A,
    kTeacherInit = 0x71,
    kAdapterInit = 0xAD,
    kBundleInit = 0xB0,
    kTeacherTrain = 0x7172,
    kAdapterTrain = 0xAD72,
    kProbe = 0x960B,
    kLemma = 0x1E33,
};

void log_line(const ProgressFn& log, const std::string& line) {
    if (log) log(line);
}

RunPaths paths_of(const RunConfig& config) { return {config.out_dir()}; }

void start_command(const RunConfig& config, const std::string& name) {
    const auto root = config.out_dir();
    std::error_code ec;
    fs::create_directories(root, ec);
    if (ec) throw Error("cannot create output directory " + root.string() + ": " + ec.message());
    config.write(root / ("config_" + name + ".json"));
}

void require_file(const fs::path& path, const std::string& producer) {
    if (!fs::exists(path)) {
        throw PrerequisiteError("missing " + path.string() + "; run `icm_sr " + producer + "` first");
    }
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

json denoiser_json(const DenoiserConfig& c) {
    return {{"channels", c.channels},     {"widths", c.widths}, {"emb_dim", c.emb_dim},
            {"num_classes", c.num_classes}, {"groups", c.groups}, {"prediction", to_string(c.prediction)}};
}

json schedule_json(const NoiseSchedule& s) {
    return {{"num_steps", s.num_steps()},
            {"beta_start", s.beta_start()},
            {"beta_end", s.beta_end()},
            {"weight_mode", to_string(s.weight_mode())},
            {"latent_elements", s.latent_elements()}};
}

void check_architecture(const Checkpoint& ckpt, const RunConfig& config, const fs::path& path) {
    if (ckpt.metadata.value("denoiser", json()) != denoiser_json(config.denoiser())) {
        throw ParameterError("checkpoint " + path.string() +
                             " was trained with a different models section; rerun its producer");
    }
}

void write_losses_csv(const fs::path& path, const std::vector<double>& losses) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    out << "iteration,loss\n";
    for (std::size_t i = 0; i < losses.size(); ++i) out << i + 1 << ',' << fmt(losses[i]) << '\n';
}

void write_json(const fs::path& path, const json& doc) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    out << doc.dump(2) << '\n';
}

Image edges_rgb(const Image& edges) {
    Image out(3, edges.height, edges.width);
    for (int c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < edges.plane_size(); ++i) out.plane(c)[i] = edges.pixels[i];
    return out;
}

void write_distill_grid(const fs::path& path, Generator& generator, const TensorDataset& data,
                        const ConditioningConfig& conditioning, int count) {
    torch::NoGradGuard guard;
    const auto n = std::min<std::int64_t>(count, data.size());
    if (n == 0) return;
    auto part = data.slice(0, n);
    auto out = generator_forward(generator, part.lq, part.labels);
    auto bic = bicubic_resize(part.lq, part.hq.size(2), part.hq.size(3)).clamp(0.0, 1.0);
    std::vector<Image> rows;
    for (std::int64_t i = 0; i < n; ++i) {
        const auto hq = from_tensor(part.hq[i]);
        const auto cond = build_condition(hq, conditioning);
        rows.push_back(hstack({from_tensor(bic[i]), from_tensor(out[i]), hq, cond.colormap, edges_rgb(cond.edges)}));
    }
    write_png(path, vstack(rows));
}

}  // namespace

void to_json(json& j, const ManifestRecord& r) {
    j = json{{"index", r.index}, {"split", r.split}, {"label", r.label}, {"family", to_string(r.family)},
             {"hq", r.hq},       {"lq", r.lq},       {"seed", r.seed},   {"recipe", r.recipe}};
}

void from_json(const json& j, ManifestRecord& r) {
    r.index = j.at("index").get<int>();
    r.split = j.at("split").get<std::string>();
    r.label = j.at("label").get<int>();
    r.family = texture_family_from_string(j.at("family").get<std::string>());
    r.hq = j.at("hq").get<std::string>();
    r.lq = j.at("lq").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.recipe = j.at("recipe").get<DegradationRecipe>();
}

std::vector<ManifestRecord> read_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw PrerequisiteError("missing " + path.string() + "; run `icm_sr gen-data` first");
    std::vector<ManifestRecord> records;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        records.push_back(json::parse(line).get<ManifestRecord>());
    }
    return records;
}

std::vector<GeneratedPair> synthesize_pairs(const DataConfig& data, const DegradationConfig& degradation,
                                            std::uint64_t seed, int count) {
    const auto textures = make_texture_set(count, data.image_size, mix_seed(seed, kTextures), data.families);
    std::vector<GeneratedPair> pairs;
    pairs.reserve(textures.size());
    for (std::size_t i = 0; i < textures.size(); ++i) {
        const auto hq = quantize8(textures[i].image);
        pairs.push_back({degrade(hq, data.scale, degradation, mix_seed(mix_seed(seed, kDegrade), i)),
                         textures[i].label, textures[i].family});
    }
    return pairs;
}

TensorDataset make_tensor_dataset(const std::vector<Image>& hq, const std::vector<Image>& lq,
                                  const std::vector<int>& labels, const ConditioningConfig& conditioning) {
    if (hq.size() != lq.size() || hq.size() != labels.size() || hq.empty()) {
        throw ParameterError("make_tensor_dataset: inconsistent or empty inputs");
    }
    std::vector<StructuralCondition> conds;
    conds.reserve(hq.size());
    for (const auto& img : hq) conds.push_back(build_condition(img, conditioning));
    std::vector<const StructuralCondition*> ptrs;
    for (const auto& c : conds) ptrs.push_back(&c);
    TensorDataset ds;
    ds.hq = to_batch(hq);
    ds.lq = to_batch(lq);
    ds.cond = condition_batch(ptrs);
    ds.labels = torch::tensor(std::vector<std::int64_t>(labels.begin(), labels.end()), torch::kLong);
    return ds;
}

SplitDataset synthesize_split(const RunConfig& config) {
    const auto data = config.data();
    const auto pairs = synthesize_pairs(data, config.degradation(), config.seed(), data.num_train + data.num_test);
    std::vector<Image> hq[2], lq[2];
    std::vector<int> labels[2];
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        const int s = static_cast<int>(i) < data.num_train ? 0 : 1;
        hq[s].push_back(pairs[i].pair.hq);
        lq[s].push_back(quantize8(pairs[i].pair.lq));
        labels[s].push_back(pairs[i].label);
    }
    const auto cc = config.conditioning();
    return {make_tensor_dataset(hq[0], lq[0], labels[0], cc), make_tensor_dataset(hq[1], lq[1], labels[1], cc)};
}

SplitDataset load_split(const RunPaths& paths, const RunConfig& config) {
    const auto records = read_manifest(paths.manifest());
    std::vector<Image> hq[2], lq[2];
    std::vector<int> labels[2];
    for (const auto& r : records) {
        const int s = r.split == "train" ? 0 : 1;
        hq[s].push_back(read_png(paths.data() / r.hq));
        lq[s].push_back(read_png(paths.data() / r.lq));
        labels[s].push_back(r.label);
    }
    if (hq[0].empty() || hq[1].empty()) throw PrerequisiteError("dataset split is empty; rerun `icm_sr gen-data`");
    const auto cc = config.conditioning();
    return {make_tensor_dataset(hq[0], lq[0], labels[0], cc), make_tensor_dataset(hq[1], lq[1], labels[1], cc)};
}

void seed_init(std::uint64_t seed, std::uint64_t stream) {
    torch::manual_seed(mix_seed(seed, stream) >> 1);
}

Denoiser make_teacher(const RunConfig& config) {
    seed_init(config.seed(), kTeacherInit);
    return Denoiser(config.denoiser());
}

Adapter make_adapter(const RunConfig& config) {
    seed_init(config.seed(), kAdapterInit);
    return Adapter(config.adapter_cond_channels(), config.denoiser().widths);
}

Denoiser load_teacher(const RunPaths& paths, const RunConfig& config) {
    require_file(paths.teacher(), "pretrain");
    const auto ckpt = load_checkpoint(paths.teacher());
    check_architecture(ckpt, config, paths.teacher());
    Denoiser teacher(config.denoiser());
    ckpt.load_module("teacher", *teacher);
    set_requires_grad(*teacher, false);
    teacher->eval();
    return teacher;
}

Adapter load_adapter(const RunPaths& paths, const RunConfig& config) {
    require_file(paths.adapter(), "train-adapter");
    const auto ckpt = load_checkpoint(paths.adapter());
    check_architecture(ckpt, config, paths.adapter());
    Adapter adapter(config.adapter_cond_channels(), config.denoiser().widths);
    ckpt.load_module("adapter", *adapter);
    set_requires_grad(*adapter, false);
    adapter->eval();
    return adapter;
}

ModelBundle make_bundle(const Denoiser& teacher, const Adapter& adapter, const RunConfig& config) {
    seed_init(config.seed(), kBundleInit);
    return ModelBundle::assemble(teacher, adapter, config.generator());
}

PerceptualProxy make_proxy(const RunConfig& config) { return PerceptualProxy(config.perceptual_seed()); }

void cmd_gen_data(const RunConfig& config, const ProgressFn& log) {
    start_command(config, "gen_data");
    const auto paths = paths_of(config);
    const auto data = config.data();
    const int total = data.num_train + data.num_test;
    fs::create_directories(paths.data() / "hq");
    fs::create_directories(paths.data() / "lq");
    const auto pairs = synthesize_pairs(data, config.degradation(), config.seed(), total);
    std::ofstream manifest(paths.manifest());
    if (!manifest) throw Error("cannot write " + paths.manifest().string());
    for (int i = 0; i < total; ++i) {
        const auto& g = pairs[static_cast<std::size_t>(i)];
        const bool train = i < data.num_train;
        const int local = train ? i : i - data.num_train;
        char name[32];
        std::snprintf(name, sizeof(name), "%s_%04d.png", train ? "train" : "test", local);
        ManifestRecord r{i, train ? "train" : "test", g.label, g.family,
                         (fs::path("hq") / name).string(), (fs::path("lq") / name).string(),
                         g.pair.seed, g.pair.recipe};
        write_png(paths.data() / r.hq, g.pair.hq);
        write_png(paths.data() / r.lq, g.pair.lq);
        manifest << json(r).dump() << '\n';
    }
    log_line(log, "wrote " + std::to_string(total) + " pairs to " + paths.data().string());
}

void cmd_pretrain(const RunConfig& config, const ProgressFn& log) {
    start_command(config, "pretrain");
    const auto paths = paths_of(config);
    const auto split = load_split(paths, config);
    const auto schedule = config.schedule();
    auto teacher = make_teacher(config);
    log_line(log, "teacher parameters: " + std::to_string(count_parameters(*teacher)));
    const auto result = pretrain_teacher(teacher, split.train, split.test, schedule, config.teacher_pretrain(),
                                         mix_seed(config.seed(), kTeacherTrain), log);
    log_line(log, "held-out denoising loss " + fmt(result.heldout_before) + " -> " + fmt(result.heldout_after));
    Checkpoint ckpt;
    ckpt.metadata = {{"kind", "teacher"},
                     {"denoiser", denoiser_json(config.denoiser())},
                     {"schedule", schedule_json(schedule)},
                     {"iterations", result.losses.size()},
                     {"heldout_before", result.heldout_before},
                     {"heldout_after", result.heldout_after},
                     {"config", config.document()}};
    ckpt.add_module("teacher", *teacher);
    fs::create_directories(paths.teacher().parent_path());
    save_checkpoint(paths.teacher(), ckpt);
    write_losses_csv(paths.teacher().parent_path() / "loss_log.csv", result.losses);
}

void cmd_train_adapter(const RunConfig& config, const ProgressFn& log) {
    start_command(config, "train_adapter");
    const auto paths = paths_of(config);
    auto teacher = load_teacher(paths, config);
    const auto split = load_split(paths, config);
    const auto schedule = config.schedule();
    auto adapter = make_adapter(config);
    const auto seed = mix_seed(config.seed(), kAdapterTrain);
    const double uncond = evaluate_denoising_loss(teacher, nullptr, 0.0, split.test, schedule,
                                                  mix_seed(seed, 0xE7A1));
    const auto result = pretrain_adapter(teacher, adapter, split.train, split.test, schedule,
                                         config.adapter_pretrain(), seed, log);
    log_line(log, "held-out loss: unconditional " + fmt(uncond) + ", conditional " + fmt(result.heldout_after));
    Checkpoint ckpt;
    ckpt.metadata = {{"kind", "adapter"},
                     {"denoiser", denoiser_json(config.denoiser())},
                     {"schedule", schedule_json(schedule)},
                     {"iterations", result.losses.size()},
                     {"heldout_unconditional", uncond},
                     {"heldout_conditional", result.heldout_after},
                     {"config", config.document()}};
    ckpt.add_module("adapter", *adapter);
    fs::create_directories(paths.adapter().parent_path());
    save_checkpoint(paths.adapter(), ckpt);
    write_losses_csv(paths.adapter().parent_path() / "loss_log.csv", result.losses);
}

void cmd_distill(const RunConfig& config, const ProgressFn& log) {
    start_command(config, "distill");
    const auto paths = paths_of(config);
    auto teacher = load_teacher(paths, config);
    auto adapter = load_adapter(paths, config);
    const auto split = load_split(paths, config);
    const auto schedule = config.schedule();
    const auto train = config.train();
    auto bundle = make_bundle(teacher, adapter, config);
    Distiller distiller(bundle, schedule, train, make_proxy(config));

    const auto dir = paths.distill(train.regularizer);
    fs::create_directories(dir);
    std::ofstream csv(dir / "loss_log.csv");
    if (!csv) throw Error("cannot write " + (dir / "loss_log.csv").string());
    csv << "iteration,rec_l2,rec_perceptual,reg_grad_norm,aux_loss,wall_time\n";
    const int log_every = config.train_log_every();
    const int ckpt_every = config.train_checkpoint_every();
    auto save = [&](int iteration) {
        Checkpoint ckpt;
        ckpt.metadata = {{"kind", "generator"},
                         {"denoiser", denoiser_json(config.denoiser())},
                         {"schedule", schedule_json(schedule)},
                         {"regularizer", to_string(train.regularizer)},
                         {"iteration", iteration},
                         {"perceptual_seed", config.perceptual_seed()},
                         {"config", config.document()}};
        ckpt.add_module("generator", *bundle.generator);
        ckpt.add_module("aux", *bundle.aux);
        save_checkpoint(paths.generator(train.regularizer), ckpt);
    };
    distiller.run(split.train, [&](const LossReport& r) {
        // wall time is excluded from the CSV to keep reruns byte-identical
        csv << r.iteration << ',' << fmt(r.rec_l2) << ',' << fmt(r.rec_perceptual) << ',' << fmt(r.reg_grad_norm)
            << ',' << fmt(r.aux_loss) << ",0\n";
        if (log_every > 0 && (r.iteration % log_every == 0 || r.iteration == 1)) {
            log_line(log, format_report(r, train.regularizer, train.iterations));
        }
        if (ckpt_every > 0 && r.iteration % ckpt_every == 0) save(r.iteration);
    });
    save(distiller.iteration());
    write_distill_grid(dir / "samples.png", bundle.generator, split.test, config.conditioning(),
                       config.eval().grid_images);
}

ProbeResult cmd_probe(const RunConfig& config, const ProgressFn& log) {
    start_command(config, "probe");
    const auto paths = paths_of(config);
    auto teacher = load_teacher(paths, config);
    auto adapter = load_adapter(paths, config);
    const auto split = load_split(paths, config);
    const auto schedule = config.schedule();
    const auto eval = config.eval();
    Rng rng(mix_seed(config.seed(), kProbe));
    ProbeOptions options;
    options.adapter_scale = eval.adapter_scale;
    options.grid_dir = paths.probe();
    options.grid_images = eval.grid_images;
    auto result = denoise_probe(teacher, adapter, split.test, eval.probe_timesteps, schedule, rng, options);
    write_probe_csv(paths.probe() / "probe.csv", result);
    for (std::size_t k = 0; k < result.timesteps.size(); ++k) {
        log_line(log, "t=" + std::to_string(result.timesteps[k]) + " mse conditional " +
                          fmt(result.mse_conditional[k]) + " unconditional " + fmt(result.mse_unconditional[k]));
    }
    return result;
}

GeneratorEval cmd_eval(const RunConfig& config, const ProgressFn& log) {
    start_command(config, "eval");
    const auto paths = paths_of(config);
    const auto train = config.train();
    require_file(paths.generator(train.regularizer), "distill");
    auto teacher = load_teacher(paths, config);
    auto adapter = load_adapter(paths, config);
    const auto split = load_split(paths, config);
    auto bundle = make_bundle(teacher, adapter, config);
    const auto ckpt = load_checkpoint(paths.generator(train.regularizer));
    check_architecture(ckpt, config, paths.generator(train.regularizer));
    ckpt.load_module("generator", *bundle.generator);
    auto proxy = make_proxy(config);
    auto result = evaluate_generator(bundle.generator, split.test, proxy);
    const auto dir = paths.eval(train.regularizer);
    fs::create_directories(dir);
    write_metrics_csv(dir / "metrics.csv", result);
    double bic_psnr = 0.0;
    for (const auto& m : result.bicubic) bic_psnr += m.psnr;
    bic_psnr /= static_cast<double>(result.bicubic.size());
    write_json(dir / "summary.json", {{"regularizer", to_string(train.regularizer)},
                                      {"num_images", result.generator.size()},
                                      {"mean_psnr", result.mean_psnr()},
                                      {"mean_bicubic_psnr", bic_psnr},
                                      {"mean_ssim", result.mean_ssim()},
                                      {"mean_perceptual", result.mean_perceptual()},
                                      {"psnr_win_rate", result.psnr_win_rate()}});
    log_line(log, "PSNR " + fmt(result.mean_psnr()) + " dB (bicubic " + fmt(bic_psnr) + " dB), beats bicubic on " +
                      fmt(100.0 * result.psnr_win_rate()) + "% of images");
    return result;
}

LemmaOutcome cmd_verify_lemma1(const RunConfig& config, int trials, const ProgressFn& log) {
    start_command(config, "verify_lemma1");
    const auto paths = paths_of(config);
    const auto schedule = config.schedule();
    Rng rng(mix_seed(config.seed(), kLemma));
    LemmaOutcome outcome;
    outcome.report = lab::verify_lemma1_random_means(16, trials, 1.0, schedule, rng);
    outcome.passed = outcome.report.max_deviation <= kLemmaTolerance;
    fs::create_directories(paths.lemma());
    {
        std::ofstream csv(paths.lemma() / "deviation_by_t.csv");
        if (!csv) throw Error("cannot write lemma report");
        csv << "t,max_deviation\n";
        for (const auto& s : outcome.report.per_timestep()) csv << s.t << ',' << fmt(s.deviation) << '\n';
    }
    std::ostringstream text;
    text << "trials " << trials << "\nmax |eps* - eps| " << fmt(outcome.report.max_deviation) << "\ntolerance "
         << fmt(kLemmaTolerance) << "\nresult " << (outcome.passed ? "PASS" : "FAIL") << '\n';
    {
        std::ofstream report(paths.lemma() / "report.txt");
        report << text.str();
    }
    log_line(log, "max |eps* - eps| = " + fmt(outcome.report.max_deviation) + " over " + std::to_string(trials) +
                      " draws (" + (outcome.passed ? "PASS" : "FAIL") + ")");
    return outcome;
}

void cmd_dump_condition(const RunConfig& config, const fs::path& image, const fs::path& out_dir,
                        const ProgressFn& log) {
    if (!fs::exists(image)) throw ParameterError("no such image: " + image.string());
    auto img = read_png(image);
    if (img.channels == 1) img = edges_rgb(img);
    const auto cond = build_condition(img, config.conditioning());
    fs::create_directories(out_dir);
    const auto stem = image.stem().string();
    write_png(out_dir / (stem + "_colormap.png"), cond.colormap);
    write_png(out_dir / (stem + "_edges.png"), cond.edges);
    write_png(out_dir / (stem + "_condition.png"), hstack({img, cond.colormap, edges_rgb(cond.edges)}));
    log_line(log, "wrote condition images for " + image.string() + " to " + out_dir.string());
}

}  // namespace icm
