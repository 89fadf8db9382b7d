// Copyright 2026 The ICM-SR Authors
// SPDX-License-Identifier: Apache-2.0

#include "icm/config.hpp"

#include <fstream>
#include <sstream>

#include "icm/errors.hpp"

namespace icm {

using json = nlohmann::json;

namespace {

const char* type_name(const json& v) { return v.type_name(); }

bool compatible(const json& def, const json& val) {
    if (def.is_number_float()) return val.is_number();
    if (def.is_number_integer()) return val.is_number_integer();
    if (def.is_boolean()) return val.is_boolean();
    if (def.is_string()) return val.is_string();
    if (def.is_array()) return val.is_array();
    if (def.is_object()) return val.is_object();
    return def.type() == val.type();
}

void merge(json& base, const json& patch, const std::string& path) {
    if (!patch.is_object()) throw ParameterError("config: '" + path + "' must be an object");
    for (const auto& [key, value] : patch.items()) {
        const auto full = path.empty() ? key : path + "." + key;
        if (!base.contains(key)) throw ParameterError("config: unknown key '" + full + "'");
        auto& slot = base[key];
        if (!compatible(slot, value)) {
            throw ParameterError("config: '" + full + "' expects " + type_name(slot) + ", got " +
                                 type_name(value));
        }
        if (slot.is_object()) {
            merge(slot, value, full);
        } else if (slot.is_number_float()) {
            slot = value.get<double>();
        } else {
            slot = value;
        }
    }
}

template <typename T>
T get(const json& doc, const char* section, const char* key) {
    return doc.at(section).at(key).get<T>();
}

void require(bool ok, const std::string& message) {
    if (!ok) throw ParameterError("config: " + message);
}

PretrainConfig pretrain_section(const json& s, int num_steps) {
    PretrainConfig c;
    c.iterations = s.at("iterations").get<int>();
    c.batch_size = s.at("batch_size").get<int>();
    c.lr = s.at("lr").get<double>();
    c.weight_decay = s.at("weight_decay").get<double>();
    c.p_uncond = s.at("p_uncond").get<double>();
    c.log_every = s.at("log_every").get<int>();
    c.t_min = s.at("t_min").get<int>();
    require(c.t_min >= 1 && c.t_min <= num_steps, "t_min must lie in [1, schedule.num_steps]");
    require(c.iterations >= 1 && c.batch_size >= 1 && c.lr > 0.0, "pretraining needs iterations, batch_size, lr > 0");
    require(c.p_uncond >= 0.0 && c.p_uncond <= 1.0, "p_uncond must lie in [0, 1]");
    return c;
}

}  // namespace

json RunConfig::defaults() {
    return json{
        {"seed", 1234},
        {"out_dir", "runs/default"},
        {"schedule",
         {{"num_steps", 1000}, {"beta_start", 1e-4}, {"beta_end", 0.02}, {"weight_mode", "inverse_noise"}}},
        {"conditioning", {{"grid", 8}, {"canny_sigma", 1.4}, {"canny_low", 0.1}, {"canny_high", 0.2}}},
        {"degradation",
         {{"blur_sigma_min", 0.2},
          {"blur_sigma_max", 3.0},
          {"filters", {"nearest", "bilinear", "area"}},
          {"noise_std_min", 0.0},
          {"noise_std_max", 0.1},
          {"jpeg_quality_min", 30},
          {"jpeg_quality_max", 95},
          {"second_order", false}}},
        {"data",
         {{"image_size", 64},
          {"num_train", 512},
          {"num_test", 64},
          {"scale", 4},
          {"families", {"gradient", "checkerboard", "blobs", "band_noise", "shapes"}}}},
        {"models",
         {{"widths", {16, 32, 64}},
          {"emb_dim", 64},
          {"groups", 8},
          {"prediction", "v"},
          {"lora_rank", 4},
          {"lora_multiplier", 1.0},
          {"t_fix", 1000},
          {"input_hidden", 16},
          {"residual_pool", 8},
          {"perceptual_seed", 24301}}},
        {"teacher",
         {{"iterations", 3000},
          {"batch_size", 8},
          {"lr", 1e-3},
          {"weight_decay", 0.01},
          {"p_uncond", 0.1},
          {"t_min", 1},
          {"log_every", 250}}},
        {"adapter",
         {{"iterations", 2000},
          {"batch_size", 8},
          {"lr", 1e-3},
          {"weight_decay", 0.01},
          {"p_uncond", 0.1},
          {"t_min", 400},
          {"log_every", 250}}},
        {"train",
         {{"lr_generator", 5e-5},
          {"lr_aux", 5e-5},
          {"batch_size", 4},
          {"iterations", 2000},
          {"guidance", 2.0},
          {"adapter_scale", 1.0},
          {"lambda_rec", 1.0},
          {"lambda_perceptual", 1.0},
          {"lambda_reg", 1.0},
          {"weight_decay", 0.01},
          {"regularizer", "icm"},
          {"aux_uses_adapter", false},
          {"log_every", 100},
          {"checkpoint_every", 0}}},
        {"eval", {{"probe_timesteps", {500, 620, 740, 860, 980}}, {"adapter_scale", 1.0}, {"grid_images", 4}}},
    };
}

RunConfig::RunConfig() : doc_(defaults()) {}

RunConfig RunConfig::from_json(const json& doc) {
    RunConfig cfg;
    merge(cfg.doc_, doc, "");
    cfg.validate();
    return cfg;
}

RunConfig RunConfig::from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParameterError("config: cannot read " + path.string());
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ParameterError("config: " + path.string() + ": " + e.what());
    }
    return from_json(doc);
}

void RunConfig::set(const std::string& dotted_key, const json& value) {
    json patch = value;
    std::string key = dotted_key;
    while (true) {
        const auto pos = key.rfind('.');
        patch = json{{key.substr(pos == std::string::npos ? 0 : pos + 1), patch}};
        if (pos == std::string::npos) break;
        key = key.substr(0, pos);
    }
    json next = doc_;
    merge(next, patch, "");
    RunConfig probe;
    probe.doc_ = next;
    probe.validate();
    doc_ = std::move(next);
}

void RunConfig::apply_override(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) {
        throw ParameterError("config: override '" + assignment + "' is not key=value");
    }
    const auto key = assignment.substr(0, eq);
    const auto text = assignment.substr(eq + 1);
    json value;
    try {
        value = json::parse(text);
    } catch (const json::parse_error&) {
        value = text;
    }
    set(key, value);
}

void RunConfig::write(const std::filesystem::path& path) const {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    out << doc_.dump(2) << '\n';
}

std::uint64_t RunConfig::seed() const { return doc_.at("seed").get<std::uint64_t>(); }

std::filesystem::path RunConfig::out_dir() const { return doc_.at("out_dir").get<std::string>(); }

NoiseSchedule RunConfig::schedule() const {
    const auto& s = doc_.at("schedule");
    const auto d = data();
    return make_linear_schedule(s.at("num_steps").get<int>(), s.at("beta_start").get<double>(),
                                s.at("beta_end").get<double>(),
                                weight_mode_from_string(s.at("weight_mode").get<std::string>()),
                                static_cast<std::int64_t>(3) * d.image_size * d.image_size);
}

ConditioningConfig RunConfig::conditioning() const {
    const auto& s = doc_.at("conditioning");
    ConditioningConfig c;
    c.grid = s.at("grid").get<int>();
    c.canny_sigma = s.at("canny_sigma").get<double>();
    c.canny_low = s.at("canny_low").get<double>();
    c.canny_high = s.at("canny_high").get<double>();
    require(c.grid >= 1, "conditioning.grid must be >= 1");
    require(c.canny_sigma > 0.0, "conditioning.canny_sigma must be > 0");
    require(c.canny_low > 0.0 && c.canny_low < c.canny_high, "need 0 < canny_low < canny_high");
    return c;
}

DegradationConfig RunConfig::degradation() const {
    const auto& s = doc_.at("degradation");
    DegradationConfig c;
    c.blur_sigma_min = s.at("blur_sigma_min").get<double>();
    c.blur_sigma_max = s.at("blur_sigma_max").get<double>();
    c.filters.clear();
    for (const auto& f : s.at("filters")) c.filters.push_back(resample_filter_from_string(f.get<std::string>()));
    c.noise_std_min = s.at("noise_std_min").get<double>();
    c.noise_std_max = s.at("noise_std_max").get<double>();
    c.jpeg_quality_min = s.at("jpeg_quality_min").get<int>();
    c.jpeg_quality_max = s.at("jpeg_quality_max").get<int>();
    c.second_order = s.at("second_order").get<bool>();
    require(!c.filters.empty(), "degradation.filters must not be empty");
    require(0.0 <= c.blur_sigma_min && c.blur_sigma_min <= c.blur_sigma_max, "invalid blur range");
    require(0.0 <= c.noise_std_min && c.noise_std_min <= c.noise_std_max, "invalid noise range");
    require(1 <= c.jpeg_quality_min && c.jpeg_quality_min <= c.jpeg_quality_max && c.jpeg_quality_max <= 100,
            "invalid jpeg quality range");
    return c;
}

DataConfig RunConfig::data() const {
    const auto& s = doc_.at("data");
    DataConfig c;
    c.image_size = s.at("image_size").get<int>();
    c.num_train = s.at("num_train").get<int>();
    c.num_test = s.at("num_test").get<int>();
    c.scale = s.at("scale").get<int>();
    c.families.clear();
    for (const auto& f : s.at("families")) c.families.push_back(texture_family_from_string(f.get<std::string>()));
    require(!c.families.empty(), "data.families must not be empty");
    require(c.num_train >= 1 && c.num_test >= 1, "data.num_train and data.num_test must be >= 1");
    require(c.scale >= 1 && c.image_size % c.scale == 0, "data.image_size must be divisible by data.scale");
    return c;
}

DenoiserConfig RunConfig::denoiser() const {
    const auto& s = doc_.at("models");
    DenoiserConfig c;
    c.widths = s.at("widths").get<std::vector<int>>();
    c.emb_dim = s.at("emb_dim").get<int>();
    c.groups = s.at("groups").get<int>();
    c.prediction = prediction_from_string(s.at("prediction").get<std::string>());
    c.num_classes = static_cast<int>(doc_.at("data").at("families").size());
    require(!c.widths.empty(), "models.widths must not be empty");
    for (int w : c.widths) require(w >= 1, "models.widths entries must be >= 1");
    const int image_size = doc_.at("data").at("image_size").get<int>();
    require(image_size % (1 << (c.widths.size() - 1)) == 0,
            "data.image_size must be divisible by 2^(levels - 1)");
    require(c.emb_dim >= 2 && c.emb_dim % 2 == 0, "models.emb_dim must be even");
    return c;
}

GeneratorConfig RunConfig::generator() const {
    const auto& s = doc_.at("models");
    GeneratorConfig c;
    c.scale = doc_.at("data").at("scale").get<int>();
    c.t_fix = s.at("t_fix").get<int>();
    c.lora_rank = s.at("lora_rank").get<int>();
    c.lora_multiplier = s.at("lora_multiplier").get<double>();
    c.input_hidden = s.at("input_hidden").get<int>();
    c.residual_pool = s.at("residual_pool").get<int>();
    const int steps = doc_.at("schedule").at("num_steps").get<int>();
    require(c.t_fix >= 1 && c.t_fix <= steps, "models.t_fix must lie in [1, num_steps]");
    require(c.lora_rank >= 1, "models.lora_rank must be >= 1");
    require(c.input_hidden >= 1, "models.input_hidden must be >= 1");
    const int hq = doc_.at("data").at("image_size").get<int>();
    require(c.residual_pool >= 0 && (c.residual_pool == 0 || hq % c.residual_pool == 0),
            "models.residual_pool must be 0 or divide data.image_size");
    return c;
}

std::uint64_t RunConfig::perceptual_seed() const {
    return doc_.at("models").at("perceptual_seed").get<std::uint64_t>();
}

PretrainConfig RunConfig::teacher_pretrain() const { return pretrain_section(doc_.at("teacher"), schedule_steps()); }

PretrainConfig RunConfig::adapter_pretrain() const { return pretrain_section(doc_.at("adapter"), schedule_steps()); }

TrainConfig RunConfig::train() const {
    const auto& s = doc_.at("train");
    TrainConfig c;
    c.lr_generator = s.at("lr_generator").get<double>();
    c.lr_aux = s.at("lr_aux").get<double>();
    c.batch_size = s.at("batch_size").get<int>();
    c.iterations = s.at("iterations").get<int>();
    c.guidance = s.at("guidance").get<double>();
    c.adapter_scale = s.at("adapter_scale").get<double>();
    c.lambda_rec = s.at("lambda_rec").get<double>();
    c.lambda_perceptual = s.at("lambda_perceptual").get<double>();
    c.lambda_reg = s.at("lambda_reg").get<double>();
    c.weight_decay = s.at("weight_decay").get<double>();
    c.regularizer = regularizer_from_string(s.at("regularizer").get<std::string>());
    c.aux_uses_adapter = s.at("aux_uses_adapter").get<bool>();
    c.adapter_t_min = adapter_pretrain().t_min;
    c.seed = mix_seed(seed(), 0xD157);
    require(c.lr_generator > 0.0 && c.lr_aux > 0.0, "train learning rates must be > 0");
    require(c.batch_size >= 1 && c.iterations >= 1, "train.batch_size and train.iterations must be >= 1");
    require(c.guidance >= 0.0, "train.guidance must be >= 0");
    require(c.adapter_scale >= 0.0, "train.adapter_scale must be >= 0");
    return c;
}

int RunConfig::train_log_every() const { return doc_.at("train").at("log_every").get<int>(); }

int RunConfig::train_checkpoint_every() const { return doc_.at("train").at("checkpoint_every").get<int>(); }

EvalConfig RunConfig::eval() const {
    const auto& s = doc_.at("eval");
    EvalConfig c;
    c.probe_timesteps = s.at("probe_timesteps").get<std::vector<int>>();
    c.adapter_scale = s.at("adapter_scale").get<double>();
    c.grid_images = s.at("grid_images").get<int>();
    const int steps = doc_.at("schedule").at("num_steps").get<int>();
    require(!c.probe_timesteps.empty(), "eval.probe_timesteps must not be empty");
    for (int t : c.probe_timesteps) require(t >= 1 && t <= steps, "eval.probe_timesteps out of range");
    require(c.adapter_scale >= 0.0, "eval.adapter_scale must be >= 0");
    return c;
}

void RunConfig::validate() const {
    try {
        (void)schedule();
        (void)conditioning();
        (void)degradation();
        (void)data();
        (void)denoiser();
        (void)generator();
        (void)teacher_pretrain();
        (void)adapter_pretrain();
        (void)train();
        (void)eval();
    } catch (const ParameterError&) {
        throw;
    } catch (const std::exception& e) {
        throw ParameterError(std::string("config: ") + e.what());
    }
}

}  // namespace icm
