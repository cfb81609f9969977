#include "headsplat/config.hpp"

#include <sstream>

#include <toml.hpp>

#include "headsplat/errors.hpp"

namespace headsplat {

using nlohmann::json;

TrainConfig TrainConfig::desk() { return TrainConfig{}; }

TrainConfig TrainConfig::paper() {
    TrainConfig c;
    c.preset = "paper";
    c.stage1_iterations = 10000;
    c.stage2_iterations = 10000;
    c.stage3_iterations = 50000;
    c.batch_size = 4;
    c.learning_rate = 1e-4;
    c.lr_final_scale = 1.0;
    c.resolution = 256;
    c.num_gaussians = 50000;
    c.triplane_resolution = 128;
    c.generator.widths = {256, 256, 128, 128, 64, 32, 16};
    return c;
}

void TrainConfig::validate() const {
    require(stage >= 0 && stage <= 3, ErrorCode::InvalidArgument, "stage must be 1, 2, 3 or all");
    for (int s = 1; s <= 3; ++s) {
        require(iterations(s) >= 1, ErrorCode::InvalidArgument, "iterations must be >= 1");
    }
    for (double lr : {learning_rate, lr_position, lr_feature, lr_opacity, lr_scale, lr_rotation, lr_latent,
                      lr_discriminator}) {
        require(lr > 0.0, ErrorCode::InvalidArgument, "learning rates must be positive");
    }
    require(lr_final_scale > 0.0 && lr_final_scale <= 1.0, ErrorCode::InvalidArgument,
            "lr.final_scale must be in (0, 1]");
    require(batch_size >= 1, ErrorCode::InvalidArgument, "batch_size must be >= 1");
    require(resolution >= 8 && num_gaussians >= 1 && latent_dim >= 1 && plane_channels >= 1,
            ErrorCode::InvalidArgument, "model sizes must be positive");
    require(generator.blocks() >= 1, ErrorCode::InvalidArgument, "generator needs blocks");
    injection.validate(generator.blocks());
    require(pti.steps1 >= 0 && pti.steps2 >= 0, ErrorCode::InvalidArgument, "PTI steps must be >= 0");
}

std::int64_t TrainConfig::iterations(int s) const {
    switch (s) {
    case 1: return stage1_iterations;
    case 2: return stage2_iterations;
    case 3: return stage3_iterations;
    default: fail(ErrorCode::InvalidArgument, "no stage " + std::to_string(s));
    }
}

json TrainConfig::to_json() const {
    json j;
    j["preset"] = preset;
    j["stage"] = stage;
    j["iterations"] = {{"stage1", stage1_iterations}, {"stage2", stage2_iterations}, {"stage3", stage3_iterations}};
    j["batch_size"] = batch_size;
    j["seed"] = seed;
    j["learning_rate"] = learning_rate;
    j["lr"] = {{"position", lr_position}, {"feature", lr_feature},   {"opacity", lr_opacity},
               {"scale", lr_scale},       {"rotation", lr_rotation}, {"latent", lr_latent},
               {"discriminator", lr_discriminator}, {"final_scale", lr_final_scale}};
    j["weights"] = {{"rgb", weights.rgb},   {"lpips", weights.lpips},   {"lmk", weights.lmk},
                    {"perceptual", weights.perceptual}, {"gan_l1", weights.gan_l1}, {"adv", weights.adv}};
    j["model"] = {{"resolution", resolution},
                  {"num_gaussians", num_gaussians},
                  {"triplane_resolution", triplane_resolution},
                  {"plane_channels", plane_channels},
                  {"latent_dim", latent_dim},
                  {"style_dim", generator.style_dim},
                  {"generator_widths", generator.widths}};
    j["injection"] = {{"region", to_string(injection.region)},
                      {"blocks", std::vector<int>(injection.active_blocks.begin(), injection.active_blocks.end())},
                      {"enabled", injection.enabled}};
    j["pti"] = {{"steps1", pti.steps1},
                {"steps2", pti.steps2},
                {"lr_w", pti.lr_w},
                {"lr_generator", pti.lr_generator},
                {"perceptual_weight", pti.perceptual_weight},
                {"views", pti_views}};
    j["toggles"] = {{"triplane", toggles.triplane},
                    {"cross_attention", toggles.cross_attention},
                    {"temporal_latent", toggles.temporal_latent},
                    {"mesh_init", toggles.mesh_init},
                    {"discriminator", toggles.discriminator},
                    {"ada", toggles.ada},
                    {"full_tune", toggles.full_tune}};
    j["paths"] = {{"dataset", dataset.string()}, {"out", out.string()}};
    return j;
}

namespace {

void check_keys(const json& base, const json& overlay, const std::string& where) {
    require(overlay.is_object(), ErrorCode::InvalidArgument, "config section '" + where + "' must be a table");
    for (const auto& [key, value] : overlay.items()) {
        require(base.contains(key), ErrorCode::InvalidArgument, "unknown config key '" + where + key + "'");
        if (base[key].is_object()) {
            check_keys(base[key], value, where + key + ".");
        }
    }
}

} // namespace

TrainConfig TrainConfig::from_json(const json& j) {
    TrainConfig c;
    try {
        c.preset = j.at("preset").get<std::string>();
        c.stage = j.at("stage").get<int>();
        c.stage1_iterations = j.at("iterations").at("stage1").get<std::int64_t>();
        c.stage2_iterations = j.at("iterations").at("stage2").get<std::int64_t>();
        c.stage3_iterations = j.at("iterations").at("stage3").get<std::int64_t>();
        c.batch_size = j.at("batch_size").get<std::int64_t>();
        c.seed = j.at("seed").get<std::uint64_t>();
        c.learning_rate = j.at("learning_rate").get<double>();
        const auto& lr = j.at("lr");
        c.lr_position = lr.at("position").get<double>();
        c.lr_feature = lr.at("feature").get<double>();
        c.lr_opacity = lr.at("opacity").get<double>();
        c.lr_scale = lr.at("scale").get<double>();
        c.lr_rotation = lr.at("rotation").get<double>();
        c.lr_latent = lr.at("latent").get<double>();
        c.lr_discriminator = lr.at("discriminator").get<double>();
        c.lr_final_scale = lr.value("final_scale", c.lr_final_scale);
        const auto& w = j.at("weights");
        c.weights.rgb = w.at("rgb").get<double>();
        c.weights.lpips = w.at("lpips").get<double>();
        c.weights.lmk = w.at("lmk").get<double>();
        c.weights.perceptual = w.at("perceptual").get<double>();
        c.weights.gan_l1 = w.at("gan_l1").get<double>();
        c.weights.adv = w.at("adv").get<double>();
        const auto& m = j.at("model");
        c.resolution = m.at("resolution").get<std::int64_t>();
        c.num_gaussians = m.at("num_gaussians").get<std::int64_t>();
        c.triplane_resolution = m.at("triplane_resolution").get<std::int64_t>();
        c.plane_channels = m.at("plane_channels").get<std::int64_t>();
        c.latent_dim = m.at("latent_dim").get<std::int64_t>();
        c.generator.style_dim = m.at("style_dim").get<std::int64_t>();
        c.generator.widths = m.at("generator_widths").get<std::vector<std::int64_t>>();
        const auto& inj = j.at("injection");
        c.injection.region = parse_region(inj.at("region").get<std::string>());
        auto blocks = inj.at("blocks").get<std::vector<int>>();
        c.injection.active_blocks = std::set<int>(blocks.begin(), blocks.end());
        c.injection.enabled = inj.at("enabled").get<bool>();
        const auto& p = j.at("pti");
        c.pti.steps1 = p.at("steps1").get<std::int64_t>();
        c.pti.steps2 = p.at("steps2").get<std::int64_t>();
        c.pti.lr_w = p.at("lr_w").get<double>();
        c.pti.lr_generator = p.at("lr_generator").get<double>();
        c.pti.perceptual_weight = p.at("perceptual_weight").get<double>();
        c.pti_views = p.at("views").get<std::vector<std::int64_t>>();
        const auto& t = j.at("toggles");
        c.toggles.triplane = t.at("triplane").get<bool>();
        c.toggles.cross_attention = t.at("cross_attention").get<bool>();
        c.toggles.temporal_latent = t.at("temporal_latent").get<bool>();
        c.toggles.mesh_init = t.at("mesh_init").get<bool>();
        c.toggles.discriminator = t.at("discriminator").get<bool>();
        c.toggles.ada = t.at("ada").get<bool>();
        c.toggles.full_tune = t.at("full_tune").get<bool>();
        c.dataset = j.at("paths").at("dataset").get<std::string>();
        c.out = j.at("paths").at("out").get<std::string>();
    } catch (const json::exception& e) {
        fail(ErrorCode::InvalidArgument, std::string("config: ") + e.what());
    }
    c.validate();
    return c;
}

void TrainConfig::merge_json(const json& overlay) {
    auto base = to_json();
    check_keys(base, overlay, "");
    base.merge_patch(overlay);
    *this = from_json(base);
}

void TrainConfig::merge_toml(const std::filesystem::path& path) {
    toml::table table;
    try {
        table = toml::parse_file(path.string());
    } catch (const toml::parse_error& e) {
        std::ostringstream msg;
        msg << path.string() << ": " << e.description() << " at " << e.source().begin;
        fail(ErrorCode::InvalidArgument, msg.str());
    }
    std::ostringstream as_json;
    as_json << toml::json_formatter{table};
    merge_json(json::parse(as_json.str()));
}

std::string iteration_plan(const TrainConfig& cfg) {
    auto k = [](std::int64_t n) {
        if (n % 1000 == 0) return std::to_string(n / 1000) + "k";
        return std::to_string(n);
    };
    return k(cfg.stage1_iterations) + "/" + k(cfg.stage2_iterations) + "/" + k(cfg.stage3_iterations);
}

} // namespace headsplat
