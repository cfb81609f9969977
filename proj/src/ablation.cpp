#include "headsplat/ablation.hpp"

#include "headsplat/errors.hpp"
#include "headsplat/metrics_eval.hpp"
#include "headsplat/trainer.hpp"

namespace headsplat {

namespace fs = std::filesystem;

Study parse_study(const std::string& text) {
    for (auto s : {Study::Regions, Study::Blocks, Study::Prune, Study::Features, Study::Gan}) {
        if (to_string(s) == text) return s;
    }
    fail(ErrorCode::InvalidArgument, "unknown study '" + text + "'");
}

std::string to_string(Study study) {
    switch (study) {
    case Study::Regions: return "regions";
    case Study::Blocks: return "blocks";
    case Study::Prune: return "prune";
    case Study::Features: return "features";
    case Study::Gan: return "gan";
    }
    return "?";
}

namespace {

std::set<int> all_blocks(const TrainConfig& c) {
    std::set<int> out;
    for (int b = 1; b <= c.generator.blocks(); ++b) out.insert(b);
    return out;
}

void adopt_inverted_generator(AvatarModel& model, const fs::path& run) {
    auto generator = load_generator(run / "pti" / "generator");
    auto src = named_parameters(*generator);
    auto dst = named_parameters(*model.generator);
    torch::NoGradGuard guard;
    for (auto& [name, t] : dst) {
        auto it = src.find(name);
        require(it != src.end() && it->second.sizes() == t.sizes(), ErrorCode::SchemaMismatch,
                "inverted generator lacks '" + name + "'");
        t.copy_(it->second);
    }
    model.generator->set_initialized(true);
    model.w = load_tensor_store(run / "pti" / "pivot").at("w").clone();
}

AblationRecord score(AvatarModel& model, const AvatarDataset& data, const InjectionConfig& injection) {
    AblationRecord r;
    const auto& frames = data.test.empty() ? data.train : data.test;
    double p = 0.0, l = 0.0;
    torch::NoGradGuard guard;
    for (auto f : frames) {
        const auto& cond = data.frames[static_cast<std::size_t>(f)].cond;
        auto out = model.synthesize(model.render(cond, true), injection);
        const auto& gt = data.image(f);
        require(out.sizes() == gt.sizes(), ErrorCode::ShapeMismatch, "generator output and frames differ in size");
        p += psnr(out, gt);
        l += lpips(out, gt, model.extractor.get());
    }
    r.psnr = p / double(frames.size());
    r.lpips = l / double(frames.size());
    r.region = to_string(injection.region);
    r.blocks.assign(injection.active_blocks.begin(), injection.active_blocks.end());
    return r;
}

// Short stage-3 run from the stage-2 checkpoint.
AblationRecord short_stage3(const AvatarDataset& data, TrainConfig cfg, const fs::path& run, std::int64_t iterations) {
    cfg.stage3_iterations = iterations;
    Trainer trainer(data, cfg);
    trainer.load_checkpoint(stage_dir(run, 2));
    adopt_inverted_generator(trainer.model(), run);
    trainer.run_stage(3, {}, 0, iterations);
    auto r = score(trainer.model(), data, cfg.injection);
    r.iterations = iterations;
    return r;
}

// Short run of every stage with the given toggles.
AblationRecord short_pipeline(const AvatarDataset& data, TrainConfig cfg, const fs::path& run,
                              std::int64_t iterations) {
    cfg.stage1_iterations = cfg.stage2_iterations = cfg.stage3_iterations = iterations;
    Trainer trainer(data, cfg);
    trainer.run_stage(1, {});
    trainer.run_stage(2, {});
    adopt_inverted_generator(trainer.model(), run);
    trainer.run_stage(3, {});
    auto r = score(trainer.model(), data, cfg.injection);
    r.iterations = 3 * iterations;
    return r;
}

} // namespace

std::vector<AblationRecord> run_ablation(Study study, const AvatarDataset& data, const TrainConfig& config,
                                         const fs::path& run, const AblationOptions& options) {
    require(options.epochs >= 1, ErrorCode::InvalidArgument, "epochs must be >= 1");
    const auto iterations = options.epochs * static_cast<std::int64_t>(data.train.size());
    const auto blocks = all_blocks(config);
    std::vector<AblationRecord> out;
    auto add = [&](AblationRecord r, const std::string& label) {
        r.study = to_string(study);
        r.label = label;
        out.push_back(std::move(r));
    };

    switch (study) {
    case Study::Regions:
        for (auto region : all_regions()) {
            auto cfg = config;
            cfg.injection = {region, blocks, true};
            add(short_stage3(data, cfg, run, iterations), to_string(region));
        }
        break;
    case Study::Blocks:
        for (int b : blocks) {
            auto cfg = config;
            cfg.injection = {Region::R3, {b}, true};
            add(short_stage3(data, cfg, run, iterations), "block " + std::to_string(b));
        }
        break;
    case Study::Prune: {
        Trainer trainer(data, config);
        trainer.load_checkpoint(stage_dir(run, 3));
        auto& model = trainer.model();
        const auto region = config.injection.region;
        add(score(model, data, {region, blocks, true}), "all blocks");
        for (int b : blocks) {
            auto kept = blocks;
            kept.erase(b);
            if (kept.empty()) continue;
            add(score(model, data, {region, kept, true}), "without block " + std::to_string(b));
        }
        break;
    }
    case Study::Features: {
        add(short_pipeline(data, config, run, iterations), "ours");
        auto cfg = config;
        cfg.toggles.triplane = false;
        add(short_pipeline(data, cfg, run, iterations), "w/o triplane");
        cfg = config;
        cfg.toggles.cross_attention = false;
        add(short_pipeline(data, cfg, run, iterations), "w/o cross-atten");
        cfg = config;
        cfg.toggles.temporal_latent = false;
        add(short_pipeline(data, cfg, run, iterations), "w/o z_tmp");
        cfg = config;
        cfg.toggles.mesh_init = false;
        add(short_pipeline(data, cfg, run, iterations), "w/o init");
        break;
    }
    case Study::Gan: {
        add(short_stage3(data, config, run, iterations), "ours");
        auto cfg = config;
        cfg.toggles.ada = false;
        add(short_stage3(data, cfg, run, iterations), "w/o ADA-aug");
        cfg = config;
        cfg.toggles.discriminator = false;
        add(short_stage3(data, cfg, run, iterations), "w/o Discri");
        cfg = config;
        cfg.toggles.full_tune = true;
        add(short_stage3(data, cfg, run, iterations), "full-tune");
        break;
    }
    }
    return out;
}

nlohmann::json to_json(const std::vector<AblationRecord>& records) {
    auto arr = nlohmann::json::array();
    for (const auto& r : records) {
        arr.push_back({{"study", r.study},
                       {"label", r.label},
                       {"region", r.region},
                       {"blocks", r.blocks},
                       {"psnr", r.psnr},
                       {"lpips", r.lpips},
                       {"iterations", r.iterations}});
    }
    return arr;
}

} // namespace headsplat
