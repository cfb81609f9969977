// headsplat: command line front end for dataset synthesis, staged training,
// inversion, rendering, ablations and evaluation.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "headsplat/ablation.hpp"
#include "headsplat/config.hpp"
#include "headsplat/data_pipeline.hpp"
#include "headsplat/errors.hpp"
#include "headsplat/generator_bridge.hpp"
#include "headsplat/image_io.hpp"
#include "headsplat/metrics_eval.hpp"
#include "headsplat/model.hpp"
#include "headsplat/tensor_store.hpp"
#include "headsplat/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace headsplat;

namespace {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Collects what a command did; written once when the command finishes.
struct RunManifest {
    std::string command;
    std::vector<std::string> argv;
    json config = json::object();
    json inputs = json::object();
    std::vector<std::string> outputs;
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
    json extra = json::object();

    void input(const std::string& label, const fs::path& p) {
        if (fs::is_regular_file(p)) {
            inputs[label] = {{"path", p.string()}, {"hash", content_hash_file(p)}};
        } else if (fs::exists(p / "manifest.json")) {
            inputs[label] = {{"path", p.string()}, {"hash", content_hash_file(p / "manifest.json")}};
        } else if (fs::exists(p / "tracking.json")) {
            inputs[label] = {{"path", p.string()}, {"hash", content_hash_file(p / "tracking.json")}};
        } else {
            inputs[label] = {{"path", p.string()}};
        }
    }

    void write(const fs::path& path) const {
        json j;
        j["command"] = command;
        j["argv"] = argv;
        j["config"] = config;
        j["inputs"] = inputs;
        j["outputs"] = outputs;
        j["wall_clock_seconds"] =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        j["result"] = extra;
        if (path.has_parent_path()) fs::create_directories(path.parent_path());
        std::ofstream(path) << j.dump(2) << '\n';
    }
};

std::string frame_file(std::int64_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%06lld.png", static_cast<long long>(i));
    return buf;
}

/// A run directory, a stage directory or a checkpoint directory.
fs::path resolve_checkpoint(const fs::path& p) {
    if (fs::exists(p / "manifest.json")) return p;
    for (int s = 3; s >= 1; --s) {
        if (fs::exists(stage_dir(p, s) / "manifest.json")) return stage_dir(p, s);
    }
    fail(ErrorCode::MissingCheckpoint, "no checkpoint under " + p.string());
}

fs::path run_dir_of(const fs::path& ckpt) {
    return fs::exists(ckpt / "manifest.json") && ckpt.filename().string().rfind("stage", 0) == 0 ? ckpt.parent_path()
                                                                                                   : ckpt;
}

TrainConfig config_of(const fs::path& ckpt) {
    auto store = load_tensor_store(ckpt);
    return TrainConfig::from_json(store.meta.at("config"));
}

std::vector<double> parse_range(const std::string& text) {
    double a = 0, b = 0, step = 0;
    char c1 = 0, c2 = 0;
    std::istringstream in(text);
    if (!(in >> a >> c1 >> b >> c2 >> step) || c1 != ':' || c2 != ':' || step <= 0 || b < a) {
        throw UsageError("--yaw expects start:stop:step, e.g. -30:30:5");
    }
    std::vector<double> out;
    for (int k = 0;; ++k) {
        const double v = a + k * step;
        if (v > b + 1e-9) break;
        out.push_back(v);
    }
    return out;
}

std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream in(text);
    while (std::getline(in, item, ',')) {
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

// ---------------------------------------------------------------------------

int cmd_synth(const fs::path& out, const SynthSpec& spec, RunManifest& m) {
    auto ds = synth_generate(spec);
    serialize(ds, out);
    m.config = {{"frames", spec.frames},
                {"resolution", spec.resolution},
                {"expression_dim", spec.expression_dim},
                {"seed", spec.seed},
                {"supersample", spec.supersample}};
    m.outputs.push_back(out.string());
    m.extra = {{"tracking_hash", content_hash_file(out / "tracking.json")}};
    m.write(out / "run_manifest.json");
    std::cout << "wrote " << spec.frames << " frames to " << out.string() << '\n';
    return 0;
}

int cmd_ingest(const fs::path& dataset, RunManifest& m) {
    auto ds = ingest(dataset);
    m.input("dataset", dataset);
    m.extra = {{"frames", ds.size()},
               {"train", ds.train.size()},
               {"test", ds.test.size()},
               {"width", ds.width()},
               {"height", ds.height()},
               {"expression_dim", ds.expression_dim()},
               {"uv", ds.has_uv()}};
    m.write(dataset / "run_manifest.json");
    std::cout << ds.size() << " frames (" << ds.train.size() << " train / " << ds.test.size() << " test), "
              << ds.width() << "x" << ds.height() << '\n';
    return 0;
}

int cmd_train(const fs::path& dataset, const std::string& stage, const fs::path& config_file, const fs::path& out,
              bool paper, bool plan_only, std::optional<std::uint64_t> seed, RunManifest& m) {
    auto cfg = paper ? TrainConfig::paper() : TrainConfig::desk();
    if (!config_file.empty()) {
        cfg.merge_toml(config_file);
        m.input("config", config_file);
    }
    if (seed) cfg.seed = *seed;
    cfg.dataset = dataset;
    cfg.out = out;
    if (stage != "all") {
        cfg.stage = std::stoi(stage);
    }
    cfg.validate();
    std::cout << "preset " << cfg.preset << ", iteration plan " << iteration_plan(cfg) << " (stage 1/2/3), batch "
              << cfg.batch_size << '\n';
    m.config = cfg.to_json();
    if (plan_only) {
        m.extra = {{"plan", iteration_plan(cfg)}};
        fs::create_directories(out);
        m.write(out / "run_manifest.json");
        return 0;
    }

    auto ds = ingest(dataset);
    m.input("dataset", dataset);
    Trainer trainer(ds, cfg);
    std::vector<StageReport> reports;
    if (cfg.stage == 0) {
        reports = trainer.run_all(out);
    } else {
        if (cfg.stage >= 2) {
            const auto prev = stage_dir(out, cfg.stage - 1);
            require(fs::exists(prev / "manifest.json"), ErrorCode::MissingCheckpoint,
                    "stage " + std::to_string(cfg.stage) + " needs the stage-" + std::to_string(cfg.stage - 1) +
                        " checkpoint at " + prev.string());
            trainer.load_checkpoint(prev);
        }
        if (cfg.stage == 3 && !trainer.model().generator_initialized()) {
            trainer.run_pti(out / "pti");
        }
        reports.push_back(trainer.run_stage(cfg.stage, stage_dir(out, cfg.stage)));
    }
    json summary = json::array();
    for (const auto& r : reports) {
        m.outputs.push_back(r.checkpoint.string());
        summary.push_back({{"stage", r.stage},
                           {"iterations", r.trace.size()},
                           {"final_loss", r.trace.empty() ? 0.0 : r.trace.back().total},
                           {"seconds", r.seconds}});
        std::cout << "stage " << r.stage << ": " << r.trace.size() << " iterations, final loss "
                  << (r.trace.empty() ? 0.0 : r.trace.back().total) << ", " << r.seconds << " s\n";
    }
    const int last = reports.empty() ? 0 : reports.back().stage;
    const auto kind = last == 3 ? OutputKind::Synthesized : last == 2 ? OutputKind::Deformed : OutputKind::Canonical;
    const double train_psnr = mean_psnr(trainer.model(), ds, ds.train, kind);
    std::cout << "training-frame PSNR " << train_psnr << " dB\n";
    m.extra = {{"stages", summary}, {"train_psnr", train_psnr}};
    m.write(out / "run_manifest.json");
    return 0;
}

int cmd_render(const fs::path& ckpt_arg, const fs::path& dataset_arg, const std::string& mode, const fs::path& driving,
               const std::string& yaw, std::int64_t frame, double exp_scale, const std::string& output,
               const fs::path& out, RunManifest& m) {
    const auto ckpt = resolve_checkpoint(ckpt_arg);
    auto cfg = config_of(ckpt);
    const auto dataset = dataset_arg.empty() ? cfg.dataset : dataset_arg;
    auto ds = ingest(dataset);
    m.input("checkpoint", ckpt);
    m.input("dataset", dataset);
    Trainer trainer(ds, cfg);
    const auto info = trainer.load_checkpoint(ckpt);
    auto& model = trainer.model();
    OutputKind kind = info.stage == 3 ? OutputKind::Synthesized : info.stage == 2 ? OutputKind::Deformed
                                                                                    : OutputKind::Canonical;
    if (output == "canonical") kind = OutputKind::Canonical;
    if (output == "deformed") kind = OutputKind::Deformed;
    if (output == "synth") kind = OutputKind::Synthesized;
    m.config = {{"mode", mode}, {"stage", info.stage}, {"exp_scale", exp_scale}, {"output", output}};

    auto boxes_json = [](const std::optional<LandmarkBoxes>& b) {
        if (!b) return json();
        return json{{"eyes", {b->eyes.x0, b->eyes.y0, b->eyes.x1, b->eyes.y1}},
                    {"mouth", {b->mouth.x0, b->mouth.y0, b->mouth.x1, b->mouth.y1}}};
    };
    std::int64_t written = 0;
    if (mode == "self") {
        json boxes = json::array();
        for (auto f : ds.test) {
            const auto& cond = ds.frames[static_cast<std::size_t>(f)].cond;
            write_png(out / "pred" / frame_file(f), frame_output(model, cond, kind, exp_scale));
            write_png(out / "gt" / frame_file(f), ds.image(f));
            boxes.push_back(boxes_json(cond.boxes));
            ++written;
        }
        std::ofstream(out / "pred" / "boxes.json") << boxes.dump() << '\n';
        std::ofstream(out / "gt" / "boxes.json") << boxes.dump() << '\n';
        m.outputs = {(out / "pred").string(), (out / "gt").string()};
    } else if (mode == "cross") {
        if (driving.empty()) throw UsageError("--mode cross needs --driving <dataset>");
        auto drv = ingest(driving);
        m.input("driving", driving);
        require(drv.expression_dim() == ds.expression_dim(), ErrorCode::ShapeMismatch,
                "driving dataset has a different expression size");
        for (const auto& f : drv.frames) {
            auto cond = f.cond;
            cond.frame_id = -1; // no per-frame latent for foreign frames
            write_png(out / "pred" / frame_file(f.index), frame_output(model, cond, kind, exp_scale));
            ++written;
        }
        m.outputs = {(out / "pred").string()};
    } else if (mode == "orbit") {
        require(frame >= 0 && frame < ds.size(), ErrorCode::InvalidArgument, "--frame out of range");
        const auto base = ds.frames[static_cast<std::size_t>(frame)].cond;
        const Eigen::Matrix3d r0 = base.camera.rotation();
        const Eigen::Vector3d eye = -r0.transpose() * base.camera.translation();
        int k = 0;
        for (double deg : parse_range(yaw)) {
            // Rotate the camera about the world vertical axis through the origin.
            const double a = deg * M_PI / 180.0;
            Eigen::Matrix3d ry;
            ry << std::cos(a), 0, std::sin(a), 0, 1, 0, -std::sin(a), 0, std::cos(a);
            auto cond = base;
            const Eigen::Matrix3d r = r0 * ry.transpose();
            const Eigen::Vector3d e = ry * eye;
            cond.camera.world_to_camera.topLeftCorner<3, 3>() = r;
            cond.camera.world_to_camera.topRightCorner<3, 1>() = -r * e;
            write_png(out / "orbit" / frame_file(k++), frame_output(model, cond, kind, exp_scale));
            ++written;
        }
        m.outputs = {(out / "orbit").string()};
    } else {
        throw UsageError("--mode must be self, cross or orbit");
    }
    m.extra = {{"frames", written}};
    m.write(out / "run_manifest.json");
    std::cout << "rendered " << written << " frames to " << out.string() << '\n';
    return 0;
}

int cmd_invert(const fs::path& ckpt_arg, const std::string& images, std::int64_t steps1, std::int64_t steps2,
               const fs::path& out, RunManifest& m) {
    const auto files = split_list(images);
    if (files.empty()) throw UsageError("--images needs at least one image");
    if (files.size() > 16) throw UsageError("--images accepts at most 16 images");

    StyleGenerator generator{nullptr};
    if (fs::exists(ckpt_arg / "manifest.json") &&
        load_tensor_store(ckpt_arg).meta.value("kind", "") == "style_generator") {
        generator = load_generator(ckpt_arg);
    } else {
        const auto ckpt = resolve_checkpoint(ckpt_arg);
        auto store = load_tensor_store(ckpt);
        auto cfg = TrainConfig::from_json(store.meta.at("config"));
        generator = StyleGenerator(cfg.generator);
        for (auto& [name, t] : named_parameters(*generator)) {
            auto target = t;
            assign_checked(target, store, "generator." + name);
        }
    }
    m.input("checkpoint", ckpt_arg);
    const auto size = generator->options().output_resolution();
    std::vector<torch::Tensor> targets;
    for (const auto& f : files) {
        m.input("image:" + f, f);
        auto img = read_png(f);
        require(img.size(0) == size && img.size(1) == size, ErrorCode::ShapeMismatch,
                f + " must be " + std::to_string(size) + "x" + std::to_string(size));
        targets.push_back(img);
    }
    PtiOptions opts;
    opts.steps1 = steps1;
    opts.steps2 = steps2;
    auto extractor = default_extractor();
    torch::set_num_threads(1);
    auto result = pti_invert(generator, targets, opts, extractor.get());
    fs::create_directories(out);
    save_generator(out / "generator", generator);
    save_tensor_store(out / "pivot", {{"w", result.w}});
    {
        std::ofstream trace(out / "trace.jsonl");
        for (std::size_t i = 0; i < result.phase1_loss.size(); ++i) {
            trace << json{{"phase", 1}, {"iter", i}, {"loss", result.phase1_loss[i]}}.dump() << '\n';
        }
        for (std::size_t i = 0; i < result.phase2_loss.size(); ++i) {
            trace << json{{"phase", 2}, {"iter", i}, {"loss", result.phase2_loss[i]}}.dump() << '\n';
        }
    }
    m.config = {{"steps1", steps1}, {"steps2", steps2}, {"lr_w", opts.lr_w}, {"lr_generator", opts.lr_generator}};
    m.outputs = {(out / "generator").string(), (out / "pivot").string(), (out / "trace.jsonl").string()};
    const double last = result.phase2_loss.empty()
                            ? (result.phase1_loss.empty() ? 0.0 : result.phase1_loss.back())
                            : result.phase2_loss.back();
    m.extra = {{"final_loss", last}};
    m.write(out / "run_manifest.json");
    std::cout << "inverted " << files.size() << " images, final loss " << last << '\n';
    return 0;
}

int cmd_ablate(const fs::path& run, const fs::path& dataset_arg, const std::string& study, std::int64_t epochs,
               const fs::path& out, RunManifest& m) {
    const auto ckpt = resolve_checkpoint(run);
    const auto run_dir = run_dir_of(run);
    auto cfg = config_of(ckpt);
    const auto dataset = dataset_arg.empty() ? cfg.dataset : dataset_arg;
    auto ds = ingest(dataset);
    m.input("checkpoint", ckpt);
    m.input("dataset", dataset);
    AblationOptions opts;
    opts.epochs = epochs;
    torch::set_num_threads(1);
    auto records = run_ablation(parse_study(study), ds, cfg, run_dir, opts);
    auto report = to_json(records);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    std::ofstream(out) << report.dump(2) << '\n';
    m.config = {{"study", study}, {"epochs", epochs}, {"train", cfg.to_json()}};
    m.outputs = {out.string()};
    m.extra = {{"records", records.size()}};
    m.write(fs::path(out.string() + ".run_manifest.json"));
    for (const auto& r : records) {
        std::cout << r.label << ": PSNR " << r.psnr << " LPIPS " << r.lpips << '\n';
    }
    return 0;
}

int cmd_eval(const fs::path& pred, const fs::path& gt, const std::string& metrics, const std::string& method,
             const fs::path& out, RunManifest& m) {
    EvalOptions opts;
    opts.metrics = split_list(metrics);
    opts.method = method;
    auto extractor = default_extractor();
    DarkBlobLandmarks landmarks;
    auto report = evaluate_dirs(pred, gt, opts, extractor.get(), &landmarks);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    std::ofstream(out) << report.to_json().dump(2) << '\n';
    fs::path md = out;
    md.replace_extension(".md");
    const auto table = markdown_table({report});
    std::ofstream(md) << table;
    m.input("pred", pred);
    m.input("gt", gt);
    m.config = {{"metrics", opts.metrics}, {"method", method}};
    m.outputs = {out.string(), md.string()};
    m.extra = report.to_json();
    m.write(fs::path(out.string() + ".run_manifest.json"));
    std::cout << table;
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Deformable Gaussian head avatars with a style-based synthesis stage"};
    app.require_subcommand(1);

    RunManifest manifest;
    for (int i = 0; i < argc; ++i) manifest.argv.emplace_back(argv[i]);

    // synth
    auto* synth = app.add_subcommand("synth", "Write a procedural head clip");
    SynthSpec spec;
    fs::path synth_out;
    synth->add_option("--out", synth_out, "Output dataset directory")->required();
    synth->add_option("--frames", spec.frames, "Frame count")->check(CLI::Range(2, 100000));
    synth->add_option("--resolution", spec.resolution, "Image size in pixels");
    synth->add_option("--expression-dim", spec.expression_dim, "Expression coefficients per frame");
    synth->add_option("--seed", spec.seed, "Random seed");
    synth->add_option("--supersample", spec.supersample, "Samples per pixel along each axis");

    // ingest
    auto* ing = app.add_subcommand("ingest", "Validate a dataset directory");
    fs::path ingest_root;
    ing->add_option("--dataset", ingest_root, "Dataset directory")->required();

    // train
    auto* train = app.add_subcommand("train", "Run training stages");
    fs::path train_dataset, train_config, train_out;
    std::string train_stage = "all";
    bool desk = false, paper = false, plan_only = false;
    std::optional<std::uint64_t> train_seed;
    train->add_option("--dataset", train_dataset, "Dataset directory");
    train->add_option("--stage", train_stage, "1, 2, 3 or all")->check(CLI::IsMember({"1", "2", "3", "all"}));
    train->add_option("--config", train_config, "TOML overrides");
    train->add_option("--out", train_out, "Run directory")->required();
    train->add_option("--seed", train_seed, "Override the configured seed");
    auto* desk_flag = train->add_flag("--desk", desk, "Desk-scale preset (default)");
    train->add_flag("--paper", paper, "Full-scale preset")->excludes(desk_flag);
    train->add_flag("--plan-only", plan_only, "Print the iteration plan and exit");

    // render
    auto* render = app.add_subcommand("render", "Render frames from a checkpoint");
    fs::path render_ckpt, render_dataset, render_driving, render_out;
    std::string render_mode = "self", render_yaw = "-30:30:5", render_output = "auto";
    std::int64_t render_frame = 0;
    double exp_scale = 1.0;
    render->add_option("--ckpt", render_ckpt, "Run or checkpoint directory")->required();
    render->add_option("--dataset", render_dataset, "Dataset (defaults to the one used for training)");
    render->add_option("--mode", render_mode, "self, cross or orbit")
        ->check(CLI::IsMember({"self", "cross", "orbit"}));
    render->add_option("--driving", render_driving, "Driving dataset for cross mode");
    render->add_option("--yaw", render_yaw, "Orbit yaw range start:stop:step in degrees");
    render->add_option("--frame", render_frame, "Frame whose conditioning is fixed in orbit mode");
    render->add_option("--exp-scale", exp_scale, "Scale applied to driving expression coefficients");
    render->add_option("--output", render_output, "auto, canonical, deformed or synth")
        ->check(CLI::IsMember({"auto", "canonical", "deformed", "synth"}));
    render->add_option("--out", render_out, "Output directory")->required();

    // invert
    auto* invert = app.add_subcommand("invert", "Invert the generator on a few images");
    fs::path invert_ckpt, invert_out;
    std::string invert_images;
    std::int64_t steps1 = 500, steps2 = 300;
    invert->add_option("--ckpt", invert_ckpt, "Generator weights, run or checkpoint directory")->required();
    invert->add_option("--images", invert_images, "Comma-separated PNG files");
    invert->add_option("--steps1", steps1, "Style-code steps");
    invert->add_option("--steps2", steps2, "Generator tuning steps");
    invert->add_option("--out", invert_out, "Output directory")->required();

    // ablate
    auto* ablate = app.add_subcommand("ablate", "Run an ablation study");
    fs::path ablate_ckpt, ablate_dataset, ablate_out;
    std::string study;
    std::int64_t epochs = 10;
    ablate->add_option("--ckpt", ablate_ckpt, "Run directory")->required();
    ablate->add_option("--dataset", ablate_dataset, "Dataset (defaults to the one used for training)");
    ablate->add_option("--study", study, "regions, blocks, prune, features or gan")
        ->required()
        ->check(CLI::IsMember({"regions", "blocks", "prune", "features", "gan"}));
    ablate->add_option("--epochs", epochs, "Training passes per short run");
    ablate->add_option("--out", ablate_out, "Report JSON")->required();

    // eval
    auto* eval = app.add_subcommand("eval", "Compare predicted frames with references");
    fs::path eval_pred, eval_gt, eval_out;
    std::string metrics = "psnr,ssim,lpips,flmd,sd", method = "ours";
    eval->add_option("--pred", eval_pred, "Predicted frames directory")->required();
    eval->add_option("--gt", eval_gt, "Reference frames directory")->required();
    eval->add_option("--metrics", metrics, "Comma-separated metric names");
    eval->add_option("--method", method, "Row label for the report table");
    eval->add_option("--out", eval_out, "Report JSON (a Markdown table is written next to it)")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    try {
        if (synth->parsed()) {
            manifest.command = "synth";
            return cmd_synth(synth_out, spec, manifest);
        }
        if (ing->parsed()) {
            manifest.command = "ingest";
            return cmd_ingest(ingest_root, manifest);
        }
        if (train->parsed()) {
            manifest.command = "train";
            if (train_dataset.empty() && !plan_only) throw UsageError("--dataset is required");
            return cmd_train(train_dataset, train_stage, train_config, train_out, paper, plan_only, train_seed,
                             manifest);
        }
        if (render->parsed()) {
            manifest.command = "render";
            return cmd_render(render_ckpt, render_dataset, render_mode, render_driving, render_yaw, render_frame,
                              exp_scale, render_output, render_out, manifest);
        }
        if (invert->parsed()) {
            manifest.command = "invert";
            return cmd_invert(invert_ckpt, invert_images, steps1, steps2, invert_out, manifest);
        }
        if (ablate->parsed()) {
            manifest.command = "ablate";
            return cmd_ablate(ablate_ckpt, ablate_dataset, study, epochs, ablate_out, manifest);
        }
        if (eval->parsed()) {
            manifest.command = "eval";
            return cmd_eval(eval_pred, eval_gt, metrics, method, eval_out, manifest);
        }
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 2;
}
