#include "headsplat/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <set>

#include <Eigen/Geometry>

#include "headsplat/errors.hpp"

namespace headsplat {

namespace fs = std::filesystem;
using nlohmann::json;

fs::path stage_dir(const fs::path& run, int stage) { return run / ("stage" + std::to_string(stage)); }

namespace {

void write_trace_line(std::ofstream& out, std::int64_t iteration, const LossReport& r) {
    json j;
    j["iter"] = iteration;
    j["losses"] = r.values;
    out << j.dump() << '\n';
}

torch::Tensor resize_to(const torch::Tensor& image, std::int64_t size) {
    if (image.size(0) == size && image.size(1) == size) return image;
    namespace F = torch::nn::functional;
    auto b = image.permute({2, 0, 1}).unsqueeze(0);
    b = F::interpolate(b, F::InterpolateFuncOptions()
                              .size(std::vector<std::int64_t>{size, size})
                              .mode(torch::kBilinear)
                              .align_corners(false)
                              .antialias(true));
    return b.squeeze(0).permute({1, 2, 0});
}

} // namespace

Trainer::Trainer(const AvatarDataset& dataset, TrainConfig config) : data_(dataset), config_(std::move(config)) {
    config_.validate();
    data_.validate();
    require(!data_.train.empty(), ErrorCode::InvalidArgument, "training split is empty");
    torch::set_num_threads(1);
    model_ = std::make_unique<AvatarModel>(config_, data_);
}

std::mt19937_64 Trainer::iteration_rng(std::int64_t iteration) const {
    std::seed_seq seq{static_cast<std::uint64_t>(config_.seed), static_cast<std::uint64_t>(stage_),
                      static_cast<std::uint64_t>(iteration)};
    return std::mt19937_64(seq);
}

std::vector<std::pair<std::string, torch::Tensor>> Trainer::stage_parameters(int stage) const {
    auto& m = *model_;
    std::vector<std::pair<std::string, torch::Tensor>> out;
    auto add = [&out](const std::vector<std::pair<std::string, torch::Tensor>>& v) {
        out.insert(out.end(), v.begin(), v.end());
    };
    auto net = [&](const torch::nn::Module& mod, const std::string& prefix) {
        add(AvatarModel::module_parameters(mod, prefix));
    };
    const bool latents = config_.toggles.temporal_latent;
    switch (stage) {
    case 1:
        add(m.cloud_parameters());
        if (config_.toggles.triplane) net(*m.triplane, "triplane.");
        break;
    case 2:
        if (config_.toggles.triplane) net(*m.triplane, "triplane.");
        if (latents && config_.toggles.triplane) net(*m.latents, "latents.");
        net(*m.deformer, "deformer.");
        break;
    case 3:
        if (config_.toggles.triplane) net(*m.triplane, "triplane.");
        if (latents && config_.toggles.triplane) net(*m.latents, "latents.");
        net(*m.deformer, "deformer.");
        net(*m.encoder, "encoder.");
        net(*m.injector, "injector.");
        if (config_.toggles.full_tune) net(*m.generator, "generator.");
        break;
    default: fail(ErrorCode::InvalidArgument, "no stage " + std::to_string(stage));
    }
    return out;
}

std::vector<std::string> Trainer::trainable(int stage) const {
    std::vector<std::string> names;
    for (const auto& [name, t] : stage_parameters(stage)) names.push_back(name);
    if (stage == 3 && config_.toggles.discriminator) {
        for (const auto& [name, t] : AvatarModel::module_parameters(*model_->discriminator, "discriminator.")) {
            names.push_back(name);
        }
    }
    return names;
}

void Trainer::begin_stage(int stage) {
    auto& m = *model_;
    if (stage == 3) {
        require(m.generator_initialized(), ErrorCode::GeneratorNotInitialized,
                "stage 3 needs an initialized generator (run inversion or load weights)");
    }
    stage_ = stage;
    // Freeze everything, then re-enable the stage's trainable set.
    std::vector<torch::Tensor> all;
    for (const auto& [name, t] : m.cloud_parameters()) all.push_back(t);
    for (const torch::nn::Module* mod :
         std::initializer_list<const torch::nn::Module*>{m.triplane.get(), m.latents.get(), m.deformer.get(),
                                                          m.generator.get(), m.injector.get(), m.encoder.get(),
                                                          m.discriminator.get()}) {
        for (const auto& p : mod->parameters(true)) all.push_back(p);
    }
    for (auto& t : all) {
        t.set_requires_grad(false);
        t.mutable_grad() = torch::Tensor();
    }

    opt_ = std::make_unique<Adam>();
    std::set<const void*> trained;
    for (auto& [name, t] : stage_parameters(stage)) {
        t.set_requires_grad(true);
        trained.insert(t.unsafeGetTensorImpl());
        double lr = config_.learning_rate;
        if (name == "cloud.positions") lr = config_.lr_position;
        else if (name == "cloud.features") lr = config_.lr_feature;
        else if (name == "cloud.opacity_logits") lr = config_.lr_opacity;
        else if (name == "cloud.log_scales") lr = config_.lr_scale;
        else if (name == "cloud.rotations") lr = config_.lr_rotation;
        else if (name.rfind("latents.", 0) == 0) lr = config_.lr_latent;
        opt_->add(name, t, lr);
    }
    d_opt_.reset();
    if (stage == 3 && config_.toggles.discriminator) {
        d_opt_ = std::make_unique<Adam>(AdamOptions{0.0, 0.99, 1e-8});
        for (auto& [name, t] : AvatarModel::module_parameters(*m.discriminator, "discriminator.")) {
            t.set_requires_grad(true);
            trained.insert(t.unsafeGetTensorImpl());
            d_opt_->add(name, t, config_.lr_discriminator);
        }
    }
    frozen_.clear();
    for (auto& t : all) {
        if (!trained.count(t.unsafeGetTensorImpl())) frozen_.push_back(t);
    }
    if (pending_optimizer_ && pending_stage_ == stage) {
        opt_->load_state(*pending_optimizer_, "adam.");
        if (d_opt_) d_opt_->load_state(*pending_optimizer_, "adam_d.");
    }
    pending_optimizer_.reset();
}

void Trainer::check_frozen() const {
#ifndef NDEBUG
    for (const auto& t : frozen_) {
        require(!t.grad().defined(), ErrorCode::InvalidArgument, "gradient reached a frozen tensor");
    }
#endif
}

LossReport Trainer::step(std::int64_t iteration) {
    require(stage_ >= 1, ErrorCode::InvalidArgument, "begin_stage() must be called before step()");
    auto& m = *model_;
    auto rng = iteration_rng(iteration);
    std::uniform_int_distribution<std::size_t> pick(0, data_.train.size() - 1);
    const auto& w = config_.weights;
    LossTerms terms;
    const auto total_iterations = config_.iterations(stage_);
    const double progress =
        total_iterations > 1 ? std::clamp(double(iteration) / double(total_iterations - 1), 0.0, 1.0) : 0.0;
    const double lr_scale = std::pow(config_.lr_final_scale, progress);
    opt_->set_lr_scale(lr_scale);
    if (d_opt_) d_opt_->set_lr_scale(lr_scale);

    if (stage_ == 1 || stage_ == 2) {
        const auto frame = data_.train[pick(rng)];
        const auto& cond = data_.frames[static_cast<std::size_t>(frame)].cond;
        const auto& gt = data_.image(frame);
        auto render = m.render(cond, stage_ == 2);
        terms.add("rgb", loss_rgb(render.features, gt), w.rgb);
        if (w.lpips > 0.0) {
            terms.add("lpips", loss_perceptual(render.features, gt, m.extractor.get()), w.lpips);
        }
        if (stage_ == 2) {
            require(cond.boxes.has_value(), ErrorCode::MissingLandmarks,
                    "frame " + std::to_string(frame) + " has no landmark boxes");
            terms.add("lmk", loss_landmark(render.features, gt, region_boxes(*cond.boxes)), w.lmk);
        }
        opt_->zero_grad();
        terms.total().backward();
        check_frozen();
        opt_->step();
        return terms.report();
    }

    // Stage 3: batch of frames through encoder, injection and generator.
    const auto batch = std::min<std::int64_t>(config_.batch_size, static_cast<std::int64_t>(data_.train.size()));
    std::vector<torch::Tensor> preds, gts, uvs;
    for (std::int64_t b = 0; b < batch; ++b) {
        const auto frame = data_.train[pick(rng)];
        const auto& cond = data_.frames[static_cast<std::size_t>(frame)].cond;
        auto render = m.render(cond, true);
        const auto size = m.generator->options().output_resolution();
        preds.push_back(m.synthesize(render, config_.injection));
        gts.push_back(resize_to(data_.image(frame), size));
        uvs.push_back(resize_to(data_.uv(frame), size));
    }
    auto pred = torch::stack(preds).permute({0, 3, 1, 2});
    auto gt = torch::stack(gts).permute({0, 3, 1, 2});
    auto uv = torch::stack(uvs).permute({0, 3, 1, 2});
    terms.add("gan_l1", (pred - gt).abs().mean(), w.gan_l1);
    terms.add("perceptual", loss_perceptual(pred, gt, m.extractor.get()), w.perceptual);
    torch::Tensor d_loss;
    if (config_.toggles.discriminator) {
        CganOptions copts;
        copts.augment = config_.toggles.ada;
        copts.seed = rng();
        auto adv = loss_cgan(m.discriminator, pred, gt, uv, copts);
        terms.add("adv_g", adv.g_loss, w.adv);
        d_loss = adv.d_loss;
        terms.note("adv_d", d_loss.item<double>());
    }
    opt_->zero_grad();
    if (d_opt_) d_opt_->zero_grad();
    terms.total().backward();
    opt_->step();
    if (d_opt_) {
        d_opt_->zero_grad();
        d_loss.backward();
        d_opt_->step();
        d_opt_->zero_grad();
    }
    check_frozen();
    return terms.report();
}

StageReport Trainer::run_stage(int stage, const fs::path& dir, std::int64_t start, std::int64_t count) {
    const auto total = config_.iterations(stage);
    if (count < 0) count = total - start;
    const auto t0 = std::chrono::steady_clock::now();
    begin_stage(stage);
    const auto frozen_generator = checksum(*model_->generator);
    const auto frozen_cloud = checksum(model_->canonical.to_tensors());

    StageReport report;
    report.stage = stage;
    report.first_iteration = start;
    std::ofstream trace;
    if (!dir.empty()) {
        fs::create_directories(dir);
        trace.open(dir / "trace.jsonl", start == 0 ? std::ios::trunc : std::ios::app);
    }
    for (std::int64_t it = start; it < start + count; ++it) {
        auto r = step(it);
        if (!std::isfinite(r.total)) {
            fail(ErrorCode::InvalidArgument, "loss became non-finite at stage " + std::to_string(stage) +
                                                 " iteration " + std::to_string(it));
        }
        if (trace.is_open()) write_trace_line(trace, it, r);
        report.trace.push_back(std::move(r));
    }
    if (stage == 3 && !config_.toggles.full_tune) {
        require(checksum(*model_->generator) == frozen_generator, ErrorCode::InvalidArgument,
                "generator weights changed during stage 3");
    }
    if (stage >= 2) {
        require(checksum(model_->canonical.to_tensors()) == frozen_cloud, ErrorCode::InvalidArgument,
                "canonical cloud changed during stage " + std::to_string(stage));
    }
    if (!dir.empty()) {
        save_checkpoint(dir, stage, start + count);
        report.checkpoint = dir;
    }
    report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return report;
}

std::vector<std::int64_t> Trainer::pti_views() const {
    if (!config_.pti_views.empty()) {
        for (auto v : config_.pti_views) {
            require(v >= 0 && v < data_.size(), ErrorCode::InvalidArgument,
                    "inversion view " + std::to_string(v) + " out of range");
        }
        return config_.pti_views;
    }
    // Extreme yaw and pitch among the training frames, topped up with the
    // frames farthest in yaw from those already chosen.
    struct View {
        std::int64_t frame;
        double yaw;
        double pitch;
    };
    std::vector<View> views;
    for (auto f : data_.train) {
        const auto& r = data_.frames[static_cast<std::size_t>(f)].cond.pose.rotation;
        Eigen::Quaterniond q(r[0], r[1], r[2], r[3]);
        const Eigen::Vector3d fwd = q.normalized() * Eigen::Vector3d::UnitZ();
        views.push_back({f, std::atan2(fwd.x(), fwd.z()), std::asin(std::clamp(-fwd.y(), -1.0, 1.0))});
    }
    auto by = [&](auto key, bool max) {
        return *std::max_element(views.begin(), views.end(), [&](const View& a, const View& b) {
            return max ? key(a) < key(b) : key(a) > key(b);
        });
    };
    auto yaw = [](const View& v) { return v.yaw; };
    auto pitch = [](const View& v) { return v.pitch; };
    std::vector<std::int64_t> chosen;
    auto take = [&](std::int64_t f) {
        if (std::find(chosen.begin(), chosen.end(), f) == chosen.end()) chosen.push_back(f);
    };
    take(by(yaw, false).frame);
    take(by(yaw, true).frame);
    take(by(pitch, false).frame);
    take(by(pitch, true).frame);
    const std::size_t want = std::min<std::size_t>(4, views.size());
    while (chosen.size() < want) {
        double best = -1.0;
        std::int64_t best_frame = -1;
        for (const auto& v : views) {
            if (std::find(chosen.begin(), chosen.end(), v.frame) != chosen.end()) continue;
            double d = 1e30;
            for (auto c : chosen) {
                const auto& cv = *std::find_if(views.begin(), views.end(), [c](const View& x) { return x.frame == c; });
                d = std::min(d, std::abs(cv.yaw - v.yaw) + std::abs(cv.pitch - v.pitch));
            }
            if (d > best) {
                best = d;
                best_frame = v.frame;
            }
        }
        chosen.push_back(best_frame);
    }
    return chosen;
}

PtiResult Trainer::run_pti(const fs::path& dir) {
    auto& m = *model_;
    const auto size = m.generator->options().output_resolution();
    std::vector<torch::Tensor> targets;
    const auto views = pti_views();
    for (auto f : views) targets.push_back(resize_to(data_.image(f), size));
    torch::manual_seed(config_.seed);
    auto result = pti_invert(m.generator, targets, config_.pti, m.extractor.get());
    m.w = result.w.detach().clone();
    if (!dir.empty()) {
        fs::create_directories(dir);
        save_generator(dir / "generator", m.generator);
        save_tensor_store(dir / "pivot", {{"w", m.w}}, json{{"views", views}});
        std::ofstream trace(dir / "trace.jsonl");
        for (std::size_t i = 0; i < result.phase1_loss.size(); ++i) {
            trace << json{{"phase", 1}, {"iter", i}, {"loss", result.phase1_loss[i]}}.dump() << '\n';
        }
        for (std::size_t i = 0; i < result.phase2_loss.size(); ++i) {
            trace << json{{"phase", 2}, {"iter", i}, {"loss", result.phase2_loss[i]}}.dump() << '\n';
        }
    }
    return result;
}

std::vector<StageReport> Trainer::run_all(const fs::path& out) {
    std::vector<StageReport> reports;
    reports.push_back(run_stage(1, stage_dir(out, 1)));
    reports.push_back(run_stage(2, stage_dir(out, 2)));
    if (!model_->generator_initialized()) run_pti(out / "pti");
    reports.push_back(run_stage(3, stage_dir(out, 3)));
    return reports;
}

void Trainer::save_checkpoint(const fs::path& dir, int stage, std::int64_t iteration) const {
    auto tensors = model_->state();
    if (opt_ && stage == stage_) {
        auto s = opt_->state("adam.");
        tensors.insert(s.begin(), s.end());
        if (d_opt_) {
            auto d = d_opt_->state("adam_d.");
            tensors.insert(d.begin(), d.end());
        }
    }
    json meta;
    meta["kind"] = "checkpoint";
    meta["stage"] = stage;
    meta["iteration"] = iteration;
    meta["config"] = config_.to_json();
    meta["trainable"] = trainable(stage);
    meta["generator_checksum"] = std::to_string(checksum(*model_->generator));
    save_tensor_store(dir, tensors, meta);
}

CheckpointInfo Trainer::load_checkpoint(const fs::path& dir) {
    auto store = load_tensor_store(dir);
    require(store.meta.value("kind", "") == "checkpoint", ErrorCode::SchemaMismatch,
            dir.string() + " is not a training checkpoint");
    model_->load_state(store);
    CheckpointInfo info{store.meta.at("stage").get<int>(), store.meta.at("iteration").get<std::int64_t>()};
    pending_stage_ = info.stage;
    pending_optimizer_ = std::move(store);
    return info;
}

// ---------------------------------------------------------------------------
// Evaluation helpers

torch::Tensor frame_output(AvatarModel& model, const FrameConditioning& cond, OutputKind kind,
                           double expression_scale) {
    torch::NoGradGuard guard;
    switch (kind) {
    case OutputKind::Canonical: return model.render(cond, false).rgb();
    case OutputKind::Deformed: return model.render(cond, true, expression_scale).rgb();
    case OutputKind::Synthesized:
        return model.synthesize(model.render(cond, true, expression_scale), model.config().injection);
    }
    return {};
}

double mean_psnr(AvatarModel& model, const AvatarDataset& data, const std::vector<std::int64_t>& frames,
                 OutputKind kind) {
    require(!frames.empty(), ErrorCode::InvalidArgument, "no frames to evaluate");
    double total = 0.0;
    for (auto f : frames) {
        auto out = frame_output(model, data.frames[static_cast<std::size_t>(f)].cond, kind);
        total += psnr(out, resize_to(data.image(f), out.size(0)));
    }
    return total / double(frames.size());
}

double mean_mouth_l1(AvatarModel& model, const AvatarDataset& data, const std::vector<std::int64_t>& frames,
                     OutputKind kind) {
    require(!frames.empty(), ErrorCode::InvalidArgument, "no frames to evaluate");
    torch::NoGradGuard guard;
    double total = 0.0;
    for (auto f : frames) {
        const auto& cond = data.frames[static_cast<std::size_t>(f)].cond;
        require(cond.boxes.has_value(), ErrorCode::MissingLandmarks, "frame " + std::to_string(f) + " has no boxes");
        auto out = frame_output(model, cond, kind);
        require(out.size(0) == data.height(), ErrorCode::ShapeMismatch, "output and frame sizes differ");
        total += loss_landmark(out, data.image(f), {{RegionKind::Mouth, cond.boxes->mouth}}).item<double>();
    }
    return total / double(frames.size());
}

} // namespace headsplat
