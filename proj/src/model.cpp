#include "headsplat/model.hpp"

#include <cmath>

#include "headsplat/errors.hpp"

namespace headsplat {

torch::Tensor positional_encoding(const torch::Tensor& positions, const SceneBounds& bounds, std::int64_t dim) {
    require(dim % 6 == 0, ErrorCode::InvalidArgument, "positional encoding size must be a multiple of 6");
    const auto bands = dim / 6;
    auto lo = torch::tensor({bounds.lo.x(), bounds.lo.y(), bounds.lo.z()}, torch::kFloat64).to(positions.dtype());
    auto hi = torch::tensor({bounds.hi.x(), bounds.hi.y(), bounds.hi.z()}, torch::kFloat64).to(positions.dtype());
    auto unit = (positions - lo) / (hi - lo) * 2.0 - 1.0;
    std::vector<torch::Tensor> parts;
    for (std::int64_t k = 0; k < bands; ++k) {
        auto arg = unit * (M_PI * std::pow(2.0, double(k) * 0.5));
        parts.push_back(torch::sin(arg));
        parts.push_back(torch::cos(arg));
    }
    return torch::cat(parts, 1);
}

AvatarModel::AvatarModel(const TrainConfig& config, const AvatarDataset& dataset) : config_(config) {
    config_.validate();
    torch::manual_seed(config_.seed);

    const bool has_mesh = !dataset.mesh.faces.empty();
    if (has_mesh && config_.toggles.mesh_init) {
        canonical = init_from_mesh(dataset.mesh, config_.num_gaussians, config_.seed);
    } else {
        Eigen::Vector3d lo = Eigen::Vector3d::Constant(-1.0);
        Eigen::Vector3d hi = Eigen::Vector3d::Constant(1.0);
        if (has_mesh) {
            lo = hi = dataset.mesh.vertices.front();
            for (const auto& v : dataset.mesh.vertices) {
                lo = lo.cwiseMin(v);
                hi = hi.cwiseMax(v);
            }
        }
        canonical = init_random(lo, hi, config_.num_gaussians, config_.seed);
    }
    for (auto* t : {&canonical.positions, &canonical.rotations, &canonical.log_scales, &canonical.opacity_logits,
                    &canonical.features}) {
        t->set_requires_grad(true);
    }
    bounds = SceneBounds::around(canonical.positions, 0.1);

    TriplaneGeneratorOptions topts;
    topts.latent_dim = config_.latent_dim;
    topts.resolution = config_.triplane_resolution;
    topts.plane_channels = config_.plane_channels;
    triplane = TriplaneGenerator(topts);
    latents = TemporalLatents(dataset.size(), config_.latent_dim);

    DeformerOptions dopts;
    dopts.input_dim = 3 * config_.plane_channels;
    dopts.expression_dim = dataset.expression_dim();
    dopts.feature_channels = canonical.channels();
    dopts.cross_attention = config_.toggles.cross_attention;
    deformer = Deformer(dopts);

    generator = StyleGenerator(config_.generator);
    w = torch::zeros({1, config_.generator.style_dim});
    injector = Injector(config_.generator);
    encoder = PriorEncoder(config_.generator, canonical.channels());
    discriminator = Discriminator();
    extractor = default_extractor();
}

torch::Tensor AvatarModel::latent_for(std::int64_t frame) {
    if (!config_.toggles.temporal_latent) {
        return torch::zeros({config_.latent_dim});
    }
    if (frame >= 0 && frame < latents->frames()) {
        return latents->lookup(frame);
    }
    return latents->mean();
}

torch::Tensor AvatarModel::gaussian_features(const torch::Tensor& latent) {
    if (!config_.toggles.triplane) {
        return positional_encoding(canonical.positions.detach(), bounds, 3 * config_.plane_channels);
    }
    return query(triplane->generate(latent, bounds), canonical.positions.detach());
}

GaussianCloud AvatarModel::posed_cloud(const FrameConditioning& cond, bool deform, double expression_scale) {
    if (!deform) {
        auto zeros = DeformationOutput::zeros(canonical.size(), canonical.channels(), canonical.positions.options());
        return apply_deformation(canonical, zeros, cond.pose);
    }
    auto expr = torch::tensor(cond.expression, torch::kFloat64).mul(expression_scale).to(torch::kFloat32);
    auto tokens = deformer->condition_tokens(expr, pose_vector(cond.pose));
    auto offsets = deformer->forward(gaussian_features(latent_for(cond.frame_id)), tokens);
    return apply_deformation(canonical, offsets, cond.pose);
}

FeatureImage AvatarModel::render(const FrameConditioning& cond, bool deform, double expression_scale) {
    return rasterize(posed_cloud(cond, deform, expression_scale), cond.camera);
}

torch::Tensor AvatarModel::synthesize(const FeatureImage& render, const InjectionConfig& injection) {
    auto pyramid = encoder->forward(render, injection);
    auto image = generator->synthesize(w, &pyramid, &injection, injector.get());
    return image.squeeze(0).permute({1, 2, 0});
}

torch::Tensor AvatarModel::pivot_image() { return generator->synthesize(w).squeeze(0).permute({1, 2, 0}); }

TensorMap AvatarModel::state() const {
    TensorMap out = canonical.to_tensors("cloud.");
    auto add = [&out](const TensorMap& m) { out.insert(m.begin(), m.end()); };
    add(named_parameters(*triplane, "triplane."));
    add(named_parameters(*latents, "latents."));
    add(named_parameters(*deformer, "deformer."));
    add(named_parameters(*generator, "generator."));
    add(named_parameters(*injector, "injector."));
    add(named_parameters(*encoder, "encoder."));
    add(named_parameters(*discriminator, "discriminator."));
    out["w"] = w;
    out["bounds"] = torch::tensor({bounds.lo.x(), bounds.lo.y(), bounds.lo.z(), bounds.hi.x(), bounds.hi.y(),
                                   bounds.hi.z()},
                                  torch::kFloat64);
    out["generator_initialized"] = torch::tensor({std::int64_t(generator->initialized())}, torch::kInt64);
    return out;
}

void AvatarModel::load_state(const TensorStore& store) {
    auto targets = state();
    for (auto& [name, tensor] : targets) {
        if (name == "bounds" || name == "generator_initialized") continue;
        auto t = tensor;
        assign_checked(t, store, name);
    }
    auto b = store.at("bounds");
    bounds.lo = Eigen::Vector3d(b[0].item<double>(), b[1].item<double>(), b[2].item<double>());
    bounds.hi = Eigen::Vector3d(b[3].item<double>(), b[4].item<double>(), b[5].item<double>());
    generator->set_initialized(store.at("generator_initialized").item<std::int64_t>() != 0);
}

std::vector<std::pair<std::string, torch::Tensor>> AvatarModel::cloud_parameters() const {
    return {{"cloud.positions", canonical.positions},
            {"cloud.rotations", canonical.rotations},
            {"cloud.log_scales", canonical.log_scales},
            {"cloud.opacity_logits", canonical.opacity_logits},
            {"cloud.features", canonical.features}};
}

std::vector<std::pair<std::string, torch::Tensor>> AvatarModel::module_parameters(const torch::nn::Module& m,
                                                                                  const std::string& prefix) {
    std::vector<std::pair<std::string, torch::Tensor>> out;
    for (const auto& item : m.named_parameters(true)) {
        out.emplace_back(prefix + item.key(), item.value());
    }
    return out;
}

} // namespace headsplat
