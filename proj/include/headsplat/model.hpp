#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "headsplat/config.hpp"
#include "headsplat/data_pipeline.hpp"
#include "headsplat/deformer.hpp"
#include "headsplat/feature_splatter.hpp"
#include "headsplat/gaussian_core.hpp"
#include "headsplat/generator_bridge.hpp"
#include "headsplat/objectives.hpp"
#include "headsplat/tensor_store.hpp"
#include "headsplat/triplane_field.hpp"

namespace headsplat {

/// Sinusoidal encoding of positions normalized to the scene bounds; the
/// stand-in for triplane features when the triplane is ablated.
torch::Tensor positional_encoding(const torch::Tensor& positions, const SceneBounds& bounds, std::int64_t dim);

/// Everything learned for one avatar.
class AvatarModel {
public:
    AvatarModel(const TrainConfig& config, const AvatarDataset& dataset);

    const TrainConfig& config() const { return config_; }

    GaussianCloud canonical;
    SceneBounds bounds;
    TriplaneGenerator triplane{nullptr};
    TemporalLatents latents{nullptr};
    Deformer deformer{nullptr};
    StyleGenerator generator{nullptr};
    torch::Tensor w; // 1×D_w pivot from inversion
    Injector injector{nullptr};
    PriorEncoder encoder{nullptr};
    Discriminator discriminator{nullptr};
    std::shared_ptr<FeatureExtractor> extractor;

    /// Per-Gaussian conditioning features for a latent (triplane query or
    /// positional encoding).
    torch::Tensor gaussian_features(const torch::Tensor& latent);

    /// Latent row for a frame; the mean latent for frames outside the table
    /// (or a zero latent when temporal latents are ablated).
    torch::Tensor latent_for(std::int64_t frame);

    /// Canonical cloud moved to the frame: zero offsets when `deform` is
    /// false, deformer offsets otherwise; the head pose is always applied.
    GaussianCloud posed_cloud(const FrameConditioning& cond, bool deform, double expression_scale = 1.0);

    FeatureImage render(const FrameConditioning& cond, bool deform, double expression_scale = 1.0);

    /// Generator output (H×W×3) for a feature render with the given injection.
    torch::Tensor synthesize(const FeatureImage& render, const InjectionConfig& injection);

    /// Generator output with no injection: the pivot image.
    torch::Tensor pivot_image();

    /// Every persistent tensor, keyed by a stable name.
    TensorMap state() const;
    /// Restores state(); throws SchemaMismatch naming a missing tensor.
    void load_state(const TensorStore& store);

    std::vector<std::pair<std::string, torch::Tensor>> cloud_parameters() const;
    static std::vector<std::pair<std::string, torch::Tensor>> module_parameters(const torch::nn::Module& m,
                                                                                const std::string& prefix);

    bool generator_initialized() const { return generator->initialized(); }

private:
    TrainConfig config_;
};

} // namespace headsplat
