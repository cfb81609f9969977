#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "headsplat/generator_bridge.hpp"
#include "headsplat/objectives.hpp"

namespace headsplat {

/// Switches used by the component ablations. All true except full_tune
/// reproduces the default model.
struct ModelToggles {
    bool triplane = true;        // false: sinusoidal positional encoding instead of triplane features
    bool cross_attention = true; // false: plain MLP conditioning
    bool temporal_latent = true; // false: zero latent, not trained
    bool mesh_init = true;       // false: uniform random initialization in the mesh bounds
    bool discriminator = true;
    bool ada = true;
    bool full_tune = false;      // true: generator trained in stage 3
};

struct TrainConfig {
    std::string preset = "desk";
    int stage = 0; // 0 = all stages
    std::int64_t stage1_iterations = 1000;
    std::int64_t stage2_iterations = 1000;
    std::int64_t stage3_iterations = 5000;
    std::int64_t batch_size = 1; // stage 3
    std::uint64_t seed = 0;

    // Learning rates: networks use `learning_rate`; Gaussian fields have their own.
    double learning_rate = 5e-4;
    double lr_position = 5e-4;
    double lr_feature = 5e-3;
    double lr_opacity = 2e-2;
    double lr_scale = 5e-3;
    double lr_rotation = 1e-3;
    double lr_latent = 1e-3;
    double lr_discriminator = 2e-4;
    /// Multiplier reached by every learning rate at the last iteration of a
    /// stage; the decay in between is exponential.
    double lr_final_scale = 0.1;

    LossWeights weights;

    std::int64_t resolution = 64; // render resolution
    std::int64_t num_gaussians = 3000;
    std::int64_t triplane_resolution = 64;
    std::int64_t plane_channels = 32;
    std::int64_t latent_dim = 32;
    StyleGeneratorOptions generator;
    InjectionConfig injection;
    PtiOptions pti{500, 300};
    std::vector<std::int64_t> pti_views; // empty: four extreme poses picked from the training split
    ModelToggles toggles;

    std::filesystem::path dataset;
    std::filesystem::path out;

    static TrainConfig desk();
    static TrainConfig paper();

    /// iterations >= 1, learning rates > 0, consistent sizes.
    void validate() const;
    std::int64_t iterations(int stage) const;

    nlohmann::json to_json() const;
    /// Overlays `j` on this config. Unknown keys throw InvalidArgument.
    void merge_json(const nlohmann::json& j);
    /// Overlays a TOML file with the same layout as to_json().
    void merge_toml(const std::filesystem::path& path);

    static TrainConfig from_json(const nlohmann::json& j);
};

/// "10k/10k/50k"-style iteration plan.
std::string iteration_plan(const TrainConfig& cfg);

} // namespace headsplat
