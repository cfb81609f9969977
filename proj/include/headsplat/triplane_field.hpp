#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Core>
#include <torch/torch.h>

#include "headsplat/layers.hpp"

namespace headsplat {

/// Axis-aligned scene box used to normalize positions before plane lookup.
struct SceneBounds {
    Eigen::Vector3d lo = Eigen::Vector3d::Constant(-1.0);
    Eigen::Vector3d hi = Eigen::Vector3d::Constant(1.0);

    void validate() const;

    /// Bounding box of `positions` (N×3) grown by `dilation` of its extent on
    /// every side.
    static SceneBounds around(const torch::Tensor& positions, double dilation = 0.1);
};

/// Three axis-aligned feature planes, stacked 3×F×R×R in the order XY, XZ, YZ.
/// `planes[p][c][i][j]` is channel c at grid node (i, j), where i runs along
/// the first axis of the plane and j along the second.
struct TriplaneSet {
    torch::Tensor planes;
    SceneBounds bounds;

    std::int64_t channels() const { return planes.size(1); }
    std::int64_t resolution() const { return planes.size(2); }
    void validate() const;
};

/// Normalizes positions (M×3) into [0,1]³ through `bounds`, clamps, and
/// returns the three plane coordinates as M×3×2 in XY, XZ, YZ order.
torch::Tensor project(const torch::Tensor& positions, const SceneBounds& bounds);

/// Bilinear lookup on each plane, concatenated XY‖XZ‖YZ: M×(3·F).
/// Differentiable in both the planes and the positions.
torch::Tensor query(const TriplaneSet& triplane, const torch::Tensor& positions);

struct TriplaneGeneratorOptions {
    std::int64_t latent_dim = 32;
    std::int64_t resolution = 128;
    std::int64_t plane_channels = 32;
    std::int64_t const_channels = 256;
    std::int64_t style_dim = 256;
};

/// Style-based convolutional generator mapping a temporal latent to a
/// triplane: learned 4×4 constant, modulated 3×3 convolutions with ×2
/// upsampling up to the plane resolution, then a modulated 1×1 projection to
/// 3·F channels. The latent passes through a 2-layer MLP before the
/// per-layer affine maps.
class TriplaneGeneratorImpl : public torch::nn::Module {
public:
    explicit TriplaneGeneratorImpl(TriplaneGeneratorOptions options = {});

    /// z: B×latent_dim → B×3×F×R×R.
    torch::Tensor forward(const torch::Tensor& z);

    /// Single latent (latent_dim) to a TriplaneSet. Throws NonFiniteLatent.
    TriplaneSet generate(const torch::Tensor& z, const SceneBounds& bounds);

    const TriplaneGeneratorOptions& options() const { return options_; }

    static std::int64_t width_at(std::int64_t resolution, std::int64_t const_channels);

private:
    TriplaneGeneratorOptions options_;
    torch::nn::Sequential mapping_{nullptr};
    torch::Tensor constant_;
    std::vector<EqualLinear> affines_;
    std::vector<ModulatedConv2d> convs_;
    std::vector<torch::Tensor> biases_;
    EqualLinear out_affine_{nullptr};
    ModulatedConv2d out_conv_{nullptr};
    torch::Tensor out_bias_;
};
TORCH_MODULE(TriplaneGenerator);

/// Per-frame latent codes z_tmp, one row per training frame.
class TemporalLatentsImpl : public torch::nn::Module {
public:
    TemporalLatentsImpl(std::int64_t frames, std::int64_t dim, double init_std = 0.1);

    torch::Tensor lookup(std::int64_t row) const;
    /// Mean over rows, used for frames without their own latent.
    torch::Tensor mean() const;
    std::int64_t frames() const { return latents.size(0); }

    torch::Tensor latents;
};
TORCH_MODULE(TemporalLatents);

} // namespace headsplat
