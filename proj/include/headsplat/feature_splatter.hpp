#pragma once

#include <cstdint>
#include <optional>

#include <Eigen/Core>
#include <torch/torch.h>

#include "headsplat/gaussian_core.hpp"

namespace headsplat {

inline constexpr double kNearPlane = 0.01;
inline constexpr double kCovarianceDilation = 0.3;     // px², added to every 2D covariance
inline constexpr double kMinContribution = 1.0 / 255.0; // per-splat alpha floor
inline constexpr double kMinTransmittance = 1e-4;       // early-termination threshold
inline constexpr std::int64_t kTileSize = 16;

/// Pinhole camera. Pixel (u, v) has its center at integer coordinates, so a
/// point on the optical axis lands exactly on (cx, cy). Camera space follows
/// the x-right / y-down / z-forward convention.
struct Camera {
    double fx = 1.0;
    double fy = 1.0;
    double cx = 0.0;
    double cy = 0.0;
    std::int64_t width = 1;
    std::int64_t height = 1;
    Eigen::Matrix4d world_to_camera = Eigen::Matrix4d::Identity();

    /// fx, fy > 0; width, height >= 1; rotation block orthonormal to 1e-6.
    void validate() const;

    Eigen::Matrix3d rotation() const { return world_to_camera.topLeftCorner<3, 3>(); }
    Eigen::Vector3d translation() const { return world_to_camera.topRightCorner<3, 1>(); }

    /// Camera at `eye` looking at `target`; `up` is the world up direction.
    static Camera look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target, const Eigen::Vector3d& up,
                          double focal, std::int64_t width, std::int64_t height);
};

struct ProjectedGaussian {
    Eigen::Vector2d mean;
    Eigen::Matrix2d cov;
    double depth = 0.0;
};

/// Perspective EWA projection of one Gaussian: cov2d = J·W·Σ·Wᵀ·Jᵀ + 0.3·I.
/// Returns nullopt when the center is not beyond the near plane; the caller
/// culls such Gaussians.
std::optional<ProjectedGaussian> project_gaussian(const Camera& camera, const Eigen::Vector3d& mean,
                                                  const Eigen::Matrix3d& cov);

/// Screen-space splats ready for rasterization. `conics` holds the inverse 2D
/// covariance as (a, b, c) with q = a·dx² + 2b·dx·dy + c·dy².
struct ScreenGaussians {
    torch::Tensor means2d;   // N×2
    torch::Tensor conics;    // N×3
    torch::Tensor opacities; // N
    torch::Tensor features;  // N×C
    torch::Tensor depths;    // N, sort key only
    torch::Tensor valid;     // N bool; false = culled
};

/// Batched, differentiable version of project_gaussian for a whole cloud.
ScreenGaussians project_gaussians(const GaussianCloud& cloud, const Camera& camera);

/// H×W×C feature image plus accumulated alpha (1 - final transmittance).
struct FeatureImage {
    torch::Tensor features;
    torch::Tensor alpha;

    std::int64_t height() const { return features.size(0); }
    std::int64_t width() const { return features.size(1); }
    std::int64_t channels() const { return features.size(2); }
    torch::Tensor rgb() const { return features.slice(2, 0, 3); }
    /// Features as a 1×C×H×W batch for convolutional consumers.
    torch::Tensor as_batch() const { return features.permute({2, 0, 1}).unsqueeze(0); }
};

/// Front-to-back compositing of the cloud seen through `camera`. Splats are
/// ordered by depth, ties by index. Per pixel, splat i contributes
/// f_i·a_i·T_i with a_i = opacity_i·g_i(p) and T_i = Π_{j<i}(1 - a_j); splats
/// with a_i < 1/255 are skipped and compositing stops once T < 1e-4.
/// Differentiable with respect to every cloud field.
FeatureImage rasterize(const GaussianCloud& cloud, const Camera& camera);

/// Tile-based rasterization of already projected splats (differentiable).
FeatureImage rasterize_screen(const ScreenGaussians& splats, std::int64_t width, std::int64_t height);

/// Untiled reference: every pixel visits every splat in the same total order.
/// Forward only; used to check the tiled path.
FeatureImage rasterize_reference(const ScreenGaussians& splats, std::int64_t width, std::int64_t height);

} // namespace headsplat
