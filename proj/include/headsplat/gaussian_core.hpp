#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include <Eigen/Core>
#include <torch/torch.h>

#include "headsplat/tensor_store.hpp"

namespace headsplat {

/// Triangle mesh as read from a Wavefront OBJ. Face UVs are optional and
/// either absent or given for every face.
struct TriangleMesh {
    std::vector<Eigen::Vector3d> vertices;
    std::vector<std::array<std::int64_t, 3>> faces;
    std::vector<std::array<Eigen::Vector2d, 3>> face_uvs;

    /// Indices in range, three distinct vertices per face, UVs consistent.
    void validate() const;
    double face_area(std::size_t face) const;
    double total_area() const;
};

TriangleMesh read_obj(const std::filesystem::path& path);
void write_obj(const std::filesystem::path& path, const TriangleMesh& mesh);

/// Explicit scene representation. Row i of every tensor describes Gaussian i.
///
///  positions       N×3   world units
///  rotations       N×4   quaternions (w, x, y, z)
///  log_scales      N×3   scale = exp(log_scale)
///  opacity_logits  N×1   opacity = sigmoid(logit)
///  features        N×C   channels [0,3) are the base RGB color
struct GaussianCloud {
    static constexpr std::int64_t kFeatureChannels = 32;

    torch::Tensor positions;
    torch::Tensor rotations;
    torch::Tensor log_scales;
    torch::Tensor opacity_logits;
    torch::Tensor features;

    std::int64_t size() const { return positions.size(0); }
    std::int64_t channels() const { return features.size(1); }

    torch::Tensor scales() const { return log_scales.exp(); }
    torch::Tensor opacities() const { return torch::sigmoid(opacity_logits); }
    torch::Tensor colors() const { return features.slice(1, 0, 3); }

    /// Shapes agree, N >= 1. Throws ShapeMismatch / InvalidArgument.
    void validate() const;

    GaussianCloud clone() const;
    GaussianCloud detach() const;
    GaussianCloud to(torch::ScalarType dtype) const;

    TensorMap to_tensors(const std::string& prefix = "cloud.") const;
    static GaussianCloud from_tensors(const TensorStore& store, const std::string& prefix = "cloud.");
};

/// Samples `n` Gaussians area-proportionally over the mesh surface.
/// Zero-area faces are never sampled; throws AllFacesDegenerate when the whole
/// mesh has no area. Rotations start at identity, scales at half the mean
/// nearest-neighbour spacing, opacity at 0.5 and features at zero with the
/// color channels set to 0.5.
GaussianCloud init_from_mesh(const TriangleMesh& mesh, std::int64_t n, std::uint64_t seed,
                             std::int64_t channels = GaussianCloud::kFeatureChannels,
                             torch::ScalarType dtype = torch::kFloat32);

/// Same initialization, but positions drawn uniformly inside an axis-aligned
/// box instead of on a surface.
GaussianCloud init_random(const Eigen::Vector3d& lo, const Eigen::Vector3d& hi, std::int64_t n, std::uint64_t seed,
                          std::int64_t channels = GaussianCloud::kFeatureChannels,
                          torch::ScalarType dtype = torch::kFloat32);

GaussianCloud normalize_rotations(const GaussianCloud& cloud);

/// Differentiable q/|q|; zero-norm rows become the identity quaternion.
torch::Tensor normalize_quaternions(const torch::Tensor& q);

/// N×4 (w,x,y,z) unit quaternions to N×3×3 rotation matrices.
torch::Tensor quaternion_to_matrix(const torch::Tensor& q);

/// Hamilton product a ⊗ b, both N×4 (or broadcastable 1×4).
torch::Tensor quaternion_multiply(const torch::Tensor& a, const torch::Tensor& b);

/// Batched R·diag(s²)·Rᵀ from raw quaternions and log-scales; N×3×3.
torch::Tensor covariances(const torch::Tensor& rotations, const torch::Tensor& log_scales);

/// 3D covariance of Gaussian `index`, evaluated in double precision.
Eigen::Matrix3d covariance(const GaussianCloud& cloud, std::int64_t index);

/// Mean over points of the distance to their nearest other point.
double mean_nearest_neighbor_distance(const std::vector<Eigen::Vector3d>& points);

} // namespace headsplat
