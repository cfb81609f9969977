#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <torch/torch.h>

#include "headsplat/deformer.hpp"
#include "headsplat/gaussian_core.hpp"
#include "headsplat/metrics_eval.hpp"

namespace headsplat {

struct FrameRecord {
    std::int64_t index = 0;
    std::filesystem::path image_path;
    std::optional<std::filesystem::path> uv_path;
    FrameConditioning cond;
    Landmarks landmarks; // optional, empty when not tracked
};

/// Frames with their conditioning, the canonical mesh and a train/test
/// split. Images are loaded on first use and cached.
class AvatarDataset {
public:
    std::filesystem::path root;
    std::vector<FrameRecord> frames;
    TriangleMesh mesh;
    std::vector<std::int64_t> train;
    std::vector<std::int64_t> test;

    std::int64_t size() const { return static_cast<std::int64_t>(frames.size()); }
    std::int64_t width() const;
    std::int64_t height() const;
    std::int64_t expression_dim() const;
    bool has_uv() const;

    /// H×W×3 float32 in [0,1].
    const torch::Tensor& image(std::int64_t i) const;
    /// H×W×3 float32 UV map; zeros when the dataset has none.
    const torch::Tensor& uv(std::int64_t i) const;

    void set_image(std::int64_t i, torch::Tensor image) const;
    void set_uv(std::int64_t i, torch::Tensor uv) const;

    /// Conditioning count equals frame count, ids contiguous, every frame valid.
    void validate() const;

private:
    mutable std::vector<torch::Tensor> images_;
    mutable std::vector<torch::Tensor> uvs_;
};

/// Reads root/frames/%06d.png, root/uv/%06d.png (optional),
/// root/tracking.json and root/mesh.obj (optional), then applies the default
/// tail split.
AvatarDataset ingest(const std::filesystem::path& root);

/// Writes a dataset in the layout read by ingest().
void serialize(const AvatarDataset& dataset, const std::filesystem::path& root);

/// Train/test indices for n frames. The default keeps the last
/// (1 - fraction) of frames as the test set; `random` draws a seeded
/// permutation instead.
std::pair<std::vector<std::int64_t>, std::vector<std::int64_t>> split(std::int64_t n, double fraction = 0.8,
                                                                      std::uint64_t seed = 0, bool random = false);

/// Procedural head used to exercise every stage without real data.
struct SynthSpec {
    std::int64_t frames = 20;
    std::int64_t resolution = 64;
    std::int64_t expression_dim = 16;
    std::uint64_t seed = 0;
    std::int64_t supersample = 4;
};

/// Geometry of the procedural head, in head-local coordinates (y up, face
/// towards +z).
namespace synth {
inline const Eigen::Vector3d kSemiAxes{0.8, 1.0, 0.85};
inline constexpr double kEyeX = 0.3;
inline constexpr double kEyeY = 0.25;
inline constexpr double kEyeRadius = 0.12;
inline constexpr double kMouthHalfWidth = 0.32;
inline constexpr double kMouthY = -0.45;
inline constexpr double kHairY = 0.55;
inline constexpr double kCameraDistance = 3.5;
inline constexpr double kMaxYawDegrees = 20.0;

/// Half-height of the mouth bar: 0.04 + 0.16·clamp(e0, 0, 1).
double mouth_half_height(double e0);
double yaw_degrees(std::int64_t frame, std::int64_t frames);
double expression0(std::int64_t frame);

Camera camera(std::int64_t resolution);
HeadPose pose_for_yaw(double yaw_degrees);

struct Rendered {
    torch::Tensor image; // H×W×3
    torch::Tensor uv;    // H×W×3 (u, v, mask)
};
Rendered render(const Camera& camera, const HeadPose& pose, double e0, std::int64_t supersample,
                std::uint64_t seed = 0);

LandmarkBoxes boxes(const Camera& camera, const HeadPose& pose);
Landmarks landmarks(const Camera& camera, const HeadPose& pose, double e0);
TriangleMesh mesh(int stacks = 16, int slices = 24);
} // namespace synth

AvatarDataset synth_generate(const SynthSpec& spec);

} // namespace headsplat
