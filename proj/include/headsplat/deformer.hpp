#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include <Eigen/Core>
#include <torch/torch.h>

#include "headsplat/feature_splatter.hpp"
#include "headsplat/gaussian_core.hpp"

namespace headsplat {

/// Pixel-space box (x0, y0, x1, y1) in edge coordinates: pixel i spans [i, i+1).
struct PixelBox {
    double x0 = 0.0;
    double y0 = 0.0;
    double x1 = 0.0;
    double y1 = 0.0;

    double width() const { return x1 - x0; }
    double height() const { return y1 - y0; }
    bool inside(std::int64_t image_width, std::int64_t image_height) const {
        return x0 >= 0.0 && y0 >= 0.0 && x1 <= double(image_width) && y1 <= double(image_height);
    }
};

struct LandmarkBoxes {
    PixelBox eyes;
    PixelBox mouth;
};

/// Rigid head pose: unit quaternion (w, x, y, z) and translation.
struct HeadPose {
    Eigen::Vector4d rotation{1.0, 0.0, 0.0, 0.0};
    Eigen::Vector3d translation = Eigen::Vector3d::Zero();
};

/// Everything that drives one frame: tracked expression coefficients, head
/// pose, camera, temporal-latent row, optional UV map and landmark boxes.
struct FrameConditioning {
    std::vector<double> expression;
    HeadPose pose;
    Camera camera;
    std::int64_t frame_id = 0;
    std::optional<torch::Tensor> uv_map; // H×W×3
    std::optional<LandmarkBoxes> boxes;

    /// Finite expression, unit-norm pose quaternion (1e-6), boxes inside the
    /// image with positive area.
    void validate() const;
};

/// Post-attention (F') and post-FFN (Z) features, M×D.
struct ConditionedFeature {
    torch::Tensor attended;
    torch::Tensor fused;
};

/// Per-Gaussian offsets: positions M×3, rotations M×4, log-scales M×3,
/// features M×C.
struct DeformationOutput {
    torch::Tensor d_position;
    torch::Tensor d_rotation;
    torch::Tensor d_log_scale;
    torch::Tensor d_feature;

    static DeformationOutput zeros(std::int64_t m, std::int64_t channels, const torch::TensorOptions& opts);
};

struct DeformerOptions {
    std::int64_t input_dim = 96; // 3·plane channels
    std::int64_t model_dim = 128;
    std::int64_t heads = 4;
    std::int64_t expression_dim = 52;
    std::int64_t ffn_hidden = 256;
    std::int64_t head_hidden = 128;
    std::int64_t feature_channels = GaussianCloud::kFeatureChannels;
    /// false replaces cross-attention by adding a linear map of the
    /// flattened condition tokens (the plain-MLP deformation baseline).
    bool cross_attention = true;
};

/// Conditions per-Gaussian triplane features on the frame parameters and
/// predicts deformation offsets:
///
///   F' = CA(F, tokens) + F
///   Z  = FFN(F') + F'
///   Δc, Δμ, Δr, Δs = Deform(Z)
///
/// F is the triplane feature after a linear map to the model width. All
/// deformation heads are zero-initialized.
class DeformerImpl : public torch::nn::Module {
public:
    explicit DeformerImpl(DeformerOptions options = {});

    /// One token per expression coefficient (learned per-index embedding
    /// scaled by the coefficient) plus one pose token: (E+1)×D.
    torch::Tensor condition_tokens(const FrameConditioning& cond);
    torch::Tensor condition_tokens(const torch::Tensor& expression, const torch::Tensor& pose7);

    /// Multi-head attention with queries from `features` (M×D) and keys and
    /// values from `tokens` (K×D), plus the identity skip. When `weights` is
    /// given it receives the heads×M×K attention weights.
    torch::Tensor cross_attend(const torch::Tensor& features, const torch::Tensor& tokens,
                               torch::Tensor* weights = nullptr);

    torch::Tensor feed_forward(const torch::Tensor& attended);
    DeformationOutput deform_head(const torch::Tensor& fused);

    /// Full path from raw triplane features (M×input_dim) to offsets.
    DeformationOutput forward(const torch::Tensor& triplane_features, const torch::Tensor& tokens,
                              ConditionedFeature* intermediate = nullptr);

    torch::Tensor embed_input(const torch::Tensor& triplane_features);

    const DeformerOptions& options() const { return options_; }

    /// Zeroes the attention output projection (tests use this to expose the
    /// skip connection).
    void zero_attention_output();
    void zero_ffn_output();

private:
    DeformerOptions options_;
    torch::nn::Linear input_proj_{nullptr};
    torch::Tensor expression_embedding_;
    torch::nn::Linear pose_proj_{nullptr};
    torch::nn::Linear q_proj_{nullptr}, k_proj_{nullptr}, v_proj_{nullptr}, out_proj_{nullptr};
    torch::nn::Linear concat_proj_{nullptr};
    torch::nn::Linear ffn_in_{nullptr}, ffn_out_{nullptr};
    torch::nn::Linear head_trunk_{nullptr};
    torch::nn::Linear head_position_{nullptr}, head_rotation_{nullptr}, head_scale_{nullptr}, head_feature_{nullptr};
};
TORCH_MODULE(Deformer);

/// Pose as a 7-vector (quaternion then translation).
torch::Tensor pose_vector(const HeadPose& pose, torch::ScalarType dtype = torch::kFloat32);

/// μ' = R_pose·(μ + Δμ) + t_pose;  r' = q_pose ⊗ normalize(r + Δr);
/// log s' = log s + Δs;  f' = f + Δc;  opacity unchanged.
/// Throws ShapeMismatch when offsets and cloud disagree.
GaussianCloud apply_deformation(const GaussianCloud& cloud, const DeformationOutput& deformation,
                                const HeadPose& pose);

} // namespace headsplat
