#include "headsplat/deformer.hpp"

#include <cmath>

#include "headsplat/errors.hpp"

namespace headsplat {

void FrameConditioning::validate() const {
    for (double e : expression) {
        require(std::isfinite(e), ErrorCode::InvalidArgument, "non-finite expression coefficient");
    }
    require(std::abs(pose.rotation.norm() - 1.0) <= 1e-6, ErrorCode::InvalidArgument,
            "pose quaternion is not unit norm");
    camera.validate();
    if (boxes) {
        for (const auto* box : {&boxes->eyes, &boxes->mouth}) {
            require(box->width() > 0.0 && box->height() > 0.0 && box->inside(camera.width, camera.height),
                    ErrorCode::BadBox, "landmark box outside image or empty for frame " + std::to_string(frame_id));
        }
    }
    if (uv_map) {
        require(uv_map->dim() == 3 && uv_map->size(0) == camera.height && uv_map->size(1) == camera.width,
                ErrorCode::ShapeMismatch, "UV map must match the image size");
    }
}

DeformationOutput DeformationOutput::zeros(std::int64_t m, std::int64_t channels, const torch::TensorOptions& opts) {
    return {torch::zeros({m, 3}, opts), torch::zeros({m, 4}, opts), torch::zeros({m, 3}, opts),
            torch::zeros({m, channels}, opts)};
}

namespace {

torch::nn::Linear zero_linear(std::int64_t in, std::int64_t out) {
    torch::nn::Linear layer(in, out);
    torch::NoGradGuard guard;
    layer->weight.zero_();
    layer->bias.zero_();
    return layer;
}

} // namespace

DeformerImpl::DeformerImpl(DeformerOptions options) : options_(options) {
    require(options_.model_dim % options_.heads == 0, ErrorCode::InvalidArgument,
            "model_dim must be divisible by the head count");
    const auto d = options_.model_dim;
    input_proj_ = register_module("input_proj", torch::nn::Linear(options_.input_dim, d));
    expression_embedding_ =
        register_parameter("expression_embedding", torch::randn({options_.expression_dim, d}) * 0.5);
    pose_proj_ = register_module("pose_proj", torch::nn::Linear(7, d));
    if (options_.cross_attention) {
        q_proj_ = register_module("q_proj", torch::nn::Linear(d, d));
        k_proj_ = register_module("k_proj", torch::nn::Linear(d, d));
        v_proj_ = register_module("v_proj", torch::nn::Linear(d, d));
        out_proj_ = register_module("out_proj", torch::nn::Linear(d, d));
    } else {
        concat_proj_ = register_module("concat_proj", torch::nn::Linear((options_.expression_dim + 1) * d, d));
    }
    ffn_in_ = register_module("ffn_in", torch::nn::Linear(d, options_.ffn_hidden));
    ffn_out_ = register_module("ffn_out", torch::nn::Linear(options_.ffn_hidden, d));
    head_trunk_ = register_module("head_trunk", torch::nn::Linear(d, options_.head_hidden));
    head_position_ = register_module("head_position", zero_linear(options_.head_hidden, 3));
    head_rotation_ = register_module("head_rotation", zero_linear(options_.head_hidden, 4));
    head_scale_ = register_module("head_scale", zero_linear(options_.head_hidden, 3));
    head_feature_ = register_module("head_feature", zero_linear(options_.head_hidden, options_.feature_channels));
}

torch::Tensor DeformerImpl::condition_tokens(const torch::Tensor& expression, const torch::Tensor& pose7) {
    require(expression.dim() == 1 && expression.size(0) == options_.expression_dim, ErrorCode::ShapeMismatch,
            "expected " + std::to_string(options_.expression_dim) + " expression coefficients");
    require(pose7.dim() == 1 && pose7.size(0) == 7, ErrorCode::ShapeMismatch, "pose vector must have 7 entries");
    auto expr_tokens = expression_embedding_ * expression.to(expression_embedding_.dtype()).unsqueeze(1);
    auto pose_token = pose_proj_->forward(pose7.to(expression_embedding_.dtype()).unsqueeze(0));
    return torch::cat({expr_tokens, pose_token}, 0);
}

torch::Tensor DeformerImpl::condition_tokens(const FrameConditioning& cond) {
    auto expr = torch::tensor(cond.expression, torch::TensorOptions().dtype(torch::kFloat64));
    return condition_tokens(expr, pose_vector(cond.pose, torch::kFloat64));
}

torch::Tensor DeformerImpl::cross_attend(const torch::Tensor& features, const torch::Tensor& tokens,
                                         torch::Tensor* weights) {
    require(features.dim() == 2 && features.size(1) == options_.model_dim && tokens.dim() == 2 &&
                tokens.size(1) == options_.model_dim,
            ErrorCode::ShapeMismatch, "attention inputs must have model_dim columns");
    if (!options_.cross_attention) {
        return concat_proj_->forward(tokens.reshape({1, -1})) + features;
    }
    const auto m = features.size(0);
    const auto k = tokens.size(0);
    const auto h = options_.heads;
    const auto dh = options_.model_dim / h;
    auto q = q_proj_->forward(features).view({m, h, dh}).transpose(0, 1);  // h×M×dh
    auto key = k_proj_->forward(tokens).view({k, h, dh}).transpose(0, 1);  // h×K×dh
    auto val = v_proj_->forward(tokens).view({k, h, dh}).transpose(0, 1);  // h×K×dh
    auto attn = torch::softmax(torch::matmul(q, key.transpose(1, 2)) / std::sqrt(double(dh)), -1); // h×M×K
    if (weights) {
        *weights = attn;
    }
    auto mixed = torch::matmul(attn, val).transpose(0, 1).reshape({m, options_.model_dim});
    return out_proj_->forward(mixed) + features;
}

torch::Tensor DeformerImpl::feed_forward(const torch::Tensor& attended) {
    return ffn_out_->forward(torch::gelu(ffn_in_->forward(attended))) + attended;
}

DeformationOutput DeformerImpl::deform_head(const torch::Tensor& fused) {
    auto hidden = torch::gelu(head_trunk_->forward(fused));
    return {head_position_->forward(hidden), head_rotation_->forward(hidden), head_scale_->forward(hidden),
            head_feature_->forward(hidden)};
}

torch::Tensor DeformerImpl::embed_input(const torch::Tensor& triplane_features) {
    return input_proj_->forward(triplane_features);
}

DeformationOutput DeformerImpl::forward(const torch::Tensor& triplane_features, const torch::Tensor& tokens,
                                        ConditionedFeature* intermediate) {
    auto attended = cross_attend(embed_input(triplane_features), tokens);
    auto fused = feed_forward(attended);
    if (intermediate) {
        *intermediate = {attended, fused};
    }
    return deform_head(fused);
}

void DeformerImpl::zero_attention_output() {
    torch::NoGradGuard guard;
    auto& layer = options_.cross_attention ? out_proj_ : concat_proj_;
    layer->weight.zero_();
    layer->bias.zero_();
}

void DeformerImpl::zero_ffn_output() {
    torch::NoGradGuard guard;
    ffn_out_->weight.zero_();
    ffn_out_->bias.zero_();
}

torch::Tensor pose_vector(const HeadPose& pose, torch::ScalarType dtype) {
    return torch::tensor({pose.rotation[0], pose.rotation[1], pose.rotation[2], pose.rotation[3], pose.translation[0],
                          pose.translation[1], pose.translation[2]},
                         torch::TensorOptions().dtype(torch::kFloat64))
        .to(dtype);
}

GaussianCloud apply_deformation(const GaussianCloud& cloud, const DeformationOutput& d, const HeadPose& pose) {
    cloud.validate();
    const auto n = cloud.size();
    require(d.d_position.sizes() == cloud.positions.sizes() && d.d_rotation.sizes() == cloud.rotations.sizes() &&
                d.d_log_scale.sizes() == cloud.log_scales.sizes() && d.d_feature.sizes() == cloud.features.sizes(),
            ErrorCode::ShapeMismatch, "deformation offsets do not match a cloud of " + std::to_string(n) + " Gaussians");

    const auto dtype = cloud.positions.scalar_type();
    auto pose7 = pose_vector(pose, dtype);
    auto q_pose = pose7.slice(0, 0, 4).unsqueeze(0);
    auto t_pose = pose7.slice(0, 4, 7);
    auto r_pose = quaternion_to_matrix(q_pose).squeeze(0);

    GaussianCloud out;
    out.positions = torch::matmul(cloud.positions + d.d_position, r_pose.t()) + t_pose;
    out.rotations = quaternion_multiply(q_pose, normalize_quaternions(cloud.rotations + d.d_rotation));
    out.log_scales = cloud.log_scales + d.d_log_scale;
    out.opacity_logits = cloud.opacity_logits;
    out.features = cloud.features + d.d_feature;
    return out;
}

} // namespace headsplat
