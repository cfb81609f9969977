#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "headsplat/deformer.hpp"
#include "headsplat/feature_splatter.hpp"

namespace headsplat {

enum class RegionKind { Eyes, Mouth };

struct RegionBox {
    RegionKind kind = RegionKind::Mouth;
    PixelBox box;
};

std::vector<RegionBox> region_boxes(const LandmarkBoxes& boxes);

/// Default loss weights.
struct LossWeights {
    double rgb = 1.0;
    double lpips = 0.1;
    double lmk = 0.5;
    double perceptual = 1.0;
    double gan_l1 = 1.0;
    double adv = 0.01;
};

/// Named loss terms and the weights applied to them. `total` is the weighted
/// sum of the terms present.
struct LossReport {
    std::map<std::string, double> values;
    std::map<std::string, double> weights;
    double total = 0.0;
};

/// Accumulates weighted differentiable terms and produces a LossReport.
class LossTerms {
public:
    void add(const std::string& name, const torch::Tensor& value, double weight);
    /// A term reported but excluded from the total (e.g. the discriminator loss).
    void note(const std::string& name, double value);

    torch::Tensor total() const;
    LossReport report() const;
    bool empty() const { return terms_.empty(); }

private:
    std::vector<std::pair<std::string, torch::Tensor>> terms_;
    std::map<std::string, double> weights_;
    std::map<std::string, double> notes_;
};

/// Deep feature stack used by the perceptual distance. Input is a B×3×H×W
/// batch in [-1, 1].
class FeatureExtractor {
public:
    virtual ~FeatureExtractor() = default;
    virtual std::vector<torch::Tensor> features(const torch::Tensor& batch) = 0;
    virtual std::string name() const = 0;
};

/// Fixed-seed random conv stack (3→16, 16→32 stride 2, 32→64 stride 2, ReLU).
/// Stands in for pretrained perceptual weights.
class RandomConvExtractor : public FeatureExtractor {
public:
    explicit RandomConvExtractor(std::uint64_t seed = 7, torch::ScalarType dtype = torch::kFloat32);

    std::vector<torch::Tensor> features(const torch::Tensor& batch) override;
    std::string name() const override { return "random-conv"; }

    const std::vector<torch::Tensor>& weights() const { return weights_; }

    /// Loads weights from a tensor store ("conv0.weight", ...) with the same
    /// shapes, e.g. cached pretrained layers.
    static std::shared_ptr<RandomConvExtractor> load(const std::filesystem::path& dir);

private:
    std::vector<torch::Tensor> weights_;
    std::vector<std::int64_t> strides_;
};

/// Extractor resolution: weights under $AVATAR_CACHE/extractor when present,
/// otherwise the fixed-seed random stack.
std::shared_ptr<FeatureExtractor> default_extractor();

/// Converts H×W×C (first three channels used) or B×3×H×W to B×3×H×W.
torch::Tensor to_batch_rgb(const torch::Tensor& image);

/// Mean absolute difference over the RGB channels. `render` may carry extra
/// feature channels; only channels 0..2 are compared. With an extractor and
/// lpips_weight > 0 the weighted perceptual distance is added.
torch::Tensor loss_rgb(const torch::Tensor& render, const torch::Tensor& gt, FeatureExtractor* extractor = nullptr,
                       double lpips_weight = 0.0);

/// Bilinear RoI-align of an H×W×C image to a crop×crop×C patch. Sample k of
/// the crop sits at x0 + (k + 0.5)·w/crop in edge coordinates.
torch::Tensor roi_align(const torch::Tensor& image, const PixelBox& box, std::int64_t crop = 32);

/// Mean absolute difference of RoI-aligned RGB crops, averaged over boxes.
torch::Tensor loss_landmark(const torch::Tensor& render, const torch::Tensor& gt, const std::vector<RegionBox>& boxes,
                            std::int64_t crop = 32);

/// Layer-averaged distance between unit-normalized deep features. Throws
/// NoExtractor when `extractor` is null.
torch::Tensor loss_perceptual(const torch::Tensor& pred, const torch::Tensor& gt, FeatureExtractor* extractor);

/// Conditional discriminator over the channel concatenation (image, uv).
class DiscriminatorImpl : public torch::nn::Module {
public:
    explicit DiscriminatorImpl(std::int64_t base_channels = 32);

    /// image, uv: B×3×H×W. Returns B logits.
    torch::Tensor forward(const torch::Tensor& image, const torch::Tensor& uv);

private:
    std::vector<torch::nn::Conv2d> convs_;
    torch::nn::Linear head_{nullptr};
};
TORCH_MODULE(Discriminator);

struct CganOptions {
    bool augment = true;
    std::uint64_t seed = 0;
};

struct CganLosses {
    torch::Tensor g_loss; // softplus(-D(fake)), differentiable w.r.t. pred
    torch::Tensor d_loss; // ½(softplus(-D(real)) + softplus(D(fake))), fake detached
};

/// Flip and integer translation applied identically to every tensor in
/// `batches` (all B×C×H×W with the same H×W).
std::vector<torch::Tensor> augment_pair(const std::vector<torch::Tensor>& batches, std::uint64_t seed);

/// Non-saturating conditional GAN losses. Images are H×W×3 or B×3×H×W.
CganLosses loss_cgan(Discriminator& discriminator, const torch::Tensor& pred, const torch::Tensor& gt,
                     const torch::Tensor& uv, const CganOptions& options = {});

} // namespace headsplat
