#include "headsplat/objectives.hpp"

#include <cmath>
#include <cstdlib>
#include <random>

#include "headsplat/errors.hpp"
#include "headsplat/tensor_store.hpp"

namespace headsplat {

std::vector<RegionBox> region_boxes(const LandmarkBoxes& boxes) {
    return {{RegionKind::Eyes, boxes.eyes}, {RegionKind::Mouth, boxes.mouth}};
}

// ---------------------------------------------------------------------------
// LossTerms

void LossTerms::add(const std::string& name, const torch::Tensor& value, double weight) {
    terms_.emplace_back(name, value * weight);
    weights_[name] = weight;
    notes_[name] = value.detach().item<double>();
}

void LossTerms::note(const std::string& name, double value) { notes_[name] = value; }

torch::Tensor LossTerms::total() const {
    require(!terms_.empty(), ErrorCode::InvalidArgument, "no loss terms");
    auto sum = terms_.front().second;
    for (std::size_t i = 1; i < terms_.size(); ++i) {
        sum = sum + terms_[i].second;
    }
    return sum;
}

LossReport LossTerms::report() const {
    LossReport r;
    r.values = notes_;
    r.weights = weights_;
    for (const auto& [name, w] : weights_) {
        r.total += w * notes_.at(name);
    }
    r.values["total"] = r.total;
    return r;
}

// ---------------------------------------------------------------------------
// Perceptual features

RandomConvExtractor::RandomConvExtractor(std::uint64_t seed, torch::ScalarType dtype) {
    const std::vector<std::array<std::int64_t, 3>> layout{{3, 16, 1}, {16, 32, 2}, {32, 64, 2}};
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (const auto& [in, out, stride] : layout) {
        std::vector<double> values(static_cast<std::size_t>(out * in * 9));
        const double scale = std::sqrt(2.0 / double(in * 9));
        for (auto& v : values) v = normal(rng) * scale;
        weights_.push_back(torch::tensor(values, torch::kFloat64).view({out, in, 3, 3}).to(dtype));
        strides_.push_back(stride);
    }
}

std::vector<torch::Tensor> RandomConvExtractor::features(const torch::Tensor& batch) {
    std::vector<torch::Tensor> out;
    auto x = batch;
    for (std::size_t i = 0; i < weights_.size(); ++i) {
        x = torch::relu(torch::conv2d(x, weights_[i].to(x.dtype()), {}, strides_[i], 1));
        out.push_back(x);
    }
    return out;
}

std::shared_ptr<RandomConvExtractor> RandomConvExtractor::load(const std::filesystem::path& dir) {
    auto store = load_tensor_store(dir);
    auto ex = std::make_shared<RandomConvExtractor>();
    for (std::size_t i = 0; i < ex->weights_.size(); ++i) {
        assign_checked(ex->weights_[i], store, "conv" + std::to_string(i) + ".weight");
    }
    return ex;
}

std::shared_ptr<FeatureExtractor> default_extractor() {
    if (const char* cache = std::getenv("AVATAR_CACHE")) {
        const auto dir = std::filesystem::path(cache) / "extractor";
        if (std::filesystem::exists(dir / "manifest.json")) {
            return RandomConvExtractor::load(dir);
        }
    }
    return std::make_shared<RandomConvExtractor>();
}

torch::Tensor to_batch_rgb(const torch::Tensor& image) {
    if (image.dim() == 3) {
        require(image.size(2) >= 3, ErrorCode::ShapeMismatch, "image needs at least three channels");
        return image.slice(2, 0, 3).permute({2, 0, 1}).unsqueeze(0);
    }
    require(image.dim() == 4 && image.size(1) >= 3, ErrorCode::ShapeMismatch, "expected H×W×C or B×3×H×W image");
    return image.slice(1, 0, 3);
}

torch::Tensor loss_perceptual(const torch::Tensor& pred, const torch::Tensor& gt, FeatureExtractor* extractor) {
    require(extractor != nullptr, ErrorCode::NoExtractor, "no perceptual feature extractor registered");
    auto a = to_batch_rgb(pred);
    auto b = to_batch_rgb(gt).to(a.dtype());
    require(a.sizes() == b.sizes(), ErrorCode::ShapeMismatch, "perceptual inputs differ in shape");
    auto fa = extractor->features(a * 2.0 - 1.0);
    auto fb = extractor->features(b * 2.0 - 1.0);
    torch::Tensor total;
    for (std::size_t l = 0; l < fa.size(); ++l) {
        auto na = fa[l] * torch::rsqrt(fa[l].pow(2).sum(1, true) + 1e-10);
        auto nb = fb[l] * torch::rsqrt(fb[l].pow(2).sum(1, true) + 1e-10);
        auto d = (na - nb).pow(2).sum(1).mean();
        total = total.defined() ? total + d : d;
    }
    return total / double(fa.size());
}

// ---------------------------------------------------------------------------
// Reconstruction losses

torch::Tensor loss_rgb(const torch::Tensor& render, const torch::Tensor& gt, FeatureExtractor* extractor,
                       double lpips_weight) {
    require(render.dim() == 3 && gt.dim() == 3 && render.size(0) == gt.size(0) && render.size(1) == gt.size(1) &&
                render.size(2) >= 3 && gt.size(2) >= 3,
            ErrorCode::ShapeMismatch, "render and ground truth must share H×W and carry RGB");
    auto l1 = (render.slice(2, 0, 3) - gt.slice(2, 0, 3).to(render.dtype())).abs().mean();
    if (extractor && lpips_weight > 0.0) {
        return l1 + lpips_weight * loss_perceptual(render, gt, extractor);
    }
    return l1;
}

namespace {

// Bilinear sample positions along one axis: indices and interpolation weight.
struct AxisSamples {
    torch::Tensor lo;
    torch::Tensor hi;
    torch::Tensor frac;
};

AxisSamples axis_samples(double start, double extent, std::int64_t crop, std::int64_t size,
                         torch::ScalarType dtype) {
    std::vector<std::int64_t> lo(crop), hi(crop);
    std::vector<double> frac(crop);
    for (std::int64_t k = 0; k < crop; ++k) {
        double s = start + (double(k) + 0.5) * extent / double(crop) - 0.5;
        s = std::clamp(s, 0.0, double(size - 1));
        auto i0 = std::min<std::int64_t>(static_cast<std::int64_t>(std::floor(s)), std::max<std::int64_t>(size - 2, 0));
        lo[k] = i0;
        hi[k] = std::min<std::int64_t>(i0 + 1, size - 1);
        frac[k] = s - double(i0);
    }
    return {torch::tensor(lo, torch::kInt64), torch::tensor(hi, torch::kInt64),
            torch::tensor(frac, torch::kFloat64).to(dtype)};
}

} // namespace

torch::Tensor roi_align(const torch::Tensor& image, const PixelBox& box, std::int64_t crop) {
    require(image.dim() == 3, ErrorCode::ShapeMismatch, "RoI-align expects H×W×C");
    require(box.width() > 0.0 && box.height() > 0.0 && std::isfinite(box.width()) && std::isfinite(box.height()),
            ErrorCode::DegenerateBox, "RoI box has non-positive area");
    const auto h = image.size(0);
    const auto w = image.size(1);
    auto ys = axis_samples(box.y0, box.height(), crop, h, image.scalar_type());
    auto xs = axis_samples(box.x0, box.width(), crop, w, image.scalar_type());
    auto fy = ys.frac.view({crop, 1, 1});
    auto rows = image.index_select(0, ys.lo) * (1 - fy) + image.index_select(0, ys.hi) * fy;
    auto fx = xs.frac.view({1, crop, 1});
    return rows.index_select(1, xs.lo) * (1 - fx) + rows.index_select(1, xs.hi) * fx;
}

torch::Tensor loss_landmark(const torch::Tensor& render, const torch::Tensor& gt, const std::vector<RegionBox>& boxes,
                            std::int64_t crop) {
    require(!boxes.empty(), ErrorCode::MissingLandmarks, "no landmark boxes");
    require(render.dim() == 3 && gt.dim() == 3 && render.size(0) == gt.size(0) && render.size(1) == gt.size(1),
            ErrorCode::ShapeMismatch, "render and ground truth must share H×W");
    auto r = render.slice(2, 0, 3);
    auto g = gt.slice(2, 0, 3).to(render.dtype());
    torch::Tensor total;
    for (const auto& rb : boxes) {
        auto d = (roi_align(r, rb.box, crop) - roi_align(g, rb.box, crop)).abs().mean();
        total = total.defined() ? total + d : d;
    }
    return total / double(boxes.size());
}

// ---------------------------------------------------------------------------
// Discriminator

DiscriminatorImpl::DiscriminatorImpl(std::int64_t base_channels) {
    const std::vector<std::int64_t> widths{6, base_channels, base_channels * 2, base_channels * 4};
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
        auto conv = torch::nn::Conv2d(torch::nn::Conv2dOptions(widths[i], widths[i + 1], 3).stride(2).padding(1));
        convs_.push_back(register_module("conv" + std::to_string(i), conv));
    }
    head_ = register_module("head", torch::nn::Linear(widths.back(), 1));
}

torch::Tensor DiscriminatorImpl::forward(const torch::Tensor& image, const torch::Tensor& uv) {
    require(image.dim() == 4 && uv.dim() == 4 && image.size(0) == uv.size(0) && image.size(2) == uv.size(2) &&
                image.size(3) == uv.size(3),
            ErrorCode::ShapeMismatch, "discriminator image and UV map must match");
    auto x = torch::cat({image, uv.to(image.dtype())}, 1);
    for (auto& conv : convs_) {
        x = torch::leaky_relu(conv->forward(x), 0.2);
    }
    return head_->forward(x.mean({2, 3})).squeeze(1);
}

std::vector<torch::Tensor> augment_pair(const std::vector<torch::Tensor>& batches, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const auto h = batches.front().size(2);
    const auto w = batches.front().size(3);
    const bool flip = std::uniform_int_distribution<int>(0, 1)(rng) == 1;
    std::uniform_int_distribution<std::int64_t> dy(-h / 8, h / 8);
    std::uniform_int_distribution<std::int64_t> dx(-w / 8, w / 8);
    const auto sy = dy(rng);
    const auto sx = dx(rng);
    std::vector<torch::Tensor> out;
    for (const auto& b : batches) {
        auto x = flip ? b.flip({3}) : b;
        out.push_back(torch::roll(x, {sy, sx}, {2, 3}));
    }
    return out;
}

CganLosses loss_cgan(Discriminator& discriminator, const torch::Tensor& pred, const torch::Tensor& gt,
                     const torch::Tensor& uv, const CganOptions& options) {
    auto fake = to_batch_rgb(pred);
    auto real = to_batch_rgb(gt).to(fake.dtype());
    auto cond = to_batch_rgb(uv).to(fake.dtype());
    require(fake.sizes() == real.sizes() && fake.sizes() == cond.sizes(), ErrorCode::ShapeMismatch,
            "prediction, ground truth and UV map must match");
    if (options.augment) {
        auto aug = augment_pair({fake, real, cond}, options.seed);
        fake = aug[0];
        real = aug[1];
        cond = aug[2];
    }
    namespace F = torch::nn::functional;
    CganLosses out;
    out.g_loss = F::softplus(-discriminator->forward(fake, cond)).mean();
    out.d_loss = 0.5 * (F::softplus(-discriminator->forward(real, cond)).mean() +
                        F::softplus(discriminator->forward(fake.detach(), cond)).mean());
    return out;
}

} // namespace headsplat
