#include "headsplat/generator_bridge.hpp"

#include <algorithm>
#include <random>

#include "headsplat/errors.hpp"
#include "headsplat/optimizer.hpp"
#include "headsplat/tensor_store.hpp"

namespace headsplat {

std::string to_string(Region region) {
    switch (region) {
    case Region::R1: return "R1";
    case Region::R2: return "R2";
    case Region::R3: return "R3";
    case Region::R4: return "R4";
    case Region::R3R4: return "R3+R4";
    }
    return "?";
}

Region parse_region(const std::string& text) {
    for (auto r : all_regions()) {
        if (to_string(r) == text) return r;
    }
    fail(ErrorCode::InvalidArgument, "unknown injection region '" + text + "'");
}

const std::vector<Region>& all_regions() {
    static const std::vector<Region> regions{Region::R1, Region::R2, Region::R3, Region::R4, Region::R3R4};
    return regions;
}

void InjectionConfig::validate(int blocks) const {
    if (!enabled) return;
    require(!active_blocks.empty(), ErrorCode::InvalidArgument, "injection enabled with no active blocks");
    for (int b : active_blocks) {
        require(b >= 1 && b <= blocks, ErrorCode::InvalidArgument,
                "active block " + std::to_string(b) + " outside 1.." + std::to_string(blocks));
    }
}

bool InjectionConfig::injects(int block, Region tap) const {
    if (!enabled || active_blocks.count(block) == 0) return false;
    if (region == tap) return true;
    return region == Region::R3R4 && (tap == Region::R3 || tap == Region::R4);
}

namespace {

std::int64_t block_input_width(const StyleGeneratorOptions& o, int block) {
    return block == 1 ? o.widths[0] : o.widths[static_cast<std::size_t>(block - 2)];
}

std::int64_t block_width(const StyleGeneratorOptions& o, int block) {
    return o.widths[static_cast<std::size_t>(block - 1)];
}

} // namespace

// ---------------------------------------------------------------------------
// StyleGenerator

StyleGeneratorImpl::StyleGeneratorImpl(StyleGeneratorOptions options) : options_(std::move(options)) {
    require(options_.blocks() >= 1 && options_.style_dim >= 1, ErrorCode::InvalidArgument,
            "generator needs at least one block and a positive style size");
    constant_ = register_parameter("constant", torch::randn({1, options_.widths[0], 4, 4}));
    for (int b = 1; b <= options_.blocks(); ++b) {
        const auto in = block_input_width(options_, b);
        const auto out = block_width(options_, b);
        const auto tag = "block" + std::to_string(b) + "_";
        Block blk;
        blk.affine = register_module(tag + "affine", EqualLinear(options_.style_dim, in, true, 1.0));
        blk.conv = register_module(tag + "conv", ModulatedConv2d(in, out, 3, true));
        blk.bias = register_parameter(tag + "bias", torch::zeros({out}));
        blk.rgb_affine = register_module(tag + "rgb_affine", EqualLinear(options_.style_dim, out, true, 1.0));
        blk.rgb_conv = register_module(tag + "rgb_conv", ModulatedConv2d(out, 3, 1, false));
        blk.rgb_bias = register_parameter(tag + "rgb_bias", torch::zeros({3}));
        blocks_.push_back(blk);
    }
}

torch::Tensor StyleGeneratorImpl::synthesize(const torch::Tensor& w, const PriorPyramid* pyramid,
                                             const InjectionConfig* config, InjectorImpl* injector, BlockTaps* taps) {
    auto style = w.dim() == 1 ? w.unsqueeze(0) : w;
    require(style.dim() == 2 && style.size(1) == options_.style_dim, ErrorCode::ShapeMismatch,
            "style code must have " + std::to_string(options_.style_dim) + " entries");
    require(torch::isfinite(style).all().item<bool>(), ErrorCode::NonFiniteLatent, "style code is not finite");
    const bool inject = config && config->enabled && injector && pyramid;
    if (inject) {
        config->validate(options_.blocks());
    }
    const auto batch = style.size(0);
    auto x = constant_.expand({batch, -1, -1, -1});
    torch::Tensor rgb;
    for (int b = 1; b <= options_.blocks(); ++b) {
        auto& blk = blocks_[static_cast<std::size_t>(b - 1)];
        torch::Tensor prior;
        if (inject && config->active_blocks.count(b)) {
            auto it = pyramid->find(b);
            require(it != pyramid->end(), ErrorCode::ResolutionMismatch,
                    "prior pyramid has no entry for block " + std::to_string(b));
            prior = it->second;
            const auto res = options_.resolution(b);
            require(prior.dim() == 4 && prior.size(1) == block_width(options_, b) && prior.size(2) == res &&
                        prior.size(3) == res,
                    ErrorCode::ResolutionMismatch,
                    "prior for block " + std::to_string(b) + " must be " + std::to_string(block_width(options_, b)) +
                        "×" + std::to_string(res) + "×" + std::to_string(res));
        }
        auto tap = [&](Region r) { return prior.defined() && config->injects(b, r); };

        if (b > 1) {
            x = upsample2x(x);
        }
        auto wb = style;
        if (tap(Region::R1)) wb = wb + injector->style_offset(b, prior);
        auto s = blk.affine->forward(wb);
        if (tap(Region::R2)) s = s + injector->modulation_offset(b, prior);
        x = lrelu(blk.conv->forward(x, s) + blk.bias.view({1, -1, 1, 1}));
        if (tap(Region::R3)) x = x + injector->feature_offset(b, prior);
        auto y = blk.rgb_conv->forward(x, blk.rgb_affine->forward(wb)) * options_.rgb_gain + blk.rgb_bias.view({1, -1, 1, 1});
        if (tap(Region::R4)) y = y + injector->rgb_offset(b, prior);
        rgb = rgb.defined() ? upsample2x(rgb) + y : y;

        if (taps) {
            taps->r1[b] = wb;
            taps->r2[b] = s;
            taps->r3[b] = x;
            taps->r4[b] = y;
        }
    }
    return rgb;
}

// ---------------------------------------------------------------------------
// Injector

InjectorImpl::InjectorImpl(const StyleGeneratorOptions& options) {
    for (int b = 1; b <= options.blocks(); ++b) {
        const auto width = block_width(options, b);
        const auto tag = std::to_string(b);
        r1_.push_back(register_module("r1_" + tag, torch::nn::Linear(width, options.style_dim)));
        r2_.push_back(register_module("r2_" + tag, torch::nn::Linear(width, block_input_width(options, b))));
        r3_.push_back(register_module("r3_" + tag, torch::nn::Conv2d(torch::nn::Conv2dOptions(width, width, 1))));
        r4_.push_back(register_module("r4_" + tag, torch::nn::Conv2d(torch::nn::Conv2dOptions(width, 3, 1))));
    }
    reset();
}

torch::Tensor InjectorImpl::style_offset(int block, const torch::Tensor& prior) {
    return r1_.at(static_cast<std::size_t>(block - 1))->forward(prior.mean({2, 3}));
}

torch::Tensor InjectorImpl::modulation_offset(int block, const torch::Tensor& prior) {
    return r2_.at(static_cast<std::size_t>(block - 1))->forward(prior.mean({2, 3}));
}

torch::Tensor InjectorImpl::feature_offset(int block, const torch::Tensor& prior) {
    return r3_.at(static_cast<std::size_t>(block - 1))->forward(prior);
}

torch::Tensor InjectorImpl::rgb_offset(int block, const torch::Tensor& prior) {
    return r4_.at(static_cast<std::size_t>(block - 1))->forward(prior);
}

void InjectorImpl::reset() {
    torch::NoGradGuard guard;
    for (auto& p : parameters()) {
        p.zero_();
    }
}

void InjectorImpl::randomize(std::uint64_t seed, double scale) {
    torch::NoGradGuard guard;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, scale);
    for (auto& p : parameters()) {
        std::vector<double> values(static_cast<std::size_t>(p.numel()));
        for (auto& v : values) v = normal(rng);
        p.copy_(torch::tensor(values, torch::kFloat64).view(p.sizes()));
    }
}

// ---------------------------------------------------------------------------
// PriorEncoder

PriorEncoderImpl::PriorEncoderImpl(const StyleGeneratorOptions& options, std::int64_t in_channels)
    : options_(options), in_channels_(in_channels) {
    auto conv = [](std::int64_t in, std::int64_t out, std::int64_t k, std::int64_t stride) {
        return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, k).stride(stride).padding(k / 2).bias(false));
    };
    const auto top = options_.output_resolution();
    stem_ = register_module("stem", conv(in_channels_, trunk_width(top), 3, 1));
    for (int b = options_.blocks(); b >= 2; --b) {
        const auto res = options_.resolution(b);
        downs_.push_back(register_module("down" + std::to_string(b - 1),
                                         conv(trunk_width(res), trunk_width(res / 2), 3, 2)));
    }
    std::reverse(downs_.begin(), downs_.end()); // downs_[b-1] maps block b+1 to block b
    for (int b = 1; b <= options_.blocks(); ++b) {
        adapters_.push_back(register_module("adapter" + std::to_string(b),
                                            conv(trunk_width(options_.resolution(b)), block_width(options_, b), 1, 1)));
    }
}

torch::Tensor PriorEncoderImpl::resample(const torch::Tensor& x) const {
    const auto top = options_.output_resolution();
    const auto h = x.size(2);
    const auto w = x.size(3);
    if (h == top && w == top) return x;
    if (h == w && h > top && h % top == 0 && ((h / top) & (h / top - 1)) == 0) {
        return torch::avg_pool2d(x, h / top);
    }
    namespace F = torch::nn::functional;
    return F::interpolate(x, F::InterpolateFuncOptions()
                                 .size(std::vector<std::int64_t>{top, top})
                                 .mode(torch::kBilinear)
                                 .align_corners(false));
}

PriorPyramid PriorEncoderImpl::forward(const torch::Tensor& render, const InjectionConfig& config) {
    require(render.dim() == 4 && render.size(1) == in_channels_, ErrorCode::ShapeMismatch,
            "encoder expects B×" + std::to_string(in_channels_) + "×H×W");
    config.validate(options_.blocks());
    PriorPyramid out;
    if (config.active_blocks.empty()) {
        return out;
    }
    auto x = lrelu(stem_->forward(resample(render)));
    for (int b = options_.blocks(); b >= 1; --b) {
        if (b < options_.blocks()) {
            x = lrelu(downs_[static_cast<std::size_t>(b - 1)]->forward(x));
        }
        if (config.active_blocks.count(b)) {
            out[b] = adapters_[static_cast<std::size_t>(b - 1)]->forward(x);
        }
        if (b == *config.active_blocks.begin()) break;
    }
    return out;
}

// ---------------------------------------------------------------------------
// PTI

namespace {

torch::Tensor pti_loss(const torch::Tensor& image, const torch::Tensor& targets, double perceptual_weight,
                       FeatureExtractor* extractor) {
    auto loss = (image - targets).pow(2).mean();
    if (extractor && perceptual_weight > 0.0) {
        loss = loss + perceptual_weight * loss_perceptual(image, targets, extractor);
    }
    return loss;
}

} // namespace

PtiResult pti_invert(StyleGenerator& generator, const std::vector<torch::Tensor>& targets, const PtiOptions& options,
                     FeatureExtractor* extractor) {
    require(!targets.empty() && targets.size() <= 16, ErrorCode::InvalidArgument,
            "inversion needs between 1 and 16 target images, got " + std::to_string(targets.size()));
    const auto res = generator->options().output_resolution();
    std::vector<torch::Tensor> batch;
    for (const auto& t : targets) {
        require(t.dim() == 3 && t.size(0) == res && t.size(1) == res && t.size(2) >= 3, ErrorCode::ShapeMismatch,
                "inversion targets must be " + std::to_string(res) + "×" + std::to_string(res) + "×3");
        batch.push_back(t.slice(2, 0, 3).permute({2, 0, 1}));
    }
    const auto dtype = generator->parameters().front().scalar_type();
    auto stacked = torch::stack(batch).to(dtype);
    const auto n = stacked.size(0);

    PtiResult result;
    auto params = generator->parameters();
    std::vector<bool> had_grad;
    for (auto& p : params) {
        had_grad.push_back(p.requires_grad());
        p.set_requires_grad(false);
    }

    auto w = torch::zeros({1, generator->options().style_dim}, torch::TensorOptions().dtype(dtype)).requires_grad_(true);
    {
        Adam opt;
        opt.add("w", w, options.lr_w);
        for (std::int64_t step = 0; step < options.steps1; ++step) {
            opt.zero_grad();
            auto loss = pti_loss(generator->synthesize(w.expand({n, -1})), stacked, options.perceptual_weight, extractor);
            loss.backward();
            opt.step();
            result.phase1_loss.push_back(loss.item<double>());
        }
    }
    w = w.detach();

    {
        Adam opt;
        for (const auto& item : generator->named_parameters(true)) {
            auto p = item.value();
            p.set_requires_grad(true);
            opt.add(item.key(), p, options.lr_generator);
        }
        for (std::int64_t step = 0; step < options.steps2; ++step) {
            opt.zero_grad();
            auto loss = pti_loss(generator->synthesize(w.expand({n, -1})), stacked, options.perceptual_weight, extractor);
            loss.backward();
            opt.step();
            result.phase2_loss.push_back(loss.item<double>());
        }
        opt.zero_grad();
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        params[i].set_requires_grad(had_grad[i]);
    }
    generator->set_initialized(true);
    result.w = w;
    return result;
}

// ---------------------------------------------------------------------------
// Weights

void save_generator(const std::filesystem::path& dir, StyleGenerator& generator) {
    nlohmann::json meta;
    meta["kind"] = "style_generator";
    meta["style_dim"] = generator->options().style_dim;
    meta["widths"] = generator->options().widths;
    meta["rgb_gain"] = generator->options().rgb_gain;
    meta["initialized"] = generator->initialized();
    save_tensor_store(dir, named_parameters(*generator), meta);
}

StyleGenerator load_generator(const std::filesystem::path& dir) {
    auto store = load_tensor_store(dir);
    require(store.meta.value("kind", "") == "style_generator", ErrorCode::SchemaMismatch,
            "weights at " + dir.string() + " are not a style generator");
    StyleGeneratorOptions options;
    options.style_dim = store.meta.at("style_dim").get<std::int64_t>();
    options.widths = store.meta.at("widths").get<std::vector<std::int64_t>>();
    options.rgb_gain = store.meta.value("rgb_gain", options.rgb_gain);
    StyleGenerator generator(options);
    for (auto& [name, tensor] : named_parameters(*generator)) {
        auto target = tensor;
        assign_checked(target, store, name);
    }
    generator->set_initialized(store.meta.value("initialized", true));
    return generator;
}

} // namespace headsplat
