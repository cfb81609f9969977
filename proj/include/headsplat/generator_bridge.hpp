#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "headsplat/feature_splatter.hpp"
#include "headsplat/layers.hpp"
#include "headsplat/objectives.hpp"

namespace headsplat {

/// Tap points inside a generator block where priors can be injected:
/// R1 pre-affine style, R2 post-affine style, R3 conv feature, R4 tRGB output.
enum class Region { R1, R2, R3, R4, R3R4 };

std::string to_string(Region region);
Region parse_region(const std::string& text);
const std::vector<Region>& all_regions();

/// Blocks are numbered from 1; block b runs at 4·2^(b-1).
struct InjectionConfig {
    Region region = Region::R3;
    std::set<int> active_blocks{1, 2, 3, 4, 5};
    bool enabled = true;

    /// active_blocks non-empty when enabled and within [1, blocks].
    void validate(int blocks) const;
    bool injects(int block, Region tap) const;
};

/// Per-block prior feature maps, keyed by block number. Entry b is
/// 1×width_b×res_b×res_b.
using PriorPyramid = std::map<int, torch::Tensor>;

struct StyleGeneratorOptions {
    std::int64_t style_dim = 512;
    std::vector<std::int64_t> widths{256, 256, 128, 128, 64};
    /// Scales each block's RGB contribution so an untrained generator emits
    /// values on the order of image intensities.
    double rgb_gain = 0.2;

    int blocks() const { return static_cast<int>(widths.size()); }
    std::int64_t resolution(int block) const { return std::int64_t{4} << (block - 1); }
    std::int64_t output_resolution() const { return resolution(blocks()); }
};

/// Values seen at each tap of each block during one synthesis; used by
/// tests and the region study.
struct BlockTaps {
    std::map<int, torch::Tensor> r1, r2, r3, r4;
};

class InjectorImpl;

/// Block-structured style-based generator. Each block: affine → modulated
/// 3×3 conv (+bias, lrelu) → tRGB (affine → modulated 1×1 conv); RGB
/// contributions are upsampled and summed across blocks. Output is B×3×S×S.
class StyleGeneratorImpl : public torch::nn::Module {
public:
    explicit StyleGeneratorImpl(StyleGeneratorOptions options = {});

    /// `w` is D_w or B×D_w. With no injector (or injection disabled) this is
    /// the plain generator.
    torch::Tensor synthesize(const torch::Tensor& w, const PriorPyramid* pyramid = nullptr,
                             const InjectionConfig* config = nullptr, InjectorImpl* injector = nullptr,
                             BlockTaps* taps = nullptr);

    const StyleGeneratorOptions& options() const { return options_; }

    /// Marks the generator as initialized (PTI or loaded weights).
    void set_initialized(bool v) { initialized_ = v; }
    bool initialized() const { return initialized_; }

private:
    struct Block {
        EqualLinear affine{nullptr};
        ModulatedConv2d conv{nullptr};
        torch::Tensor bias;
        EqualLinear rgb_affine{nullptr};
        ModulatedConv2d rgb_conv{nullptr};
        torch::Tensor rgb_bias;
    };
    StyleGeneratorOptions options_;
    torch::Tensor constant_;
    std::vector<Block> blocks_;
    bool initialized_ = false;
};
TORCH_MODULE(StyleGenerator);

/// Zero-initialized projections from prior features to every tap of every
/// block. Kept apart from the generator so the generator can stay frozen.
class InjectorImpl : public torch::nn::Module {
public:
    explicit InjectorImpl(const StyleGeneratorOptions& options);

    /// R1: offset on w from the pooled prior (B×D_w).
    torch::Tensor style_offset(int block, const torch::Tensor& prior);
    /// R2: offset on the post-affine style (B×in_b).
    torch::Tensor modulation_offset(int block, const torch::Tensor& prior);
    /// R3: feature added to the conv output (B×width_b×res×res).
    torch::Tensor feature_offset(int block, const torch::Tensor& prior);
    /// R4: RGB added to the tRGB output (B×3×res×res).
    torch::Tensor rgb_offset(int block, const torch::Tensor& prior);

    /// Re-zeroes every projection.
    void reset();
    /// Sets every projection to small random values (tests of locality).
    void randomize(std::uint64_t seed, double scale = 0.1);

private:
    std::vector<torch::nn::Linear> r1_;
    std::vector<torch::nn::Linear> r2_;
    std::vector<torch::nn::Conv2d> r3_;
    std::vector<torch::nn::Conv2d> r4_;
};
TORCH_MODULE(Injector);

/// Bias-free strided conv encoder from a 1×C×H×W feature render to a prior
/// pyramid matching the generator's blocks. Renders larger than the
/// generator output by a power of two are average-pooled down to it; any
/// other size is bilinearly resampled.
class PriorEncoderImpl : public torch::nn::Module {
public:
    PriorEncoderImpl(const StyleGeneratorOptions& options, std::int64_t in_channels = GaussianCloud::kFeatureChannels);

    PriorPyramid forward(const torch::Tensor& render, const InjectionConfig& config);
    PriorPyramid forward(const FeatureImage& render, const InjectionConfig& config) {
        return forward(render.as_batch(), config);
    }

private:
    static std::int64_t trunk_width(std::int64_t resolution) { return resolution >= 64 ? 32 : 64; }
    torch::Tensor resample(const torch::Tensor& x) const;

    StyleGeneratorOptions options_;
    std::int64_t in_channels_;
    torch::nn::Conv2d stem_{nullptr};
    std::vector<torch::nn::Conv2d> downs_;    // stride-2 convs between block resolutions
    std::vector<torch::nn::Conv2d> adapters_; // one per block
};
TORCH_MODULE(PriorEncoder);

struct PtiOptions {
    std::int64_t steps1 = 500;
    std::int64_t steps2 = 300;
    double lr_w = 0.05;
    double lr_generator = 3e-4;
    double perceptual_weight = 1.0;
};

struct PtiResult {
    torch::Tensor w;                 // 1×D_w
    std::vector<double> phase1_loss; // per step
    std::vector<double> phase2_loss;
};

/// Two-phase inversion: a single shared w is fitted to all targets with the
/// generator fixed (L2 + perceptual), then w is fixed and the generator
/// weights are tuned on the same objective. `targets` are H×W×3 images at
/// the generator's output resolution; 1 to 16 are accepted.
PtiResult pti_invert(StyleGenerator& generator, const std::vector<torch::Tensor>& targets, const PtiOptions& options,
                     FeatureExtractor* extractor);

void save_generator(const std::filesystem::path& dir, StyleGenerator& generator);
/// Throws SchemaMismatch naming the first missing or mis-shaped tensor.
StyleGenerator load_generator(const std::filesystem::path& dir);

} // namespace headsplat
