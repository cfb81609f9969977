#pragma once

// Building blocks shared by the triplane generator and the style-based
// image generator. Weights use the equalized-learning-rate convention: stored
// as N(0,1) and scaled by 1/sqrt(fan_in) at runtime.

#include <torch/torch.h>

namespace headsplat {

class EqualLinearImpl : public torch::nn::Module {
public:
    EqualLinearImpl(std::int64_t in, std::int64_t out, bool bias = true, double bias_init = 0.0);

    torch::Tensor forward(const torch::Tensor& x);

    /// Sets weight (and bias) to zero; used for identity-at-init projections.
    void zero_();

    torch::Tensor weight;
    torch::Tensor bias;

private:
    double scale_;
};
TORCH_MODULE(EqualLinear);

/// Style-modulated convolution with optional demodulation. `style` is B×in.
class ModulatedConv2dImpl : public torch::nn::Module {
public:
    ModulatedConv2dImpl(std::int64_t in, std::int64_t out, std::int64_t kernel, bool demodulate);

    torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& style);

    torch::Tensor weight;

private:
    std::int64_t kernel_;
    bool demodulate_;
    double scale_;
};
TORCH_MODULE(ModulatedConv2d);

/// Leaky ReLU (slope 0.2) with the usual sqrt(2) gain.
torch::Tensor lrelu(const torch::Tensor& x);

/// Bilinear ×2 upsampling of a B×C×H×W tensor.
torch::Tensor upsample2x(const torch::Tensor& x);

} // namespace headsplat
