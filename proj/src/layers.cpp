#include "headsplat/layers.hpp"

#include <cmath>

namespace headsplat {

EqualLinearImpl::EqualLinearImpl(std::int64_t in, std::int64_t out, bool bias, double bias_init)
    : scale_(1.0 / std::sqrt(static_cast<double>(in))) {
    weight = register_parameter("weight", torch::randn({out, in}));
    if (bias) {
        this->bias = register_parameter("bias", torch::full({out}, bias_init));
    }
}

torch::Tensor EqualLinearImpl::forward(const torch::Tensor& x) {
    return torch::nn::functional::linear(x, weight * scale_, bias.defined() ? bias : torch::Tensor());
}

void EqualLinearImpl::zero_() {
    torch::NoGradGuard guard;
    weight.zero_();
    if (bias.defined()) {
        bias.zero_();
    }
}

ModulatedConv2dImpl::ModulatedConv2dImpl(std::int64_t in, std::int64_t out, std::int64_t kernel, bool demodulate)
    : kernel_(kernel), demodulate_(demodulate), scale_(1.0 / std::sqrt(static_cast<double>(in * kernel * kernel))) {
    weight = register_parameter("weight", torch::randn({out, in, kernel, kernel}));
}

torch::Tensor ModulatedConv2dImpl::forward(const torch::Tensor& x, const torch::Tensor& style) {
    // Modulating the input channels is equivalent to modulating the weight
    // per sample, and lets one shared convolution serve the whole batch.
    auto w = weight * scale_;
    auto y = torch::conv2d(x * style.unsqueeze(-1).unsqueeze(-1), w, {}, 1, kernel_ / 2);
    if (demodulate_) {
        auto wsq = w.pow(2).sum({2, 3});                          // out×in
        auto demod = torch::rsqrt(torch::matmul(style.pow(2), wsq.t()) + 1e-8); // B×out
        y = y * demod.unsqueeze(-1).unsqueeze(-1);
    }
    return y;
}

torch::Tensor lrelu(const torch::Tensor& x) { return torch::leaky_relu(x, 0.2) * std::sqrt(2.0); }

torch::Tensor upsample2x(const torch::Tensor& x) {
    namespace F = torch::nn::functional;
    return F::interpolate(x, F::InterpolateFuncOptions()
                                 .scale_factor(std::vector<double>{2.0, 2.0})
                                 .mode(torch::kBilinear)
                                 .align_corners(false));
}

} // namespace headsplat
