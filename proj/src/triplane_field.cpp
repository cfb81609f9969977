#include "headsplat/triplane_field.hpp"

#include <array>
#include <cmath>

#include "headsplat/errors.hpp"

namespace headsplat {

namespace {

// Axis pairs for the XY, XZ and YZ planes.
constexpr std::array<std::array<int, 2>, 3> kPlaneAxes{{{0, 1}, {0, 2}, {1, 2}}};

torch::Tensor bounds_tensor(const Eigen::Vector3d& v, const torch::Tensor& like) {
    return torch::tensor({v.x(), v.y(), v.z()}, torch::TensorOptions().dtype(torch::kFloat64)).to(like.dtype());
}

bool is_power_of_two(std::int64_t v) { return v > 0 && (v & (v - 1)) == 0; }

} // namespace

void SceneBounds::validate() const {
    require((lo.array() < hi.array()).all(), ErrorCode::InvalidArgument, "scene bounds must satisfy lo < hi");
}

SceneBounds SceneBounds::around(const torch::Tensor& positions, double dilation) {
    auto p = positions.detach().to(torch::kFloat64);
    auto mn = std::get<0>(p.min(0));
    auto mx = std::get<0>(p.max(0));
    SceneBounds b;
    for (int d = 0; d < 3; ++d) {
        const double lo = mn[d].item<double>();
        const double hi = mx[d].item<double>();
        const double pad = std::max(hi - lo, 1e-6) * dilation;
        b.lo[d] = lo - pad;
        b.hi[d] = hi + pad;
    }
    return b;
}

void TriplaneSet::validate() const {
    require(planes.defined() && planes.dim() == 4 && planes.size(0) == 3, ErrorCode::ShapeMismatch,
            "planes must be 3×F×R×R");
    require(planes.size(1) >= 1, ErrorCode::ShapeMismatch, "planes need at least one channel");
    require(planes.size(2) >= 2 && planes.size(2) == planes.size(3), ErrorCode::ShapeMismatch,
            "planes must be square with R >= 2");
    bounds.validate();
}

torch::Tensor project(const torch::Tensor& positions, const SceneBounds& bounds) {
    bounds.validate();
    auto lo = bounds_tensor(bounds.lo, positions);
    auto extent = bounds_tensor(bounds.hi - bounds.lo, positions);
    auto unit = ((positions - lo) / extent).clamp(0.0, 1.0);
    std::vector<torch::Tensor> planes;
    for (const auto& axes : kPlaneAxes) {
        planes.push_back(torch::stack({unit.select(1, axes[0]), unit.select(1, axes[1])}, 1));
    }
    return torch::stack(planes, 1);
}

torch::Tensor query(const TriplaneSet& triplane, const torch::Tensor& positions) {
    triplane.validate();
    require(positions.dim() == 2 && positions.size(1) == 3 && positions.size(0) >= 1, ErrorCode::ShapeMismatch,
            "query positions must be M×3 with M >= 1");
    const auto channels = triplane.channels();
    const auto res = triplane.resolution();

    // Grid coordinates: 0 at bounds.lo, R-1 at bounds.hi. Clamping here (not
    // on the unit cube) keeps node positions exact when the extent is R-1.
    auto lo = bounds_tensor(triplane.bounds.lo, positions);
    auto to_grid = double(res - 1) / bounds_tensor(triplane.bounds.hi - triplane.bounds.lo, positions);
    auto grid = ((positions - lo) * to_grid).clamp(0.0, double(res - 1));

    std::vector<torch::Tensor> per_plane;
    per_plane.reserve(3);
    for (std::size_t p = 0; p < kPlaneAxes.size(); ++p) {
        auto u = grid.select(1, kPlaneAxes[p][0]);
        auto v = grid.select(1, kPlaneAxes[p][1]);
        auto i0 = u.detach().floor().clamp(0, res - 2).to(torch::kLong);
        auto j0 = v.detach().floor().clamp(0, res - 2).to(torch::kLong);
        auto fu = (u - i0.to(u.scalar_type())).unsqueeze(1);
        auto fv = (v - j0.to(v.scalar_type())).unsqueeze(1);

        auto flat = triplane.planes[static_cast<std::int64_t>(p)].reshape({channels, res * res});
        auto corner = [&](const torch::Tensor& i, const torch::Tensor& j) {
            return flat.index_select(1, i * res + j).t(); // M×F
        };
        auto w00 = corner(i0, j0);
        auto w10 = corner(i0 + 1, j0);
        auto w01 = corner(i0, j0 + 1);
        auto w11 = corner(i0 + 1, j0 + 1);
        per_plane.push_back(w00 * (1 - fu) * (1 - fv) + w10 * fu * (1 - fv) + w01 * (1 - fu) * fv +
                            w11 * fu * fv);
    }
    return torch::cat(per_plane, 1);
}

// ---------------------------------------------------------------------------
// TriplaneGenerator

std::int64_t TriplaneGeneratorImpl::width_at(std::int64_t resolution, std::int64_t const_channels) {
    if (resolution <= 4) return const_channels;
    if (resolution <= 16) return 128;
    if (resolution <= 32) return 64;
    return 32;
}

TriplaneGeneratorImpl::TriplaneGeneratorImpl(TriplaneGeneratorOptions options) : options_(options) {
    require(is_power_of_two(options_.resolution) && options_.resolution >= 4, ErrorCode::InvalidArgument,
            "triplane resolution must be a power of two >= 4");
    require(options_.plane_channels >= 1 && options_.latent_dim >= 1, ErrorCode::InvalidArgument,
            "triplane channels and latent size must be positive");

    mapping_ = register_module(
        "mapping", torch::nn::Sequential(EqualLinear(options_.latent_dim, options_.style_dim),
                                         torch::nn::Functional(lrelu),
                                         EqualLinear(options_.style_dim, options_.style_dim),
                                         torch::nn::Functional(lrelu)));
    constant_ = register_parameter("constant", torch::randn({1, options_.const_channels, 4, 4}));

    std::int64_t in = options_.const_channels;
    int layer = 0;
    for (std::int64_t res = 4; res <= options_.resolution; res *= 2, ++layer) {
        const std::int64_t out = width_at(res, options_.const_channels);
        const auto tag = std::to_string(layer);
        affines_.push_back(register_module("affine" + tag, EqualLinear(options_.style_dim, in, true, 1.0)));
        convs_.push_back(register_module("conv" + tag, ModulatedConv2d(in, out, 3, true)));
        biases_.push_back(register_parameter("bias" + tag, torch::zeros({out})));
        in = out;
    }
    out_affine_ = register_module("out_affine", EqualLinear(options_.style_dim, in, true, 1.0));
    out_conv_ = register_module("out_conv", ModulatedConv2d(in, 3 * options_.plane_channels, 1, false));
    out_bias_ = register_parameter("out_bias", torch::zeros({3 * options_.plane_channels}));
}

torch::Tensor TriplaneGeneratorImpl::forward(const torch::Tensor& z) {
    require(z.dim() == 2 && z.size(1) == options_.latent_dim, ErrorCode::ShapeMismatch,
            "latent batch must be B×" + std::to_string(options_.latent_dim));
    const auto batch = z.size(0);
    auto style = mapping_->forward(z);
    auto x = constant_.expand({batch, -1, -1, -1});
    for (std::size_t l = 0; l < convs_.size(); ++l) {
        if (l > 0) {
            x = upsample2x(x);
        }
        x = convs_[l]->forward(x, affines_[l]->forward(style));
        x = lrelu(x + biases_[l].view({1, -1, 1, 1}));
    }
    x = out_conv_->forward(x, out_affine_->forward(style)) + out_bias_.view({1, -1, 1, 1});
    const auto res = options_.resolution;
    return x.view({batch, 3, options_.plane_channels, res, res});
}

TriplaneSet TriplaneGeneratorImpl::generate(const torch::Tensor& z, const SceneBounds& bounds) {
    require(z.dim() == 1 && z.size(0) == options_.latent_dim, ErrorCode::ShapeMismatch,
            "latent must have " + std::to_string(options_.latent_dim) + " entries");
    require(torch::isfinite(z).all().item<bool>(), ErrorCode::NonFiniteLatent, "temporal latent has non-finite entries");
    return TriplaneSet{forward(z.unsqueeze(0)).squeeze(0), bounds};
}

// ---------------------------------------------------------------------------
// TemporalLatents

TemporalLatentsImpl::TemporalLatentsImpl(std::int64_t frames, std::int64_t dim, double init_std) {
    require(frames >= 1 && dim >= 1, ErrorCode::InvalidArgument, "latent table must be non-empty");
    latents = register_parameter("latents", torch::randn({frames, dim}) * init_std);
}

torch::Tensor TemporalLatentsImpl::lookup(std::int64_t row) const {
    require(row >= 0 && row < latents.size(0), ErrorCode::InvalidArgument,
            "frame " + std::to_string(row) + " has no temporal latent");
    return latents[row];
}

torch::Tensor TemporalLatentsImpl::mean() const { return latents.mean(0); }

} // namespace headsplat
