#include "headsplat/feature_splatter.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include <Eigen/Geometry>

#include "headsplat/errors.hpp"

namespace headsplat {

// ---------------------------------------------------------------------------
// Camera and projection

void Camera::validate() const {
    require(fx > 0.0 && fy > 0.0, ErrorCode::InvalidArgument, "focal lengths must be positive");
    require(width >= 1 && height >= 1, ErrorCode::InvalidArgument, "image size must be positive");
    const Eigen::Matrix3d r = rotation();
    require((r * r.transpose() - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() < 1e-6, ErrorCode::InvalidArgument,
            "camera rotation is not orthonormal");
}

Camera Camera::look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target, const Eigen::Vector3d& up,
                       double focal, std::int64_t width, std::int64_t height) {
    const Eigen::Vector3d forward = (target - eye).normalized();
    const Eigen::Vector3d right = forward.cross(up).normalized();
    const Eigen::Vector3d down = forward.cross(right);
    Camera cam;
    cam.fx = cam.fy = focal;
    cam.width = width;
    cam.height = height;
    cam.cx = 0.5 * static_cast<double>(width - 1);
    cam.cy = 0.5 * static_cast<double>(height - 1);
    Eigen::Matrix3d r;
    r.row(0) = right.transpose();
    r.row(1) = down.transpose();
    r.row(2) = forward.transpose();
    cam.world_to_camera.setIdentity();
    cam.world_to_camera.topLeftCorner<3, 3>() = r;
    cam.world_to_camera.topRightCorner<3, 1>() = -r * eye;
    return cam;
}

std::optional<ProjectedGaussian> project_gaussian(const Camera& camera, const Eigen::Vector3d& mean,
                                                  const Eigen::Matrix3d& cov) {
    const Eigen::Matrix3d w = camera.rotation();
    const Eigen::Vector3d p = w * mean + camera.translation();
    if (!(p.z() > kNearPlane)) {
        return std::nullopt;
    }
    const double z = p.z();
    Eigen::Matrix<double, 2, 3> j;
    j << camera.fx / z, 0.0, -camera.fx * p.x() / (z * z), 0.0, camera.fy / z, -camera.fy * p.y() / (z * z);
    const Eigen::Matrix<double, 2, 3> t = j * w;
    ProjectedGaussian out;
    out.mean = {camera.fx * p.x() / z + camera.cx, camera.fy * p.y() / z + camera.cy};
    out.cov = t * cov * t.transpose() + kCovarianceDilation * Eigen::Matrix2d::Identity();
    out.depth = z;
    return out;
}

ScreenGaussians project_gaussians(const GaussianCloud& cloud, const Camera& camera) {
    cloud.validate();
    camera.validate();
    const auto opts = cloud.positions.options().requires_grad(false);
    auto w = torch::empty({3, 3}, torch::kFloat64);
    auto t = torch::empty({3}, torch::kFloat64);
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) {
            w[r][c] = camera.world_to_camera(r, c);
        }
        t[r] = camera.world_to_camera(r, 3);
    }
    w = w.to(opts.dtype());
    t = t.to(opts.dtype());

    auto p = torch::matmul(cloud.positions, w.t()) + t;
    auto z_raw = p.select(1, 2);
    auto valid = (z_raw > kNearPlane).detach();
    // Culled splats get harmless placeholder geometry so no inf/nan leaks
    // into the autograd graph.
    auto z = torch::where(valid, z_raw, torch::ones_like(z_raw));
    auto x = torch::where(valid, p.select(1, 0), torch::zeros_like(z_raw));
    auto y = torch::where(valid, p.select(1, 1), torch::zeros_like(z_raw));

    ScreenGaussians s;
    s.means2d = torch::stack({camera.fx * x / z + camera.cx, camera.fy * y / z + camera.cy}, 1);

    auto zero = torch::zeros_like(z);
    auto jac = torch::stack({torch::stack({camera.fx / z, zero, -camera.fx * x / (z * z)}, 1),
                             torch::stack({zero, camera.fy / z, -camera.fy * y / (z * z)}, 1)},
                            1); // N×2×3
    auto tw = torch::matmul(jac, w);
    auto cov3 = covariances(cloud.rotations, cloud.log_scales);
    auto cov2 = torch::matmul(torch::matmul(tw, cov3), tw.transpose(1, 2));
    auto a = cov2.select(1, 0).select(1, 0) + kCovarianceDilation;
    auto b = cov2.select(1, 0).select(1, 1);
    auto c = cov2.select(1, 1).select(1, 1) + kCovarianceDilation;
    auto det = a * c - b * b;
    s.conics = torch::stack({c / det, -b / det, a / det}, 1);
    s.opacities = cloud.opacities().squeeze(1);
    s.features = cloud.features;
    s.depths = z.detach();
    s.valid = valid;
    return s;
}

// ---------------------------------------------------------------------------
// Rasterization kernels

namespace {

/// Ordering, culling radii and tile lists shared by forward and backward.
struct SplatBins {
    std::vector<std::int64_t> order;                  // participating splats, depth then index
    std::vector<std::vector<std::int32_t>> tile_lists; // per tile, in `order` sequence
    std::int64_t tiles_x = 0;
    std::int64_t tiles_y = 0;
};

template <typename scalar_t>
SplatBins bin_splats(const scalar_t* means, const scalar_t* conics, const scalar_t* opac, const scalar_t* depths,
                     const bool* valid, std::int64_t n, std::int64_t width, std::int64_t height, bool tiled) {
    SplatBins bins;
    for (std::int64_t i = 0; i < n; ++i) {
        // A splat whose peak alpha is below the floor never contributes.
        if (valid[i] && static_cast<double>(opac[i]) >= kMinContribution) {
            bins.order.push_back(i);
        }
    }
    std::stable_sort(bins.order.begin(), bins.order.end(),
                     [depths](std::int64_t a, std::int64_t b) { return depths[a] < depths[b]; });

    bins.tiles_x = tiled ? (width + kTileSize - 1) / kTileSize : 1;
    bins.tiles_y = tiled ? (height + kTileSize - 1) / kTileSize : 1;
    bins.tile_lists.assign(static_cast<std::size_t>(bins.tiles_x * bins.tiles_y), {});
    for (auto i : bins.order) {
        if (!tiled) {
            bins.tile_lists[0].push_back(static_cast<std::int32_t>(i));
            continue;
        }
        // a·g >= 1/255  <=>  q <= 2·ln(255·a); q >= d²/λmax bounds the
        // Euclidean reach. The margin only makes the cull conservative.
        const double ca = conics[3 * i], cb = conics[3 * i + 1], cc = conics[3 * i + 2];
        const double det = ca * cc - cb * cb;
        if (!(det > 0.0)) continue;
        const double va = cc / det, vc = ca / det, vb = -cb / det;
        const double mid = 0.5 * (va + vc);
        const double lambda_max = mid + std::sqrt(std::max(0.0, mid * mid - (va * vc - vb * vb)));
        const double q_max = 2.0 * std::log(static_cast<double>(opac[i]) / kMinContribution);
        const double radius = std::sqrt(std::max(0.0, q_max) * lambda_max) * 1.001 + 1.0;
        const double mx = means[2 * i], my = means[2 * i + 1];
        const auto x0 = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::floor(mx - radius)));
        const auto x1 = std::min<std::int64_t>(width - 1, static_cast<std::int64_t>(std::ceil(mx + radius)));
        const auto y0 = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::floor(my - radius)));
        const auto y1 = std::min<std::int64_t>(height - 1, static_cast<std::int64_t>(std::ceil(my + radius)));
        if (x0 > x1 || y0 > y1) continue;
        for (auto ty = y0 / kTileSize; ty <= y1 / kTileSize; ++ty) {
            for (auto tx = x0 / kTileSize; tx <= x1 / kTileSize; ++tx) {
                bins.tile_lists[static_cast<std::size_t>(ty * bins.tiles_x + tx)].push_back(
                    static_cast<std::int32_t>(i));
            }
        }
    }
    return bins;
}

template <typename scalar_t>
struct Contribution {
    std::int32_t index;
    scalar_t alpha;         // a_i = opacity·g
    scalar_t g;             // Gaussian falloff at the pixel
    scalar_t transmittance; // T_i before this splat
};

/// Walks one pixel's ordered splat list, calling `visit` for each splat that
/// actually contributes. Returns the final transmittance.
template <typename scalar_t, typename Visit>
scalar_t composite_pixel(const std::vector<std::int32_t>& list, scalar_t px, scalar_t py, const scalar_t* means,
                         const scalar_t* conics, const scalar_t* opac, Visit&& visit) {
    scalar_t trans = 1;
    for (auto i : list) {
        const scalar_t dx = px - means[2 * i];
        const scalar_t dy = py - means[2 * i + 1];
        const scalar_t q = conics[3 * i] * dx * dx + 2 * conics[3 * i + 1] * dx * dy + conics[3 * i + 2] * dy * dy;
        const scalar_t g = std::exp(scalar_t(-0.5) * q);
        const scalar_t a = opac[i] * g;
        if (a < scalar_t(kMinContribution)) {
            continue;
        }
        visit(Contribution<scalar_t>{i, a, g, trans});
        trans = trans * (1 - a);
        if (trans < scalar_t(kMinTransmittance)) {
            break;
        }
    }
    return trans;
}

template <typename scalar_t>
void forward_kernel(const SplatBins& bins, const scalar_t* means, const scalar_t* conics, const scalar_t* opac,
                    const scalar_t* feats, std::int64_t channels, std::int64_t width, std::int64_t height,
                    bool tiled, scalar_t* out, scalar_t* alpha) {
    for (std::int64_t y = 0; y < height; ++y) {
        for (std::int64_t x = 0; x < width; ++x) {
            const auto tile = tiled ? (y / kTileSize) * bins.tiles_x + (x / kTileSize) : 0;
            scalar_t* pix = out + (y * width + x) * channels;
            const scalar_t final_t = composite_pixel<scalar_t>(
                bins.tile_lists[static_cast<std::size_t>(tile)], scalar_t(x), scalar_t(y), means, conics, opac,
                [&](const Contribution<scalar_t>& c) {
                    const scalar_t w = c.alpha * c.transmittance;
                    const scalar_t* f = feats + static_cast<std::int64_t>(c.index) * channels;
                    for (std::int64_t k = 0; k < channels; ++k) {
                        pix[k] += f[k] * w;
                    }
                });
            alpha[y * width + x] = 1 - final_t;
        }
    }
}

template <typename scalar_t>
void backward_kernel(const SplatBins& bins, const scalar_t* means, const scalar_t* conics, const scalar_t* opac,
                     const scalar_t* feats, std::int64_t channels, std::int64_t width, std::int64_t height,
                     const scalar_t* grad_out, const scalar_t* grad_alpha, scalar_t* g_means, scalar_t* g_conics,
                     scalar_t* g_opac, scalar_t* g_feats) {
    std::vector<Contribution<scalar_t>> contribs;
    std::vector<scalar_t> acc(static_cast<std::size_t>(channels));
    // Tile-major traversal keeps the gradient reduction order fixed.
    for (std::int64_t ty = 0; ty < bins.tiles_y; ++ty) {
        for (std::int64_t tx = 0; tx < bins.tiles_x; ++tx) {
            const auto& list = bins.tile_lists[static_cast<std::size_t>(ty * bins.tiles_x + tx)];
            if (list.empty()) continue;
            const auto y_end = std::min(height, (ty + 1) * kTileSize);
            const auto x_end = std::min(width, (tx + 1) * kTileSize);
            for (auto y = ty * kTileSize; y < y_end; ++y) {
                for (auto x = tx * kTileSize; x < x_end; ++x) {
                    contribs.clear();
                    composite_pixel<scalar_t>(list, scalar_t(x), scalar_t(y), means, conics, opac,
                                              [&](const Contribution<scalar_t>& c) { contribs.push_back(c); });
                    if (contribs.empty()) continue;
                    const scalar_t* go = grad_out + (y * width + x) * channels;
                    const scalar_t ga = grad_alpha ? grad_alpha[y * width + x] : scalar_t(0);
                    std::fill(acc.begin(), acc.end(), scalar_t(0));
                    scalar_t acc_alpha = 0;
                    // Back to front: `acc` is the composite of everything behind
                    // the current splat, so dC/da_i = T_i·(f_i - acc).
                    for (auto it = contribs.rbegin(); it != contribs.rend(); ++it) {
                        const auto i = static_cast<std::int64_t>(it->index);
                        const scalar_t a = it->alpha;
                        const scalar_t tr = it->transmittance;
                        const scalar_t* f = feats + i * channels;
                        scalar_t* gf = g_feats + i * channels;
                        scalar_t d_a = ga * tr * (1 - acc_alpha);
                        for (std::int64_t k = 0; k < channels; ++k) {
                            d_a += go[k] * tr * (f[k] - acc[k]);
                            gf[k] += go[k] * a * tr;
                            acc[k] = a * f[k] + (1 - a) * acc[k];
                        }
                        acc_alpha = a + (1 - a) * acc_alpha;

                        g_opac[i] += d_a * it->g;
                        const scalar_t d_q = d_a * opac[i] * it->g * scalar_t(-0.5);
                        const scalar_t dx = scalar_t(x) - means[2 * i];
                        const scalar_t dy = scalar_t(y) - means[2 * i + 1];
                        const scalar_t ca = conics[3 * i], cb = conics[3 * i + 1], cc = conics[3 * i + 2];
                        g_conics[3 * i] += d_q * dx * dx;
                        g_conics[3 * i + 1] += d_q * 2 * dx * dy;
                        g_conics[3 * i + 2] += d_q * dy * dy;
                        g_means[2 * i] += d_q * -(2 * ca * dx + 2 * cb * dy);
                        g_means[2 * i + 1] += d_q * -(2 * cb * dx + 2 * cc * dy);
                    }
                }
            }
        }
    }
}

struct RasterInputs {
    torch::Tensor means, conics, opac, feats, depths, valid;
};

RasterInputs prepare(const torch::Tensor& means, const torch::Tensor& conics, const torch::Tensor& opac,
                     const torch::Tensor& feats, const torch::Tensor& depths, const torch::Tensor& valid) {
    const auto n = means.size(0);
    require(means.dim() == 2 && means.size(1) == 2, ErrorCode::ShapeMismatch, "means2d must be N×2");
    require(conics.sizes() == torch::IntArrayRef({n, 3}), ErrorCode::ShapeMismatch, "conics must be N×3");
    require(opac.dim() == 1 && opac.size(0) == n, ErrorCode::ShapeMismatch, "opacities must be N");
    require(feats.dim() == 2 && feats.size(0) == n, ErrorCode::ShapeMismatch, "features must be N×C");
    require(depths.dim() == 1 && depths.size(0) == n && valid.dim() == 1 && valid.size(0) == n,
            ErrorCode::ShapeMismatch, "depths/valid must be N");
    const auto dtype = feats.scalar_type();
    return {means.detach().to(dtype).contiguous(), conics.detach().to(dtype).contiguous(),
            opac.detach().to(dtype).contiguous(), feats.detach().contiguous(), depths.detach().to(dtype).contiguous(),
            valid.detach().to(torch::kBool).contiguous()};
}

std::vector<torch::Tensor> run_forward(const RasterInputs& in, std::int64_t width, std::int64_t height, bool tiled) {
    const auto channels = in.feats.size(1);
    auto out = torch::zeros({height, width, channels}, in.feats.options());
    auto alpha = torch::zeros({height, width}, in.feats.options());
    AT_DISPATCH_FLOATING_TYPES(in.feats.scalar_type(), "rasterize_forward", [&] {
        const auto bins = bin_splats<scalar_t>(in.means.data_ptr<scalar_t>(), in.conics.data_ptr<scalar_t>(),
                                               in.opac.data_ptr<scalar_t>(), in.depths.data_ptr<scalar_t>(),
                                               in.valid.data_ptr<bool>(), in.means.size(0), width, height, tiled);
        forward_kernel<scalar_t>(bins, in.means.data_ptr<scalar_t>(), in.conics.data_ptr<scalar_t>(),
                                 in.opac.data_ptr<scalar_t>(), in.feats.data_ptr<scalar_t>(), channels, width, height,
                                 tiled, out.data_ptr<scalar_t>(), alpha.data_ptr<scalar_t>());
    });
    return {out, alpha};
}

class RasterizeFunction : public torch::autograd::Function<RasterizeFunction> {
public:
    static torch::autograd::variable_list forward(torch::autograd::AutogradContext* ctx, const torch::Tensor& means,
                                                  const torch::Tensor& conics, const torch::Tensor& opac,
                                                  const torch::Tensor& feats, const torch::Tensor& depths,
                                                  const torch::Tensor& valid, std::int64_t width,
                                                  std::int64_t height) {
        auto in = prepare(means, conics, opac, feats, depths, valid);
        auto outputs = run_forward(in, width, height, /*tiled=*/true);
        ctx->save_for_backward({in.means, in.conics, in.opac, in.feats, in.depths, in.valid});
        ctx->saved_data["width"] = width;
        ctx->saved_data["height"] = height;
        ctx->saved_data["means_dtype"] = static_cast<std::int64_t>(means.scalar_type());
        ctx->saved_data["conics_dtype"] = static_cast<std::int64_t>(conics.scalar_type());
        ctx->saved_data["opac_dtype"] = static_cast<std::int64_t>(opac.scalar_type());
        return outputs;
    }

    static torch::autograd::variable_list backward(torch::autograd::AutogradContext* ctx,
                                                   torch::autograd::variable_list grads) {
        const auto saved = ctx->get_saved_variables();
        const auto& means = saved[0];
        const auto& conics = saved[1];
        const auto& opac = saved[2];
        const auto& feats = saved[3];
        const auto& depths = saved[4];
        const auto& valid = saved[5];
        const auto width = ctx->saved_data["width"].toInt();
        const auto height = ctx->saved_data["height"].toInt();
        const auto channels = feats.size(1);

        auto grad_out = grads[0].defined() ? grads[0].to(feats.scalar_type()).contiguous()
                                           : torch::zeros({height, width, channels}, feats.options());
        torch::Tensor grad_alpha;
        if (grads.size() > 1 && grads[1].defined()) {
            grad_alpha = grads[1].to(feats.scalar_type()).contiguous();
        }

        auto g_means = torch::zeros_like(means);
        auto g_conics = torch::zeros_like(conics);
        auto g_opac = torch::zeros_like(opac);
        auto g_feats = torch::zeros_like(feats);
        AT_DISPATCH_FLOATING_TYPES(feats.scalar_type(), "rasterize_backward", [&] {
            const auto bins = bin_splats<scalar_t>(means.data_ptr<scalar_t>(), conics.data_ptr<scalar_t>(),
                                                   opac.data_ptr<scalar_t>(), depths.data_ptr<scalar_t>(),
                                                   valid.data_ptr<bool>(), means.size(0), width, height, true);
            backward_kernel<scalar_t>(bins, means.data_ptr<scalar_t>(), conics.data_ptr<scalar_t>(),
                                      opac.data_ptr<scalar_t>(), feats.data_ptr<scalar_t>(), channels, width, height,
                                      grad_out.data_ptr<scalar_t>(),
                                      grad_alpha.defined() ? grad_alpha.data_ptr<scalar_t>() : nullptr,
                                      g_means.data_ptr<scalar_t>(), g_conics.data_ptr<scalar_t>(),
                                      g_opac.data_ptr<scalar_t>(), g_feats.data_ptr<scalar_t>());
        });
        auto as = [&](const torch::Tensor& t, const char* key) {
            return t.to(static_cast<torch::ScalarType>(ctx->saved_data[key].toInt()));
        };
        return {as(g_means, "means_dtype"), as(g_conics, "conics_dtype"), as(g_opac, "opac_dtype"), g_feats,
                torch::Tensor(), torch::Tensor(), torch::Tensor(), torch::Tensor()};
    }
};

} // namespace

FeatureImage rasterize_screen(const ScreenGaussians& splats, std::int64_t width, std::int64_t height) {
    require(width >= 1 && height >= 1, ErrorCode::InvalidArgument, "image size must be positive");
    auto outputs = RasterizeFunction::apply(splats.means2d, splats.conics, splats.opacities, splats.features,
                                            splats.depths, splats.valid, width, height);
    return {outputs[0], outputs[1]};
}

FeatureImage rasterize_reference(const ScreenGaussians& splats, std::int64_t width, std::int64_t height) {
    auto in = prepare(splats.means2d, splats.conics, splats.opacities, splats.features, splats.depths, splats.valid);
    auto outputs = run_forward(in, width, height, /*tiled=*/false);
    return {outputs[0], outputs[1]};
}

FeatureImage rasterize(const GaussianCloud& cloud, const Camera& camera) {
    return rasterize_screen(project_gaussians(cloud, camera), camera.width, camera.height);
}

} // namespace headsplat
