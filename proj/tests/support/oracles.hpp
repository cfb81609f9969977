#pragma once

// Scalar reference implementations written independently of the library
// kernels. They only share the public constants and data types.

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <numeric>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Geometry>
#include <ATen/CPUGeneratorImpl.h>
#include <torch/torch.h>

#include "headsplat/feature_splatter.hpp"
#include "headsplat/gaussian_core.hpp"

namespace headsplat::testkit {

/// R·diag(exp(2·log_s))·Rᵀ with R from Eigen's quaternion.
inline Eigen::Matrix3d oracle_covariance(const Eigen::Vector4d& q_wxyz, const Eigen::Vector3d& log_scale) {
    Eigen::Quaterniond q(q_wxyz[0], q_wxyz[1], q_wxyz[2], q_wxyz[3]);
    q.normalize();
    const Eigen::Matrix3d r = q.toRotationMatrix();
    const Eigen::Vector3d s = log_scale.array().exp();
    return r * s.cwiseAbs2().asDiagonal() * r.transpose();
}

struct OracleImage {
    std::int64_t width = 0;
    std::int64_t height = 0;
    std::int64_t channels = 0;
    std::vector<double> features; // (y·W + x)·C + c
    std::vector<double> alpha;
    std::vector<double> weight_sum; // Σ a_i·T_i per pixel
};

/// Per-pixel front-to-back compositing straight from the definition: project
/// each Gaussian (pinhole + perspective Jacobian, +0.3 px² dilation), order
/// by camera depth (ties by index), then per pixel accumulate a_i·T_i·f_i,
/// skipping a_i < 1/255 and stopping once T < 1e-4.
inline OracleImage composite_oracle(const GaussianCloud& cloud, const Camera& cam) {
    auto pos = cloud.positions.to(torch::kFloat64).contiguous();
    auto rot = cloud.rotations.to(torch::kFloat64).contiguous();
    auto ls = cloud.log_scales.to(torch::kFloat64).contiguous();
    auto op = cloud.opacity_logits.to(torch::kFloat64).contiguous();
    auto ft = cloud.features.to(torch::kFloat64).contiguous();
    const auto n = cloud.size();
    const auto c = cloud.channels();

    struct Splat {
        std::int64_t index;
        double depth;
        Eigen::Vector2d mean;
        Eigen::Matrix2d inv;
        double opacity;
    };
    std::vector<Splat> splats;
    const Eigen::Matrix3d w = cam.world_to_camera.topLeftCorner<3, 3>();
    const Eigen::Vector3d t = cam.world_to_camera.topRightCorner<3, 1>();
    for (std::int64_t i = 0; i < n; ++i) {
        Eigen::Vector3d mu(pos[i][0].item<double>(), pos[i][1].item<double>(), pos[i][2].item<double>());
        Eigen::Vector4d q(rot[i][0].item<double>(), rot[i][1].item<double>(), rot[i][2].item<double>(),
                          rot[i][3].item<double>());
        Eigen::Vector3d s(ls[i][0].item<double>(), ls[i][1].item<double>(), ls[i][2].item<double>());
        const Eigen::Vector3d p = w * mu + t;
        if (p.z() <= kNearPlane) continue;
        Eigen::Matrix<double, 2, 3> j;
        j << cam.fx / p.z(), 0, -cam.fx * p.x() / (p.z() * p.z()), 0, cam.fy / p.z(), -cam.fy * p.y() / (p.z() * p.z());
        const Eigen::Matrix2d cov2 =
            j * w * oracle_covariance(q, s) * w.transpose() * j.transpose() + 0.3 * Eigen::Matrix2d::Identity();
        const double o = 1.0 / (1.0 + std::exp(-op[i][0].item<double>()));
        splats.push_back({i, p.z(), {cam.fx * p.x() / p.z() + cam.cx, cam.fy * p.y() / p.z() + cam.cy},
                          cov2.inverse(), o});
    }
    std::stable_sort(splats.begin(), splats.end(), [](const Splat& a, const Splat& b) { return a.depth < b.depth; });

    OracleImage img;
    img.width = cam.width;
    img.height = cam.height;
    img.channels = c;
    img.features.assign(static_cast<std::size_t>(cam.width * cam.height * c), 0.0);
    img.alpha.assign(static_cast<std::size_t>(cam.width * cam.height), 0.0);
    img.weight_sum.assign(img.alpha.size(), 0.0);
    auto facc = ft.accessor<double, 2>();
    for (std::int64_t y = 0; y < cam.height; ++y) {
        for (std::int64_t x = 0; x < cam.width; ++x) {
            const auto pix = static_cast<std::size_t>(y * cam.width + x);
            double tr = 1.0;
            for (const auto& s : splats) {
                const Eigen::Vector2d d = Eigen::Vector2d(double(x), double(y)) - s.mean;
                const double a = s.opacity * std::exp(-0.5 * d.dot(s.inv * d));
                if (a < 1.0 / 255.0) continue;
                for (std::int64_t k = 0; k < c; ++k) {
                    img.features[pix * static_cast<std::size_t>(c) + static_cast<std::size_t>(k)] +=
                        facc[s.index][k] * a * tr;
                }
                img.weight_sum[pix] += a * tr;
                tr *= 1.0 - a;
                if (tr < 1e-4) break;
            }
            img.alpha[pix] = 1.0 - tr;
        }
    }
    return img;
}

/// Closed-form bilinear interpolation on an R×R grid with nodes at integer
/// grid coordinates; (u, v) are already in grid units.
inline double bilinear_oracle(const std::function<double(std::int64_t, std::int64_t)>& node, std::int64_t res,
                              double u, double v) {
    u = std::clamp(u, 0.0, double(res - 1));
    v = std::clamp(v, 0.0, double(res - 1));
    const auto i = std::min<std::int64_t>(static_cast<std::int64_t>(std::floor(u)), res - 2);
    const auto j = std::min<std::int64_t>(static_cast<std::int64_t>(std::floor(v)), res - 2);
    const double a = u - double(i);
    const double b = v - double(j);
    return (1 - a) * (1 - b) * node(i, j) + a * (1 - b) * node(i + 1, j) + (1 - a) * b * node(i, j + 1) +
           a * b * node(i + 1, j + 1);
}

/// Random cloud of `n` Gaussians in front of a look-at camera at z = 3.5,
/// sized to cover a good part of a `res`×`res` image.
inline GaussianCloud random_scene(std::int64_t n, std::int64_t channels, std::uint64_t seed, double spread = 0.5,
                                  torch::ScalarType dtype = torch::kFloat64) {
    auto gen = at::detail::createCPUGenerator(seed);
    auto opts = torch::TensorOptions().dtype(dtype);
    GaussianCloud c;
    c.positions = (torch::rand({n, 3}, gen, opts) * 2 - 1) * spread;
    c.rotations = torch::randn({n, 4}, gen, opts);
    c.log_scales = torch::rand({n, 3}, gen, opts) * 0.8 - 2.0;
    c.opacity_logits = torch::rand({n, 1}, gen, opts) * 3 - 0.5;
    c.features = torch::rand({n, channels}, gen, opts);
    return c;
}

inline Camera test_camera(std::int64_t res, double focal_scale = 1.2) {
    return Camera::look_at({0.0, 0.0, 3.5}, {0.0, 0.0, 0.0}, {0.0, 1.0, 0.0}, focal_scale * double(res) * 1.75, res,
                           res);
}

} // namespace headsplat::testkit
