#include <cmath>

#include <gtest/gtest.h>

#include "headsplat/feature_splatter.hpp"
#include "support/fixtures.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"

using namespace headsplat;

namespace {

Camera axis_camera(double f, std::int64_t res) {
    Camera c;
    c.fx = c.fy = f;
    c.width = c.height = res;
    c.cx = c.cy = 0.5 * double(res - 1);
    return c; // identity world-to-camera: looks down +z
}

GaussianCloud single(const Eigen::Vector3d& mu, double log_scale, double logit, std::int64_t channels,
                     double feature) {
    GaussianCloud g;
    g.positions = torch::tensor({{mu.x(), mu.y(), mu.z()}}, torch::kFloat64);
    g.rotations = torch::tensor({{1.0, 0.0, 0.0, 0.0}}, torch::kFloat64);
    g.log_scales = torch::full({1, 3}, log_scale, torch::kFloat64);
    g.opacity_logits = torch::full({1, 1}, logit, torch::kFloat64);
    g.features = torch::full({1, channels}, feature, torch::kFloat64);
    return g;
}

GaussianCloud concat(const GaussianCloud& a, const GaussianCloud& b) {
    return {torch::cat({a.positions, b.positions}), torch::cat({a.rotations, b.rotations}),
            torch::cat({a.log_scales, b.log_scales}), torch::cat({a.opacity_logits, b.opacity_logits}),
            torch::cat({a.features, b.features})};
}

} // namespace

TEST(Projection, AxisPoint) {
    auto cam = axis_camera(50, 33);
    auto p = project_gaussian(cam, {0, 0, 4}, Eigen::Matrix3d::Identity() * 0.01);
    ASSERT_TRUE(p);
    EXPECT_NEAR(p->mean.x(), cam.cx, 1e-12);
    EXPECT_NEAR(p->mean.y(), cam.cy, 1e-12);
    const double want = std::pow(50 * 0.1 / 4, 2) + 0.3;
    EXPECT_NEAR(p->cov(0, 0), want, 1e-6);
    EXPECT_NEAR(p->cov(1, 1), want, 1e-6);
    EXPECT_NEAR(p->cov(0, 1), 0.0, 1e-12);
}

TEST(Projection, NearPlaneCulls) {
    auto cam = axis_camera(50, 33);
    EXPECT_FALSE(project_gaussian(cam, {0, 0, 0.01}, Eigen::Matrix3d::Identity()));
    EXPECT_FALSE(project_gaussian(cam, {0, 0, -2}, Eigen::Matrix3d::Identity()));
}

TEST(Rasterize, SingleSplatAtCenter) {
    auto cam = axis_camera(40, 9); // centre pixel (4,4)
    const double logit = std::log(0.999 / 0.001);
    auto g = single({0, 0, 5}, std::log(2.0), logit, 3, 0.7);
    auto img = rasterize(g, cam);
    EXPECT_NEAR(img.features[4][4][0].item<double>(), 0.7 * 0.999, 1e-3);
    EXPECT_NEAR(img.alpha[4][4].item<double>(), 0.999, 1e-3);
}

TEST(Rasterize, TwoTermCompositing) {
    auto cam = axis_camera(20, 7);
    auto near = single({0.02, -0.01, 1}, std::log(0.05), 0.3, 2, 0.9);
    auto far = single({-0.03, 0.04, 2}, std::log(0.1), 1.1, 2, 0.2);
    auto cloud = concat(far, near); // index order opposite to depth order
    auto img = rasterize(cloud, cam);
    auto oracle = testkit::composite_oracle(cloud, cam);
    // Independent two-term formula at the centre pixel.
    auto alpha_g = [&](const GaussianCloud& g) {
        const Eigen::Vector3d mu(g.positions[0][0].item<double>(), g.positions[0][1].item<double>(),
                                 g.positions[0][2].item<double>());
        const double s = std::exp(g.log_scales[0][0].item<double>());
        auto p = project_gaussian(cam, mu, Eigen::Matrix3d::Identity() * s * s);
        const Eigen::Vector2d d = Eigen::Vector2d(3, 3) - p->mean;
        const double o = 1 / (1 + std::exp(-g.opacity_logits[0][0].item<double>()));
        return o * std::exp(-0.5 * d.dot(p->cov.inverse() * d));
    };
    const double a1 = alpha_g(near);
    const double a2 = alpha_g(far);
    const double want = 0.9 * a1 + 0.2 * a2 * (1 - a1);
    EXPECT_NEAR(img.features[3][3][0].item<double>(), want, 1e-8);
    for (std::int64_t y = 0; y < 7; ++y)
        for (std::int64_t x = 0; x < 7; ++x)
            EXPECT_NEAR(img.features[y][x][1].item<double>(), oracle.features[static_cast<std::size_t>((y * 7 + x) * 2 + 1)],
                        1e-8);
}

TEST(Rasterize, BehindCameraGivesEmptyImage) {
    auto cam = axis_camera(20, 6);
    auto g = single({0, 0, -1}, 0.0, 3.0, 4, 1.0);
    auto img = rasterize(g, cam);
    EXPECT_EQ(img.features.abs().sum().item<double>(), 0.0);
    EXPECT_EQ(img.alpha.abs().sum().item<double>(), 0.0);
}

TEST(Rasterize, MatchesOracleOnRandomScenes) {
    for (std::uint64_t s = 0; s < 10; ++s) {
        auto cloud = testkit::random_scene(6, 3, s);
        auto cam = testkit::test_camera(20);
        auto img = rasterize(cloud, cam);
        auto oracle = testkit::composite_oracle(cloud, cam);
        auto f = img.features.contiguous();
        for (std::int64_t i = 0; i < f.numel(); ++i) {
            ASSERT_NEAR(f.view({-1})[i].item<double>(), oracle.features[static_cast<std::size_t>(i)], 1e-8);
        }
        EXPECT_LE(img.alpha.max().item<double>(), 1.0 + 1e-6);
    }
}

TEST(Rasterize, TiledMatchesReference) {
    auto cloud = testkit::random_scene(40, 4, 3, 1.0);
    auto cam = testkit::test_camera(40);
    auto splats = project_gaussians(cloud, cam);
    auto tiled = rasterize_screen(splats, 40, 40);
    auto ref = rasterize_reference(splats, 40, 40);
    EXPECT_LT((tiled.features - ref.features).abs().max().item<double>(), 1e-12);
    EXPECT_LT((tiled.alpha - ref.alpha).abs().max().item<double>(), 1e-12);
}

TEST(RasterizeGrad, FeatureGradientIsCompositingWeight) {
    auto cam = axis_camera(20, 5);
    auto a = single({0.01, 0.0, 1}, std::log(0.08), 0.5, 1, 0.3);
    auto b = single({-0.02, 0.01, 2}, std::log(0.12), 1.5, 1, 0.6);
    auto cloud = concat(a, b);
    cloud.features.requires_grad_(true);
    auto img = rasterize(cloud, cam);
    img.features[2][2][0].backward();
    auto oracle_weight = [&](const GaussianCloud& g, double t) {
        const Eigen::Vector3d mu(g.positions[0][0].item<double>(), g.positions[0][1].item<double>(),
                                 g.positions[0][2].item<double>());
        const double s = std::exp(g.log_scales[0][0].item<double>());
        auto p = project_gaussian(cam, mu, Eigen::Matrix3d::Identity() * s * s);
        const Eigen::Vector2d d = Eigen::Vector2d(2, 2) - p->mean;
        const double o = 1 / (1 + std::exp(-g.opacity_logits[0][0].item<double>()));
        const double alpha = o * std::exp(-0.5 * d.dot(p->cov.inverse() * d));
        return std::make_pair(alpha * t, alpha);
    };
    const auto [w0, a0] = oracle_weight(a, 1.0);
    const auto [w1, a1] = oracle_weight(b, 1.0 - a0);
    (void)a1;
    EXPECT_NEAR(cloud.features.grad()[0][0].item<double>(), w0, 1e-8);
    EXPECT_NEAR(cloud.features.grad()[1][0].item<double>(), w1, 1e-8);
}

TEST(RasterizeGrad, PositionFiniteDifferences) {
    auto cloud = testkit::random_scene(4, 3, 21);
    auto cam = testkit::test_camera(8);
    auto w = torch::randn({8, 8, 3}, torch::kFloat64);
    auto r = testkit::gradcheck(
        [&](const std::vector<torch::Tensor>& in) {
            GaussianCloud c = cloud;
            c.positions = in[0];
            return (rasterize(c, cam).features * w).sum();
        },
        {cloud.positions});
    EXPECT_LT(r.max_rel_error, 1e-3);
}

TEST(RasterizeGrad, ZeroOpacityGetsNoFeatureGradient) {
    auto cloud = testkit::random_scene(5, 3, 4);
    cloud.opacity_logits[2][0] = -40.0;
    cloud.features.requires_grad_(true);
    auto cam = testkit::test_camera(10);
    rasterize(cloud, cam).features.sum().backward();
    EXPECT_EQ(cloud.features.grad()[2].abs().sum().item<double>(), 0.0);
    EXPECT_GT(cloud.features.grad().abs().sum().item<double>(), 0.0);
}

TEST(Camera, LookAtConvention) {
    auto cam = Camera::look_at({0, 0, 3.5}, {0, 0, 0}, {0, 1, 0}, 64, 64, 64);
    cam.validate();
    // World +y (up) projects to smaller row index.
    auto up = project_gaussian(cam, {0, 0.5, 0}, Eigen::Matrix3d::Identity() * 1e-4);
    ASSERT_TRUE(up);
    EXPECT_LT(up->mean.y(), cam.cy);
    EXPECT_NEAR(up->depth, 3.5, 1e-12);
}
