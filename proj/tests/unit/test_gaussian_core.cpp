#include <cmath>
#include <fstream>

#include <gtest/gtest.h>

#include "headsplat/gaussian_core.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

using namespace headsplat;

namespace {

TriangleMesh two_triangles(double scale_second) {
    TriangleMesh m;
    m.vertices = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {5, 0, 0}, {5 + scale_second, 0, 0}, {5, scale_second, 0}};
    m.faces = {{0, 1, 2}, {3, 4, 5}};
    return m;
}

} // namespace

TEST(InitFromMesh, PointsLieOnTheTriangle) {
    TriangleMesh m;
    m.vertices = {{0, 0, 1}, {1, 0, 1}, {0, 1, 1}};
    m.faces = {{0, 1, 2}};
    auto c = init_from_mesh(m, 1000, 3, 32, torch::kFloat64);
    auto p = c.positions;
    EXPECT_LT((p.select(1, 2) - 1.0).abs().max().item<double>(), 1e-6);
    EXPECT_GE(p.select(1, 0).min().item<double>(), -1e-12);
    EXPECT_GE(p.select(1, 1).min().item<double>(), -1e-12);
    EXPECT_LE((p.select(1, 0) + p.select(1, 1)).max().item<double>(), 1.0 + 1e-12);
}

TEST(InitFromMesh, AreaProportionalCounts) {
    // Second face area = 3 × first (side sqrt(3)).
    auto m = two_triangles(std::sqrt(3.0));
    const std::int64_t n = 20000;
    auto c = init_from_mesh(m, n, 11, 4);
    const auto on_second = (c.positions.select(1, 0) > 2.5).sum().item<std::int64_t>();
    // Independent area computation by cross products.
    auto area = [&](int f) {
        const auto& t = m.faces[static_cast<std::size_t>(f)];
        return 0.5 * (m.vertices[t[1]] - m.vertices[t[0]]).cross(m.vertices[t[2]] - m.vertices[t[0]]).norm();
    };
    const double p = area(1) / (area(0) + area(1));
    EXPECT_NEAR(p, 0.75, 1e-12);
    const double sigma = std::sqrt(n * p * (1 - p));
    EXPECT_LT(std::abs(double(on_second) - n * p), 3 * sigma);
}

TEST(InitFromMesh, SkipsZeroAreaFaces) {
    TriangleMesh m;
    m.vertices = {{0, 0, 0}, {1, 0, 0}, {2, 0, 0}, {0, 0, 3}, {1, 0, 3}, {0, 1, 3}};
    m.faces = {{0, 1, 2}, {3, 4, 5}};
    auto c = init_from_mesh(m, 100, 0, 4, torch::kFloat64);
    EXPECT_LT((c.positions.select(1, 2) - 3.0).abs().max().item<double>(), 1e-12);
}

TEST(InitFromMesh, AllDegenerateThrows) {
    TriangleMesh m;
    m.vertices = {{0, 0, 0}, {1, 0, 0}, {2, 0, 0}};
    m.faces = {{0, 1, 2}};
    EXPECT_ERROR_CODE(init_from_mesh(m, 10, 0), ErrorCode::AllFacesDegenerate);
}

TEST(InitFromMesh, DefaultsAndDeterminism) {
    auto m = two_triangles(1.0);
    auto a = init_from_mesh(m, 50, 9);
    auto b = init_from_mesh(m, 50, 9);
    EXPECT_TRUE(torch::equal(a.positions, b.positions));
    EXPECT_EQ(a.channels(), 32);
    EXPECT_TRUE(torch::allclose(a.opacities(), torch::full({50, 1}, 0.5)));
    EXPECT_TRUE(torch::equal(a.colors(), torch::full({50, 3}, 0.5f)));
    EXPECT_EQ(a.features.slice(1, 3).abs().sum().item<float>(), 0.0f);
    EXPECT_TRUE((a.scales() > 0).all().item<bool>());
}

TEST(Quaternions, Normalization) {
    auto q = torch::tensor({{2.0, 0.0, 0.0, 0.0}, {0.0, 0.0, 0.0, 0.0}}, torch::kFloat64);
    auto n = normalize_quaternions(q);
    EXPECT_TRUE(torch::equal(n, torch::tensor({{1.0, 0.0, 0.0, 0.0}, {1.0, 0.0, 0.0, 0.0}}, torch::kFloat64)));
    auto r = torch::randn({200, 4}, torch::kFloat64);
    auto nr = normalize_quaternions(r);
    EXPECT_LT((nr.norm(2, 1) - 1).abs().max().item<double>(), 1e-6);
}

TEST(Quaternions, MatchEigen) {
    auto q = normalize_quaternions(torch::randn({20, 4}, torch::kFloat64));
    auto r = quaternion_to_matrix(q);
    for (int i = 0; i < 20; ++i) {
        Eigen::Quaterniond e(q[i][0].item<double>(), q[i][1].item<double>(), q[i][2].item<double>(),
                             q[i][3].item<double>());
        const Eigen::Matrix3d m = e.toRotationMatrix();
        for (int a = 0; a < 3; ++a)
            for (int b = 0; b < 3; ++b) EXPECT_NEAR(r[i][a][b].item<double>(), m(a, b), 1e-12);
    }
    auto a = normalize_quaternions(torch::randn({5, 4}, torch::kFloat64));
    auto b = normalize_quaternions(torch::randn({5, 4}, torch::kFloat64));
    auto ab = quaternion_multiply(a, b);
    for (int i = 0; i < 5; ++i) {
        Eigen::Quaterniond ea(a[i][0].item<double>(), a[i][1].item<double>(), a[i][2].item<double>(),
                              a[i][3].item<double>());
        Eigen::Quaterniond eb(b[i][0].item<double>(), b[i][1].item<double>(), b[i][2].item<double>(),
                              b[i][3].item<double>());
        auto e = ea * eb;
        EXPECT_NEAR(ab[i][0].item<double>(), e.w(), 1e-12);
        EXPECT_NEAR(ab[i][1].item<double>(), e.x(), 1e-12);
        EXPECT_NEAR(ab[i][2].item<double>(), e.y(), 1e-12);
        EXPECT_NEAR(ab[i][3].item<double>(), e.z(), 1e-12);
    }
}

TEST(Covariance, Fixtures) {
    GaussianCloud c;
    c.positions = torch::zeros({2, 3}, torch::kFloat64);
    c.rotations = torch::tensor({{1.0, 0.0, 0.0, 0.0}, {1.0, 0.0, 0.0, 0.0}}, torch::kFloat64);
    c.log_scales = torch::tensor({{0.0, 0.0, 0.0}, {std::log(2.0), 0.0, 0.0}}, torch::kFloat64);
    c.opacity_logits = torch::zeros({2, 1}, torch::kFloat64);
    c.features = torch::zeros({2, 4}, torch::kFloat64);
    EXPECT_TRUE(covariance(c, 0).isApprox(Eigen::Matrix3d::Identity(), 1e-14));
    EXPECT_TRUE(covariance(c, 1).isApprox(Eigen::Vector3d(4, 1, 1).asDiagonal().toDenseMatrix(), 1e-14));
}

TEST(Covariance, MatchesEigenAssembly) {
    auto c = testkit::random_scene(30, 4, 5);
    auto batched = covariances(c.rotations, c.log_scales);
    for (int i = 0; i < 30; ++i) {
        Eigen::Vector4d q(c.rotations[i][0].item<double>(), c.rotations[i][1].item<double>(),
                          c.rotations[i][2].item<double>(), c.rotations[i][3].item<double>());
        Eigen::Vector3d s(c.log_scales[i][0].item<double>(), c.log_scales[i][1].item<double>(),
                          c.log_scales[i][2].item<double>());
        const Eigen::Matrix3d want = testkit::oracle_covariance(q, s);
        const Eigen::Matrix3d got = covariance(c, i);
        EXPECT_LT((want - got).cwiseAbs().maxCoeff(), 1e-10);
        EXPECT_LT((got - got.transpose()).cwiseAbs().maxCoeff(), 1e-15);
        Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(got);
        EXPECT_GE(es.eigenvalues().minCoeff(), -1e-15);
        for (int a = 0; a < 3; ++a)
            for (int b = 0; b < 3; ++b) EXPECT_NEAR(batched[i][a][b].item<double>(), want(a, b), 1e-10);
    }
}

TEST(GaussianCloud, ValidateShapes) {
    auto c = testkit::random_scene(4, 4, 1);
    c.validate();
    auto bad = c;
    bad.rotations = torch::zeros({3, 4}, torch::kFloat64);
    EXPECT_ERROR_CODE(bad.validate(), ErrorCode::ShapeMismatch);
}

TEST(GaussianCloud, TensorRoundTrip) {
    auto c = testkit::random_scene(6, 8, 2);
    TensorStore s;
    s.tensors = c.to_tensors("cloud.");
    auto back = GaussianCloud::from_tensors(s, "cloud.");
    EXPECT_TRUE(torch::equal(back.features, c.features));
    EXPECT_TRUE(torch::equal(back.rotations, c.rotations));
}

TEST(Obj, RoundTrip) {
    testkit::TempDir dir;
    TriangleMesh m;
    m.vertices = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
    m.faces = {{0, 1, 2}, {0, 2, 3}};
    write_obj(dir / "m.obj", m);
    auto back = read_obj(dir / "m.obj");
    ASSERT_EQ(back.faces.size(), 2u);
    EXPECT_EQ(back.faces[1], m.faces[1]);
    EXPECT_NEAR(back.total_area(), 1.0, 1e-12);
}
