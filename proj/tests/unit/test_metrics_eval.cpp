#include <cmath>
#include <fstream>

#include <gtest/gtest.h>

#include "headsplat/image_io.hpp"
#include "headsplat/metrics_eval.hpp"
#include "support/fixtures.hpp"

using namespace headsplat;

TEST(Psnr, Fixtures) {
    auto a = torch::rand({16, 16, 3}, torch::kFloat64);
    EXPECT_EQ(psnr(a, a), 99.0);
    auto b = torch::full({16, 16, 3}, 0.5, torch::kFloat64);
    EXPECT_NEAR(psnr(b, b + 0.1), 20.0, 1e-9);
}

TEST(Ssim, Fixtures) {
    auto a = torch::rand({24, 24, 3}, torch::kFloat64);
    auto b = torch::rand({24, 24, 3}, torch::kFloat64);
    EXPECT_NEAR(ssim(a, a), 1.0, 1e-12);
    EXPECT_NEAR(ssim(a, b), ssim(b, a), 1e-9);
    auto yy = torch::arange(24).view({24, 1}).expand({24, 24});
    auto xx = torch::arange(24).view({1, 24}).expand({24, 24});
    auto checker = ((yy + xx) % 2).to(torch::kFloat64).unsqueeze(2).expand({24, 24, 3}).contiguous();
    EXPECT_LT(ssim(checker, 1 - checker), 0.05);
}

TEST(Lpips, IdentityAndNoiseSweep) {
    RandomConvExtractor ex;
    auto a = torch::rand({32, 32, 3});
    EXPECT_EQ(lpips(a, a, &ex), 0.0);
    torch::manual_seed(2);
    auto n = torch::randn({32, 32, 3});
    EXPECT_LT(lpips(a + 0.05 * n, a, &ex), lpips(a + 0.1 * n, a, &ex));
    EXPECT_LT(lpips(a + 0.1 * n, a, &ex), lpips(a + 0.2 * n, a, &ex));
}

TEST(Flmd, Fixtures) {
    Landmarks a{{1, 2}, {10, 3}, {4, 4}};
    EXPECT_EQ(f_lmd(a, a), 0.0);
    Landmarks b;
    for (auto p : a) b.emplace_back(p + Eigen::Vector2d(3, 4));
    EXPECT_NEAR(f_lmd(a, b), 5.0, 1e-12);
    Landmarks c{{0.3, 7.1}, {2.2, -1}, {9, 9}};
    double sum = 0.0;
    for (int i = 0; i < 3; ++i) sum += std::hypot(a[i].x() - c[i].x(), a[i].y() - c[i].y());
    EXPECT_NEAR(f_lmd(a, c), sum / 3, 1e-10);
}

TEST(Sharpness, Fixtures) {
    auto a = torch::rand({16, 16, 3}, torch::kFloat64);
    EXPECT_EQ(sharpness_difference(a, a), 0.0);
    EXPECT_EQ(sharpness_difference(torch::full({8, 8, 3}, 0.2), torch::full({8, 8, 3}, 0.9)), 0.0);
    auto edge = torch::zeros({16, 16, 3}, torch::kFloat64);
    edge.slice(1, 8) = 1.0;
    auto blurred = torch::avg_pool2d(edge.permute({2, 0, 1}).unsqueeze(0), 5, 1, 2, false, false)
                       .squeeze(0)
                       .permute({1, 2, 0});
    EXPECT_GT(sharpness_difference(edge, blurred), 0.0);
}

TEST(Report, TableColumnsAndScaling) {
    MetricReport r;
    r.method = "Ours";
    r.dataset = "A";
    r.psnr = 34.43;
    r.lpips = 0.1314;
    r.sd = 0.338;
    r.flmd = 2.42;
    const auto t = markdown_table({r});
    EXPECT_NE(t.find("| Method | F-LMD↓ | SD(×10⁻¹)↓ | PSNR↑ | LPIPS(×10²)↓ |"), std::string::npos);
    EXPECT_NE(t.find("34.43"), std::string::npos);
    EXPECT_NE(t.find("13.14"), std::string::npos);
    EXPECT_NE(t.find("3.38"), std::string::npos);
    EXPECT_NE(t.find("2.42"), std::string::npos);
}

TEST(Evaluate, FrameCountMismatch) {
    std::vector<torch::Tensor> a{torch::rand({16, 16, 3})};
    std::vector<torch::Tensor> b{torch::rand({16, 16, 3}), torch::rand({16, 16, 3})};
    EvalOptions o;
    o.metrics = {"psnr"};
    EXPECT_ERROR_CODE(evaluate(a, b, {}, o, nullptr, nullptr), ErrorCode::FrameCountMismatch);
}

TEST(Evaluate, IdenticalDirectories) {
    testkit::TempDir dir;
    LandmarkBoxes boxes{{2, 2, 14, 8}, {4, 10, 12, 15}};
    nlohmann::json jb = nlohmann::json::array();
    for (int i = 0; i < 3; ++i) {
        auto img = torch::rand({16, 16, 3});
        img.slice(0, 11, 13).slice(1, 6, 9) = 0.0;
        char name[32];
        std::snprintf(name, sizeof name, "%06d.png", i);
        write_png(dir / "a" / name, img);
        write_png(dir / "b" / name, img);
        jb.push_back({{"eyes", {2, 2, 14, 8}}, {"mouth", {4, 10, 12, 15}}});
    }
    std::ofstream(dir / "b" / "boxes.json") << jb.dump();
    RandomConvExtractor ex;
    DarkBlobLandmarks lm;
    auto r = evaluate_dirs(dir / "a", dir / "b", EvalOptions{}, &ex, &lm);
    EXPECT_EQ(r.psnr, 99.0);
    EXPECT_NEAR(r.ssim, 1.0, 1e-12);
    EXPECT_EQ(r.flmd, 0.0);
    EXPECT_EQ(r.sd, 0.0);
    EXPECT_EQ(r.lpips, 0.0);
    (void)boxes;
}
