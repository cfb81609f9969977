#include <cmath>

#include <gtest/gtest.h>

#include "headsplat/objectives.hpp"
#include "support/fixtures.hpp"
#include "support/gradcheck.hpp"

using namespace headsplat;

TEST(LossRgb, Fixtures) {
    auto a = torch::rand({6, 5, 3}, torch::kFloat64);
    EXPECT_EQ(loss_rgb(a, a).item<double>(), 0.0);
    EXPECT_DOUBLE_EQ(loss_rgb(torch::zeros({4, 4, 3}), torch::ones({4, 4, 3})).item<double>(), 1.0);
}

TEST(LossRgb, LoopOracleUsesRgbSlice) {
    auto r = torch::rand({5, 7, 32}, torch::kFloat64);
    auto g = torch::rand({5, 7, 3}, torch::kFloat64);
    double sum = 0.0;
    for (int y = 0; y < 5; ++y)
        for (int x = 0; x < 7; ++x)
            for (int c = 0; c < 3; ++c) sum += std::abs(r[y][x][c].item<double>() - g[y][x][c].item<double>());
    EXPECT_NEAR(loss_rgb(r, g).item<double>(), sum / (5 * 7 * 3), 1e-10);
}

TEST(LossRgb, ShapeMismatch) {
    EXPECT_ERROR_CODE(loss_rgb(torch::zeros({4, 4, 3}), torch::zeros({4, 5, 3})), ErrorCode::ShapeMismatch);
}

TEST(RoiAlign, IntegerBoxIsDirectCrop) {
    auto img = torch::rand({16, 16, 3}, torch::kFloat64);
    PixelBox b{3, 5, 11, 9}; // 8 wide, 4 high
    auto crop_w = roi_align(img, b, 8);
    // With crop = box width the samples land on pixel centres along x.
    PixelBox square{4, 2, 12, 10};
    auto crop = roi_align(img, square, 8);
    EXPECT_LT((crop - img.slice(0, 2, 10).slice(1, 4, 12)).abs().max().item<double>(), 1e-6);
    EXPECT_EQ(crop_w.size(0), 8);
}

TEST(RoiAlign, DegenerateBox) {
    EXPECT_ERROR_CODE(roi_align(torch::zeros({8, 8, 3}), PixelBox{2, 2, 2, 6}), ErrorCode::DegenerateBox);
}

TEST(LossLandmark, LocalizedToBoxes) {
    auto gt = torch::rand({32, 32, 3}, torch::kFloat64);
    auto pred = gt.clone();
    // Shift content inside the mouth box only.
    pred.slice(0, 22, 28).slice(1, 10, 22) = gt.slice(0, 22, 28).slice(1, 11, 23);
    std::vector<RegionBox> mouth{{RegionKind::Mouth, {10, 22, 22, 28}}};
    std::vector<RegionBox> eyes{{RegionKind::Eyes, {4, 4, 28, 12}}};
    EXPECT_GT(loss_landmark(pred, gt, mouth, 16).item<double>(), 0.0);
    EXPECT_EQ(loss_landmark(pred, gt, eyes, 16).item<double>(), 0.0);
    EXPECT_EQ(loss_landmark(gt, gt, mouth).item<double>(), 0.0);
    EXPECT_ERROR_CODE(loss_landmark(pred, gt, {}), ErrorCode::MissingLandmarks);
}

TEST(LossLandmark, Gradcheck) {
    auto gt = torch::rand({8, 8, 3}, torch::kFloat64);
    std::vector<RegionBox> boxes{{RegionKind::Eyes, {0.5, 1.2, 7.0, 3.9}}, {RegionKind::Mouth, {2.2, 4.1, 6.4, 7.5}}};
    auto r = testkit::gradcheck(
        [&](const std::vector<torch::Tensor>& in) { return loss_landmark(in[0], gt, boxes, 5); },
        {torch::rand({8, 8, 3}, torch::kFloat64)});
    EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(Perceptual, IdentitySymmetryMonotone) {
    RandomConvExtractor ex(7, torch::kFloat64);
    auto a = torch::rand({32, 32, 3}, torch::kFloat64);
    auto b = torch::rand({32, 32, 3}, torch::kFloat64);
    EXPECT_EQ(loss_perceptual(a, a, &ex).item<double>(), 0.0);
    EXPECT_NEAR(loss_perceptual(a, b, &ex).item<double>(), loss_perceptual(b, a, &ex).item<double>(), 1e-9);
    auto gen = at::detail::createCPUGenerator(3);
    auto noise = torch::randn({32, 32, 3}, gen, torch::TensorOptions().dtype(torch::kFloat64));
    double prev = 0.0;
    for (double sigma : {0.05, 0.1, 0.2}) {
        const double d = loss_perceptual(a + sigma * noise, a, &ex).item<double>();
        EXPECT_GT(d, prev) << sigma;
        prev = d;
    }
    EXPECT_ERROR_CODE(loss_perceptual(a, b, nullptr), ErrorCode::NoExtractor);
}

TEST(LossTerms, WeightedTotal) {
    LossTerms t;
    t.add("rgb", torch::tensor(0.5), 1.0);
    t.add("lpips", torch::tensor(2.0), 0.1);
    t.note("adv_d", 0.7);
    auto r = t.report();
    EXPECT_NEAR(r.total, 0.7, 1e-7);
    EXPECT_NEAR(t.total().item<double>(), 0.7, 1e-7);
    EXPECT_EQ(r.weights.at("lpips"), 0.1);
    EXPECT_NEAR(r.values.at("adv_d"), 0.7, 1e-12);
}

TEST(Cgan, ConstantLogitGivesLn2) {
    Discriminator d;
    {
        torch::NoGradGuard g;
        for (auto& p : d->parameters()) p.zero_();
    }
    auto l = loss_cgan(d, torch::rand({16, 16, 3}), torch::rand({16, 16, 3}), torch::rand({16, 16, 3}));
    EXPECT_NEAR(l.g_loss.item<double>(), std::log(2.0), 1e-6);
    EXPECT_NEAR(l.d_loss.item<double>(), std::log(2.0), 1e-6);
}

TEST(Cgan, DiscriminatorLearnsTrivialFixture) {
    torch::manual_seed(0);
    Discriminator d;
    torch::optim::Adam opt(d->parameters(), torch::optim::AdamOptions(2e-4).betas({0.0, 0.99}));
    auto real = torch::zeros({16, 16, 3});
    auto fake = torch::ones({16, 16, 3});
    auto uv = torch::rand({16, 16, 3});
    double first = 0.0, last = 0.0;
    for (int i = 0; i < 200; ++i) {
        auto l = loss_cgan(d, fake, real, uv, {true, static_cast<std::uint64_t>(i)});
        opt.zero_grad();
        l.d_loss.backward();
        opt.step();
        if (i == 0) first = l.d_loss.item<double>();
        last = l.d_loss.item<double>();
    }
    EXPECT_LT(last, first);
}

TEST(Cgan, AugmentationIsShared) {
    auto a = torch::rand({1, 3, 16, 16});
    for (std::uint64_t s = 0; s < 8; ++s) {
        auto out = augment_pair({a, a.clone()}, s);
        EXPECT_TRUE(torch::equal(out[0], out[1]));
    }
}
