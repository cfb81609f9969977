#include <fstream>

#include <gtest/gtest.h>

#include "headsplat/config.hpp"
#include "headsplat/optimizer.hpp"
#include "support/fixtures.hpp"

using namespace headsplat;

TEST(Config, Presets) {
    auto desk = TrainConfig::desk();
    desk.validate();
    EXPECT_EQ(iteration_plan(desk), "1k/1k/5k");
    auto paper = TrainConfig::paper();
    paper.validate();
    EXPECT_EQ(iteration_plan(paper), "10k/10k/50k");
    EXPECT_EQ(paper.batch_size, 4);
    EXPECT_DOUBLE_EQ(paper.learning_rate, 1e-4);
    EXPECT_DOUBLE_EQ(paper.lr_final_scale, 1.0);
    EXPECT_LT(desk.lr_final_scale, 1.0);
}

TEST(Config, JsonRoundTrip) {
    auto c = TrainConfig::desk();
    c.injection.region = Region::R3R4;
    c.injection.active_blocks = {1, 3};
    c.toggles.triplane = false;
    c.pti_views = {0, 5};
    auto back = TrainConfig::from_json(c.to_json());
    EXPECT_EQ(back.to_json(), c.to_json());
}

TEST(Config, TomlOverlayAndUnknownKeys) {
    testkit::TempDir dir;
    std::ofstream(dir / "a.toml") << "seed = 9\n[iterations]\nstage3 = 77\n[injection]\nregion = \"R2\"\n";
    auto c = TrainConfig::desk();
    c.merge_toml(dir / "a.toml");
    EXPECT_EQ(c.seed, 9u);
    EXPECT_EQ(c.stage3_iterations, 77);
    EXPECT_EQ(c.injection.region, Region::R2);
    std::ofstream(dir / "b.toml") << "[iterations]\nstage9 = 1\n";
    EXPECT_ERROR_CODE(c.merge_toml(dir / "b.toml"), ErrorCode::InvalidArgument);
}

TEST(Config, ValidateRejects) {
    auto c = TrainConfig::desk();
    c.stage1_iterations = 0;
    EXPECT_ERROR_CODE(c.validate(), ErrorCode::InvalidArgument);
    c = TrainConfig::desk();
    c.lr_feature = -1;
    EXPECT_ERROR_CODE(c.validate(), ErrorCode::InvalidArgument);
    for (double bad : {0.0, 1.5}) {
        c = TrainConfig::desk();
        c.lr_final_scale = bad;
        EXPECT_ERROR_CODE(c.validate(), ErrorCode::InvalidArgument);
    }
}

TEST(Adam, ZeroGradAndZeroLr) {
    auto p = torch::tensor({1.0, -2.0}, torch::kFloat64).requires_grad_(true);
    Adam opt;
    opt.add("p", p, 0.1);
    p.mutable_grad() = torch::zeros_like(p);
    opt.step();
    EXPECT_TRUE(torch::equal(p, torch::tensor({1.0, -2.0}, torch::kFloat64)));

    auto q = torch::tensor({3.0}, torch::kFloat64).requires_grad_(true);
    Adam zero;
    zero.add("q", q, 0.0);
    q.mutable_grad() = torch::ones_like(q);
    zero.step();
    EXPECT_EQ(q.item<double>(), 3.0);
    EXPECT_ERROR_CODE(zero.add("q", q, 1.0), ErrorCode::InvalidArgument);
}

TEST(Adam, ScalarQuadraticConverges) {
    auto x = torch::tensor({5.0}, torch::kFloat64).requires_grad_(true);
    Adam opt;
    opt.add("x", x, 0.01);
    for (int i = 0; i < 5000; ++i) {
        opt.zero_grad();
        ((x - 1.5).pow(2)).sum().backward();
        opt.step();
    }
    EXPECT_LT(std::abs(x.item<double>() - 1.5), 1e-6);
}

TEST(Adam, StateRoundTripContinuesExactly) {
    auto make = [] { return torch::tensor({0.3, -0.7}, torch::kFloat64).requires_grad_(true); };
    auto a = make();
    auto b = make();
    Adam oa, ob;
    oa.add("x", a, 0.05);
    ob.add("x", b, 0.05);
    auto grad_step = [](Adam& o, torch::Tensor& t) {
        o.zero_grad();
        (t.pow(3).sum()).backward();
        o.step();
    };
    for (int i = 0; i < 3; ++i) {
        grad_step(oa, a);
        grad_step(ob, b);
    }
    TensorStore s;
    s.tensors = oa.state();
    auto c = a.detach().clone().requires_grad_(true);
    Adam oc;
    oc.add("x", c, 0.05);
    oc.load_state(s);
    grad_step(ob, b);
    grad_step(oc, c);
    EXPECT_TRUE(torch::equal(b, c));
}
