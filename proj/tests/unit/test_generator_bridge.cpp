#include <gtest/gtest.h>

#include "headsplat/generator_bridge.hpp"
#include "headsplat/tensor_store.hpp"
#include "support/fixtures.hpp"
#include "support/gradcheck.hpp"

using namespace headsplat;

namespace {

StyleGeneratorOptions small_options() {
    StyleGeneratorOptions o;
    o.style_dim = 16;
    o.widths = {16, 16, 8, 8, 8};
    return o;
}

PriorPyramid random_pyramid(const StyleGeneratorOptions& o) {
    PriorPyramid p;
    for (int b = 1; b <= o.blocks(); ++b) {
        p[b] = torch::randn({1, o.widths[static_cast<std::size_t>(b - 1)], o.resolution(b), o.resolution(b)});
    }
    return p;
}

} // namespace

TEST(Regions, ParseAndPrint) {
    for (auto r : all_regions()) EXPECT_EQ(parse_region(to_string(r)), r);
    EXPECT_EQ(to_string(Region::R3R4), "R3+R4");
    EXPECT_EQ(all_regions().size(), 5u);
    EXPECT_ERROR_CODE(parse_region("R7"), ErrorCode::InvalidArgument);
}

TEST(InjectionConfig, Validate) {
    InjectionConfig c;
    c.validate(5);
    c.active_blocks = {6};
    EXPECT_ERROR_CODE(c.validate(5), ErrorCode::InvalidArgument);
    c.active_blocks = {};
    EXPECT_ERROR_CODE(c.validate(5), ErrorCode::InvalidArgument);
    c.region = Region::R3R4;
    c.active_blocks = {2};
    EXPECT_TRUE(c.injects(2, Region::R3));
    EXPECT_TRUE(c.injects(2, Region::R4));
    EXPECT_FALSE(c.injects(2, Region::R1));
    EXPECT_FALSE(c.injects(1, Region::R3));
}

TEST(StyleGenerator, OutputShape) {
    StyleGenerator g(small_options());
    auto out = g->synthesize(torch::randn({2, 16}));
    EXPECT_EQ(out.sizes(), (std::vector<std::int64_t>{2, 3, 64, 64}));
}

TEST(StyleGenerator, ZeroInjectorIsIdentity) {
    auto o = small_options();
    StyleGenerator g(o);
    Injector inj(o);
    auto w = torch::randn({1, 16});
    auto base = g->synthesize(w);
    auto pyr = random_pyramid(o);
    for (auto r : all_regions()) {
        InjectionConfig cfg;
        cfg.region = r;
        auto out = g->synthesize(w, &pyr, &cfg, inj.get());
        EXPECT_LT((out - base).abs().max().item<double>(), 1e-6) << to_string(r);
    }
}

TEST(StyleGenerator, InjectionIsLocalToBlock) {
    auto o = small_options();
    StyleGenerator g(o);
    Injector inj(o);
    inj->randomize(1, 0.1);
    auto w = torch::randn({1, 16});
    auto pyr = random_pyramid(o);
    InjectionConfig cfg;
    cfg.region = Region::R3;
    cfg.active_blocks = {5};
    BlockTaps base_taps, taps;
    auto base = g->synthesize(w, nullptr, nullptr, nullptr, &base_taps);
    auto out = g->synthesize(w, &pyr, &cfg, inj.get(), &taps);
    EXPECT_GT((out - base).abs().max().item<double>(), 0.0);
    for (int b = 1; b <= 4; ++b) {
        EXPECT_TRUE(torch::equal(base_taps.r3[b], taps.r3[b])) << b;
    }
    EXPECT_FALSE(torch::equal(base_taps.r3[5], taps.r3[5]));
}

TEST(StyleGenerator, PyramidResolutionMismatch) {
    auto o = small_options();
    StyleGenerator g(o);
    Injector inj(o);
    auto pyr = random_pyramid(o);
    pyr[3] = torch::zeros({1, 8, 8, 8});
    InjectionConfig cfg;
    EXPECT_ERROR_CODE(g->synthesize(torch::randn({1, 16}), &pyr, &cfg, inj.get()), ErrorCode::ResolutionMismatch);
}

TEST(PriorEncoder, ResolutionsAndZeroPropagation) {
    StyleGeneratorOptions o;
    o.style_dim = 16;
    PriorEncoder enc(o, 32);
    InjectionConfig cfg;
    auto pyr = enc->forward(torch::randn({1, 32, 256, 256}), cfg);
    ASSERT_EQ(pyr.size(), 5u);
    const std::int64_t want[] = {4, 8, 16, 32, 64};
    for (int b = 1; b <= 5; ++b) {
        EXPECT_EQ(pyr.at(b).size(2), want[b - 1]);
        EXPECT_EQ(pyr.at(b).size(1), o.widths[static_cast<std::size_t>(b - 1)]);
    }
    auto zero = enc->forward(torch::zeros({1, 32, 64, 64}), cfg);
    for (const auto& [b, t] : zero) EXPECT_EQ(t.abs().sum().item<float>(), 0.0f) << b;
    cfg.active_blocks = {2, 4};
    EXPECT_EQ(enc->forward(torch::randn({1, 32, 64, 64}), cfg).size(), 2u);
}

TEST(PriorEncoder, Gradcheck) {
    StyleGeneratorOptions o;
    o.style_dim = 8;
    o.widths = {4, 4, 3};
    PriorEncoder enc(o, 3);
    enc->to(torch::kFloat64);
    InjectionConfig cfg;
    cfg.active_blocks = {1, 2, 3};
    auto r = testkit::gradcheck(
        [&](const std::vector<torch::Tensor>& in) {
            auto p = enc->forward(in[0], cfg);
            return p.at(1).pow(2).sum() + p.at(2).sum() + p.at(3).pow(2).sum();
        },
        {torch::randn({1, 3, 16, 16}, torch::kFloat64)});
    EXPECT_LT(r.max_rel_error, 1e-3);
}

TEST(Pti, RejectsEmptyTargets) {
    StyleGenerator g(small_options());
    EXPECT_ERROR_CODE(pti_invert(g, {}, PtiOptions{}, nullptr), ErrorCode::InvalidArgument);
}

TEST(Pti, PhaseTwoKeepsPivotAndFreezesNothingElse) {
    auto o = small_options();
    o.widths = {8, 8, 8};
    torch::manual_seed(4);
    StyleGenerator g(o);
    std::vector<torch::Tensor> targets{torch::rand({16, 16, 3}), torch::rand({16, 16, 3})};
    const auto before = checksum(*g);
    auto r = pti_invert(g, targets, PtiOptions{15, 10}, nullptr);
    EXPECT_EQ(r.phase1_loss.size(), 15u);
    EXPECT_EQ(r.phase2_loss.size(), 10u);
    EXPECT_LT(r.phase1_loss.back(), r.phase1_loss.front());
    EXPECT_NE(checksum(*g), before);
    EXPECT_TRUE(g->initialized());
    for (auto& p : g->parameters()) EXPECT_TRUE(p.requires_grad());
}

TEST(GeneratorWeights, RoundTripAndMissingTensor) {
    testkit::TempDir dir;
    auto o = small_options();
    StyleGenerator g(o);
    g->set_initialized(true);
    save_generator(dir.path(), g);
    auto back = load_generator(dir.path());
    EXPECT_EQ(checksum(*back), checksum(*g));
    EXPECT_TRUE(back->initialized());

    auto store = load_tensor_store(dir.path());
    store.tensors.erase("block3_conv.weight");
    save_tensor_store(dir / "broken", store.tensors, store.meta);
    try {
        load_generator(dir / "broken");
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::SchemaMismatch);
        EXPECT_NE(std::string(e.what()).find("block3_conv.weight"), std::string::npos);
    }
}
