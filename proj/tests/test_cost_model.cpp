#include <gtest/gtest.h>

#include <random>

#include "art/cost_model.hpp"
#include "test_util.hpp"

using namespace art;

TEST(CostMsa, HandEvaluatedValues) {
    EXPECT_EQ(cost_msa(8, 8, 4), 36864u);
    for (Count c : {1u, 3u, 180u}) EXPECT_EQ(cost_msa(1, 1, c), 4 * c * c + 2 * c);
}

TEST(CostMsa, MonotoneInEachArgument) {
    for (Count h = 1; h <= 6; ++h)
        for (Count w = 1; w <= 6; ++w)
            for (Count c = 1; c <= 6; ++c) {
                EXPECT_LE(cost_msa(h, w, c), cost_msa(h + 1, w, c));
                EXPECT_LE(cost_msa(h, w, c), cost_msa(h, w + 1, c));
                EXPECT_LE(cost_msa(h, w, c), cost_msa(h, w, c + 1));
            }
}

TEST(CostDmsa, HandEvaluatedValue) {
    EXPECT_EQ(cost_dmsa(64, 64, 180, 8), 625213440u);
}

TEST(CostDmsa, FullWindowEqualsFullAttention) {
    for (Count s : {1u, 4u, 8u, 16u}) EXPECT_EQ(cost_dmsa(s, s, 7, s), cost_msa(s, s, 7));
}

TEST(CostDmsa, NoMoreThanFullAttentionWhenWindowFits) {
    for (Count h : {8u, 16u, 24u})
        for (Count w : {8u, 16u})
            for (Count win : {1u, 2u, 4u, 8u})
                if (h % win == 0 && w % win == 0 && win * win <= h * w)
                    EXPECT_LE(cost_dmsa(h, w, 5, win), cost_msa(h, w, 5));
}

TEST(CostSmsa, HandEvaluatedValue) {
    EXPECT_EQ(cost_smsa(64, 64, 180, 4), 908328960u);
}

TEST(CostSmsa, IntervalOneEqualsFullAttention) {
    for (Count h : {1u, 5u, 12u}) EXPECT_EQ(cost_smsa(h, 7, 3, 1), cost_msa(h, 7, 3));
}

TEST(CostSmsa, StrictlyCheaperForIntervalAboveOne) {
    for (Count i : {2u, 3u, 4u, 8u}) EXPECT_LT(cost_smsa(48, 48, 6, i), cost_msa(48, 48, 6));
}

TEST(CostModel, DenseAndSparseAgreeAtEqualGroupSize) {
    // W^2 == (h/I)(w/I)
    EXPECT_EQ(cost_dmsa(64, 64, 180, 8), cost_smsa(64, 64, 180, 8));
    EXPECT_EQ(cost_dmsa(64, 64, 180, 16), cost_smsa(64, 64, 180, 4));
    EXPECT_EQ(cost_dmsa(48, 48, 9, 4), cost_smsa(48, 48, 9, 12));
    EXPECT_EQ(cost_dmsa(32, 128, 2, 8), cost_smsa(32, 128, 2, 8));
}

TEST(CostModel, IndivisibleExtentsUsePaddedSize) {
    EXPECT_EQ(cost_dmsa(7, 7, 4, 4), cost_dmsa(8, 8, 4, 4));
    EXPECT_EQ(cost_smsa(7, 9, 4, 2), cost_smsa(8, 10, 4, 2));
}

TEST(CostModel, PublishedMultAddsWithinBand) {
    const auto art = model_cost(*preset("art_x4"), 640, 640);
    EXPECT_NEAR(art.mult_adds_total / 1e9, 782.0, 782.0 * 0.15);
    const auto art_s = model_cost(*preset("art_s_x4"), 640, 640);
    EXPECT_NEAR(art_s.mult_adds_total / 1e9, 392.0, 392.0 * 0.15);
    EXPECT_EQ(art.body_h, 160);
    EXPECT_EQ(art.mult_adds_total, art.breakdown_sum());
}

TEST(CostModel, PublishedParameterCounts) {
    EXPECT_NEAR(count_params(*preset("art_x4")) / 1e6, 16.55, 16.55 * 0.015);
    EXPECT_NEAR(count_params(*preset("art_s_x4")) / 1e6, 11.87, 11.87 * 0.015);
}

TEST(CostModel, RejectsOutputNotDivisibleByScale) {
    EXPECT_THROW(model_cost(*preset("art_x4"), 642, 640), ConfigError);
    EXPECT_NO_THROW(model_cost(*preset("art_denoise"), 31, 17));
}

TEST(CostModel, ReportSerializes) {
    const auto r = model_cost(*preset("tiny_sr"), 16, 16);
    const auto kv = KeyValueText::parse(r.to_kv().to_text(), "report");
    EXPECT_EQ(kv.get("mult_adds"), std::to_string(r.mult_adds_total));
    EXPECT_EQ(kv.get("params"), std::to_string(r.params_total));
    EXPECT_NE(r.to_text().find("mult-adds"), std::string::npos);
}

namespace {

struct Measured {
    std::uint64_t matmul, linear, conv;
};

Measured instrument(const ModelConfig& cfg, Index h, Index w) {
    auto m = ArtModel<float>::build(cfg, 3);
    std::mt19937_64 rng(60);
    auto x = art::testing::random_tensor<float>({1, cfg.in_channels, h, w}, rng, 0, 1);
    NoGradGuard ng;
    MacCountScope scope;
    m.forward(x);
    return {mac_counter().matmul, mac_counter().linear, mac_counter().conv};
}

} // namespace

TEST(CostModel, AnalyticMatchesInstrumentedExecutor) {
    std::vector<std::pair<ModelConfig, std::pair<Index, Index>>> cases;
    for (const char* name : {"tiny_sr", "tiny_sr_x4", "tiny_denoise", "tiny_car"})
        for (auto hw : {std::pair<Index, Index>{8, 8}, {7, 5}, {3, 10}})
            cases.push_back({*preset(name), hw});
    auto x3 = *preset("tiny_sr");
    x3.scale = 3;
    x3.num_groups = 2;
    x3.intervals = {2, 3};
    x3.block_pattern = BlockPattern::all_sparse;
    cases.push_back({x3, {6, 7}});

    for (const auto& [cfg, hw] : cases) {
        const auto [h, w] = hw;
        const Index s = cfg.output_scale();
        const auto r = model_cost(cfg, h * s, w * s);
        const auto got = instrument(cfg, h, w);
        SCOPED_TRACE(cfg.to_text() + std::to_string(h) + "x" + std::to_string(w));
        EXPECT_EQ(got.matmul, r.attention_matmul);
        EXPECT_EQ(got.linear, r.attention_proj + r.mlp);
        EXPECT_EQ(got.conv, r.conv + r.head);
    }
}
