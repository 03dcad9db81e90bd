#include <gtest/gtest.h>

#include <random>

#include "art/blocks.hpp"
#include "test_util.hpp"

using namespace art;
using art::testing::random_tensor;

namespace {

template <typename T>
void zero_all(std::vector<Parameter<T>>& params) {
    for (auto& p : params) std::fill(p.tensor.data().begin(), p.tensor.data().end(), T(0));
}

// Uniform noise on every parameter so no path is trivially zero.
template <typename T>
void randomize(std::vector<Parameter<T>>& params, std::uint64_t seed, double amp = 0.3) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> d(-amp, amp);
    for (auto& p : params)
        for (auto& v : p.tensor.data()) v = static_cast<T>(d(rng));
}

BlockConfig block_cfg(BlockKind kind) {
    BlockConfig c;
    c.channels = 4;
    c.num_heads = 2;
    c.mlp_ratio = 2.0;
    c.kind = kind;
    c.window_size = 4;
    c.interval = 2;
    return c;
}

ResidualGroupConfig group_cfg(Index pairs) {
    ResidualGroupConfig g;
    g.channels = 4;
    g.num_heads = 2;
    g.num_pairs = pairs;
    g.mlp_ratio = 2.0;
    g.window_size = 4;
    g.interval = 2;
    return g;
}

} // namespace

TEST(TransformerBlock, ZeroWeightsGiveIdentity) {
    for (auto kind : {BlockKind::dab, BlockKind::sab}) {
        std::vector<Parameter<double>> params;
        ParamFactory<double> f(params, 1);
        auto block = TransformerBlock<double>::create(f, "b", block_cfg(kind));
        zero_all(params);
        std::mt19937_64 rng(2);
        auto x = random_tensor<double>({1, 5, 6, 4}, rng);
        EXPECT_EQ(block.forward(x).data(), x.data());
    }
}

TEST(TransformerBlock, PreservesShape) {
    std::vector<Parameter<float>> params;
    ParamFactory<float> f(params, 3);
    auto dab = TransformerBlock<float>::create(f, "d", block_cfg(BlockKind::dab));
    auto sab = TransformerBlock<float>::create(f, "s", block_cfg(BlockKind::sab));
    std::mt19937_64 rng(4);
    for (Index h : {1, 5, 8})
        for (Index w : {1, 5, 8}) {
            auto x = random_tensor<float>({2, h, w, 4}, rng);
            EXPECT_EQ(dab.forward(x).shape(), x.shape());
            EXPECT_EQ(sab.forward(x).shape(), x.shape());
        }
}

TEST(TransformerBlock, Gradcheck) {
    for (auto kind : {BlockKind::dab, BlockKind::sab}) {
        std::vector<Parameter<double>> params;
        ParamFactory<double> f(params, 5);
        auto block = TransformerBlock<double>::create(f, "b", block_cfg(kind));
        randomize(params, 6);
        std::mt19937_64 rng(7);
        auto x = random_tensor<double>({1, 5, 6, 4}, rng, -1, 1, true);
        std::vector<Tensor<double>> inputs{x};
        for (auto& p : params) inputs.push_back(p.tensor);
        auto res = art::testing::gradcheck(
            inputs, [&] { return art::testing::weighted_sum(block.forward(x)); }, 1e-6, 12);
        EXPECT_LT(res.max_rel_error, 1e-4) << to_string(kind);
    }
}

TEST(ResidualGroup, AlternatesStartingWithDense) {
    std::vector<Parameter<float>> params;
    ParamFactory<float> f(params, 8);
    auto g = ResidualGroup<float>::create(f, "g", group_cfg(3));
    ASSERT_EQ(g.blocks().size(), 6u);
    std::string kinds;
    for (const auto& b : g.blocks()) kinds += to_string(b.config().kind);
    EXPECT_EQ(kinds, "DABSABDABSABDABSAB");
}

TEST(ResidualGroup, AblationPatternsNeedExplicitFlag) {
    std::vector<Parameter<float>> params;
    ParamFactory<float> f(params, 9);
    auto cfg = group_cfg(2);
    cfg.pattern = BlockPattern::all_sparse;
    auto g = ResidualGroup<float>::create(f, "g", cfg);
    for (const auto& b : g.blocks()) EXPECT_EQ(b.config().kind, BlockKind::sab);
}

TEST(ResidualGroup, ZeroConvMakesIdentity) {
    std::vector<Parameter<double>> params;
    ParamFactory<double> f(params, 10);
    auto g = ResidualGroup<double>::create(f, "g", group_cfg(2));
    randomize(params, 11);
    for (auto& p : params)
        if (p.name.rfind("g.conv", 0) == 0) std::fill(p.tensor.data().begin(), p.tensor.data().end(), 0.0);
    std::mt19937_64 rng(12);
    auto x = random_tensor<double>({1, 6, 7, 4}, rng);
    EXPECT_EQ(g.forward(x).data(), x.data());
}

TEST(ResidualGroup, MinimalGroupRuns) {
    std::vector<Parameter<float>> params;
    ParamFactory<float> f(params, 13);
    auto g = ResidualGroup<float>::create(f, "g", group_cfg(1));
    std::mt19937_64 rng(14);
    auto x = random_tensor<float>({1, 3, 9, 4}, rng);
    EXPECT_EQ(g.forward(x).shape(), x.shape());
}

TEST(ResidualGroup, AlternationGivesFullConnectivity) {
    std::vector<Parameter<double>> params;
    ParamFactory<double> f(params, 15);
    auto cfg = group_cfg(1);
    auto g = ResidualGroup<double>::create(f, "g", cfg);
    randomize(params, 16);
    // Dense-only reference with the same extents: strictly smaller field.
    std::vector<Parameter<double>> dense_params;
    ParamFactory<double> fd(dense_params, 15);
    cfg.pattern = BlockPattern::all_dense;
    auto dense_only = ResidualGroup<double>::create(fd, "g", cfg);
    randomize(dense_params, 16);

    std::mt19937_64 rng(17);
    auto x = random_tensor<double>({1, 8, 8, 4}, rng);
    auto base = g.forward(x);
    auto dense_base = dense_only.forward(x);
    for (Index p = 0; p < 64; ++p) {
        auto xp = x.clone();
        for (Index c = 0; c < 4; ++c) xp[p * 4 + c] += 0.25 * (c + 1);
        auto out = g.forward(xp);
        auto dense_out = dense_only.forward(xp);
        Index affected = 0, dense_affected = 0;
        for (Index q = 0; q < 64; ++q) {
            bool hit = false, dense_hit = false;
            for (Index c = 0; c < 4; ++c) {
                hit |= out[q * 4 + c] != base[q * 4 + c];
                dense_hit |= dense_out[q * 4 + c] != dense_base[q * 4 + c];
            }
            affected += hit;
            dense_affected += dense_hit;
        }
        EXPECT_EQ(affected, 64) << "pixel " << p;
        EXPECT_LT(dense_affected, 64) << "pixel " << p;
    }
}

TEST(ResidualGroup, Gradcheck) {
    std::vector<Parameter<double>> params;
    ParamFactory<double> f(params, 18);
    auto g = ResidualGroup<double>::create(f, "g", group_cfg(1));
    randomize(params, 19);
    std::mt19937_64 rng(20);
    auto x = random_tensor<double>({1, 5, 5, 4}, rng, -1, 1, true);
    std::vector<Tensor<double>> inputs{x};
    for (auto& p : params) inputs.push_back(p.tensor);
    auto res = art::testing::gradcheck(
        inputs, [&] { return art::testing::weighted_sum(g.forward(x)); }, 1e-6, 8);
    EXPECT_LT(res.max_rel_error, 1e-4);
}
