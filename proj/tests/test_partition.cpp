#include <gtest/gtest.h>

#include <random>
#include <set>

#include "art/partition.hpp"
#include "test_util.hpp"

using namespace art;
using art::testing::random_tensor;

namespace {

// [B,h,w,1] with value y*100 + x (+ 10000*b) so a token identifies its pixel.
Tensor<double> coordinate_map(Index b, Index h, Index w) {
    Tensor<double> x({b, h, w, 1});
    for (Index i = 0; i < b; ++i)
        for (Index y = 0; y < h; ++y)
            for (Index xx = 0; xx < w; ++xx) x[(i * h + y) * w + xx] = 10000.0 * i + 100.0 * y + xx;
    return x;
}

} // namespace

TEST(PartitionDense, SingleWindow) {
    auto g = partition_dense(coordinate_map(1, 8, 8), 8);
    EXPECT_EQ(g.tokens.shape(), (Shape{1, 64, 1}));
    EXPECT_TRUE(g.all_valid());
}

TEST(PartitionDense, FourWindowsRasterOrder) {
    auto g = partition_dense(coordinate_map(1, 8, 8), 4);
    EXPECT_EQ(g.tokens.shape(), (Shape{4, 16, 1}));
    // Window (0,1), slot (1,2) -> pixel (1, 4+2).
    EXPECT_EQ(g.tokens[1 * 16 + 1 * 4 + 2], 100.0 * 1 + 6);
    // Window (1,0), slot 0 -> pixel (4, 0).
    EXPECT_EQ(g.tokens[2 * 16], 400.0);
}

TEST(PartitionDense, PadsIndivisibleMapAndMarksPadding) {
    auto g = partition_dense(coordinate_map(1, 7, 7), 4);
    EXPECT_EQ(g.tokens.shape(), (Shape{4, 16, 1}));
    EXPECT_EQ(g.spec.pad_h, 1);
    EXPECT_EQ(g.spec.pad_w, 1);
    for (Index grp = 0; grp < 4; ++grp)
        for (Index t = 0; t < 16; ++t) {
            const auto [y, x] = g.spec.pixel_of(grp, t);
            const bool expect_valid = y != 7 && x != 7;
            EXPECT_EQ(static_cast<bool>(g.validity[grp * 16 + t]), expect_valid);
            if (!expect_valid) EXPECT_EQ(g.tokens[grp * 16 + t], 0.0);
        }
}

TEST(PartitionSparse, IntervalOneIsSingleGroup) {
    auto g = partition_sparse(coordinate_map(1, 5, 6), 1);
    EXPECT_EQ(g.tokens.shape(), (Shape{1, 30, 1}));
    EXPECT_TRUE(g.all_valid());
}

TEST(PartitionSparse, StrideMap) {
    auto g = partition_sparse(coordinate_map(1, 8, 8), 4);
    EXPECT_EQ(g.tokens.shape(), (Shape{16, 4, 1}));
    // Group (a,b) slot (p,q) holds pixel (a+4p, b+4q).
    for (Index a = 0; a < 4; ++a)
        for (Index b = 0; b < 4; ++b)
            for (Index p = 0; p < 2; ++p)
                for (Index q = 0; q < 2; ++q)
                    EXPECT_EQ(g.tokens[(a * 4 + b) * 4 + p * 2 + q], 100.0 * (a + 4 * p) + (b + 4 * q));
}

TEST(PartitionSparse, PixelFiveSixLandsInGroupOneTwo) {
    auto g = partition_sparse(coordinate_map(1, 8, 8), 4);
    const auto [grp, slot] = g.spec.slot_of(5, 6);
    EXPECT_EQ(grp, 1 * 4 + 2);
    EXPECT_EQ(slot, 1 * 2 + 1);
    EXPECT_EQ(g.tokens[grp * 4 + slot], 506.0);
}

TEST(Merge, InvertsPartitionExhaustively) {
    std::mt19937_64 rng(21);
    for (Index h = 1; h <= 12; ++h)
        for (Index w = 1; w <= 12; ++w) {
            auto x = random_tensor<float>({2, h, w, 3}, rng);
            for (Index k = 1; k <= 4; ++k) {
                EXPECT_EQ(merge(partition_dense(x, k)).data(), x.data()) << h << "x" << w << " W=" << k;
                EXPECT_EQ(merge(partition_sparse(x, k)).data(), x.data()) << h << "x" << w << " I=" << k;
            }
        }
}

TEST(Merge, SinglePixelAnyMode) {
    Tensor<float> x({1, 1, 1, 2}, {0.25f, -3.0f});
    for (Index k = 1; k <= 3; ++k) {
        EXPECT_EQ(merge(partition_dense(x, k)).data(), x.data());
        EXPECT_EQ(merge(partition_sparse(x, k)).data(), x.data());
    }
}

TEST(Merge, SpecDisagreementIsCorruption) {
    auto g = partition_dense(coordinate_map(1, 8, 8), 4);
    g.spec.size = 2;
    EXPECT_THROW(merge(g), CorruptionError);
}

TEST(Partition, ValidSlotsFormBijectionWithPixels) {
    for (Index h = 1; h <= 16; ++h)
        for (Index w = 1; w <= 16; w += 3)
            for (Index k : {1, 2, 3, 5})
                for (auto mode : {PartitionMode::dense, PartitionMode::sparse}) {
                    auto g = mode == PartitionMode::dense ? partition_dense(coordinate_map(1, h, w), k)
                                                          : partition_sparse(coordinate_map(1, h, w), k);
                    const Index groups = g.spec.groups_per_image(), tokens = g.spec.tokens_per_group();
                    EXPECT_EQ(groups * tokens, g.spec.padded_h() * g.spec.padded_w());
                    std::set<std::pair<Index, Index>> seen;
                    for (Index grp = 0; grp < groups; ++grp)
                        for (Index t = 0; t < tokens; ++t) {
                            if (!g.validity[grp * tokens + t]) continue;
                            const auto px = g.spec.pixel_of(grp, t);
                            EXPECT_TRUE(seen.insert(px).second);
                            EXPECT_LT(px.first, h);
                            EXPECT_LT(px.second, w);
                            EXPECT_EQ(g.spec.slot_of(px.first, px.second), std::make_pair(grp, t));
                        }
                    EXPECT_EQ(static_cast<Index>(seen.size()), h * w);
                    EXPECT_EQ(g.all_valid(), h % k == 0 && w % k == 0);
                }
}

TEST(Partition, DenseAndSparseCoverSamePaddedCount) {
    for (Index k = 1; k <= 6; ++k) {
        auto x = coordinate_map(1, 12, 12);
        auto d = partition_dense(x, k);
        auto s = partition_sparse(x, k);
        EXPECT_EQ(d.num_groups() * d.tokens_per_group(), s.num_groups() * s.tokens_per_group());
    }
}

TEST(Partition, GradientFlowsBackToPixels) {
    std::mt19937_64 rng(22);
    auto x = random_tensor<double>({1, 5, 6, 2}, rng, -1, 1, true);
    auto res = art::testing::gradcheck({x}, [&] {
        auto g = partition_sparse(x, 2);
        g.tokens = square(g.tokens);
        return art::testing::weighted_sum(merge(g));
    });
    EXPECT_LT(res.max_rel_error, 1e-4);
}
