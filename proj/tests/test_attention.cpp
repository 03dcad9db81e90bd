#include <gtest/gtest.h>

#include <limits>
#include <random>

#include "art/attention.hpp"
#include "test_util.hpp"

using namespace art;
using art::testing::full_attention_reference;
using art::testing::max_abs_diff;
using art::testing::random_attention;
using art::testing::random_tensor;

namespace {

const AttentionConfig kCfg{4, 2, true};

// out[b, y, x] = in[b, (y+dy) mod h, (x+dx) mod w]
Tensor<double> roll(const Tensor<double>& x, Index dy, Index dx) {
    const Index b = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
    Tensor<double> out(x.shape());
    for (Index i = 0; i < b; ++i)
        for (Index y = 0; y < h; ++y)
            for (Index xx = 0; xx < w; ++xx)
                for (Index ch = 0; ch < c; ++ch)
                    out[((i * h + y) * w + xx) * c + ch] =
                        x[((i * h + (y + dy) % h) * w + (xx + dx) % w) * c + ch];
    return out;
}

// Which output pixels change when input pixel p is perturbed.
template <typename F>
std::vector<std::vector<bool>> dependency_matrix(const Tensor<double>& x, F op) {
    const Index h = x.dim(1), w = x.dim(2), c = x.dim(3);
    const auto base = op(x);
    std::vector<std::vector<bool>> dep(h * w, std::vector<bool>(h * w, false));
    for (Index p = 0; p < h * w; ++p) {
        auto xp = x.clone();
        for (Index ch = 0; ch < c; ++ch) xp[p * c + ch] += 0.25 * (ch + 1);
        const auto out = op(xp);
        for (Index q = 0; q < h * w; ++q)
            for (Index ch = 0; ch < c; ++ch)
                if (out[q * c + ch] != base[q * c + ch]) dep[p][q] = true;
    }
    return dep;
}

} // namespace

TEST(MsaGroup, IdenticalKeysGiveMeanOfValues) {
    std::mt19937_64 rng(31);
    auto w = random_attention<double>(4, rng);
    for (Index i = 0; i < 4; ++i)
        for (Index j = 4; j < 8; ++j) w.qkv_weight[i * 12 + j] = 0.0;
    for (Index j = 4; j < 8; ++j) w.qkv_bias[j] = 0.0;
    auto x = random_tensor<double>({1, 5, 4}, rng);
    auto out = msa_group(x, {}, w, kCfg);

    std::vector<double> vmean(4, 0.0);
    for (Index t = 0; t < 5; ++t)
        for (Index j = 0; j < 4; ++j) {
            double v = w.qkv_bias[8 + j];
            for (Index i = 0; i < 4; ++i) v += x[t * 4 + i] * w.qkv_weight[i * 12 + 8 + j];
            vmean[j] += v / 5.0;
        }
    for (Index t = 0; t < 5; ++t)
        for (Index j = 0; j < 4; ++j) {
            double expect = w.proj_bias[j];
            for (Index i = 0; i < 4; ++i) expect += vmean[i] * w.proj_weight[i * 4 + j];
            EXPECT_NEAR(out[t * 4 + j], expect, 1e-12);
        }
}

TEST(MsaGroup, SingleTokenAttendsToItself) {
    std::mt19937_64 rng(32);
    auto w = random_attention<double>(4, rng);
    auto x = random_tensor<double>({3, 1, 4}, rng);
    auto out = msa_group(x, {}, w, kCfg);
    for (Index g = 0; g < 3; ++g)
        for (Index j = 0; j < 4; ++j) {
            double expect = w.proj_bias[j];
            for (Index i = 0; i < 4; ++i) {
                double v = w.qkv_bias[8 + i];
                for (Index k = 0; k < 4; ++k) v += x[g * 4 + k] * w.qkv_weight[k * 12 + 8 + i];
                expect += v * w.proj_weight[i * 4 + j];
            }
            EXPECT_NEAR(out[g * 4 + j], expect, 1e-12);
        }
}

TEST(MsaGroup, PermutationEquivariance) {
    std::mt19937_64 rng(33);
    auto w = random_attention<double>(4, rng);
    auto x = random_tensor<double>({1, 6, 4}, rng);
    const std::vector<Index> perm{3, 0, 5, 1, 4, 2};
    Tensor<double> xp(x.shape());
    for (Index t = 0; t < 6; ++t)
        for (Index c = 0; c < 4; ++c) xp[t * 4 + c] = x[perm[t] * 4 + c];
    auto a = msa_group(x, {}, w, kCfg);
    auto b = msa_group(xp, {}, w, kCfg);
    for (Index t = 0; t < 6; ++t)
        for (Index c = 0; c < 4; ++c) EXPECT_NEAR(b[t * 4 + c], a[perm[t] * 4 + c], 1e-12);
}

TEST(MsaGroup, NonFiniteLogitNamesGroup) {
    std::mt19937_64 rng(34);
    auto w = random_attention<double>(4, rng);
    auto x = random_tensor<double>({3, 2, 4}, rng);
    x[2 * 8] = std::numeric_limits<double>::infinity();
    try {
        msa_group(x, {}, w, kCfg);
        FAIL();
    } catch (const NumericError& e) {
        EXPECT_NE(std::string(e.what()).find("group 2"), std::string::npos);
    }
}

TEST(DMsa, WindowCoveringMapEqualsFullAttention) {
    std::mt19937_64 rng(35);
    auto w = random_attention<double>(4, rng);
    auto x = random_tensor<double>({1, 8, 8, 4}, rng);
    const auto ref = full_attention_reference(x, w, kCfg);
    EXPECT_LT(max_abs_diff(d_msa(x, 8, w, kCfg).data(), ref), 1e-6);
    EXPECT_LT(max_abs_diff(d_msa(x, 11, w, kCfg).data(), ref), 1e-6);
}

TEST(DMsa, CommutesWithWindowTranslation) {
    std::mt19937_64 rng(36);
    auto w = random_attention<double>(4, rng);
    auto x = random_tensor<double>({1, 8, 8, 4}, rng);
    auto shifted_out = d_msa(roll(x, 4, 4), 4, w, kCfg);
    auto out_shifted = roll(d_msa(x, 4, w, kCfg), 4, 4);
    EXPECT_EQ(shifted_out.data(), out_shifted.data());
}

TEST(DMsa, RealOutputsIgnorePadContent) {
    std::mt19937_64 rng(37);
    auto w = random_attention<double>(4, rng);
    auto x = random_tensor<double>({1, 7, 7, 4}, rng);
    auto reference = d_msa(x, 4, w, kCfg);

    auto groups = partition_dense(x, 4);
    for (std::size_t i = 0; i < groups.validity.size(); ++i)
        if (!groups.validity[i])
            for (Index c = 0; c < 4; ++c) groups.tokens[static_cast<Index>(i) * 4 + c] = 123.0 + c;
    groups.tokens = msa_group(groups.tokens, groups.validity, w, kCfg);
    EXPECT_EQ(merge(groups).data(), reference.data());
}

TEST(SMsa, IntervalOneEqualsFullAttention) {
    std::mt19937_64 rng(38);
    auto w = random_attention<double>(4, rng);
    auto x = random_tensor<double>({1, 8, 8, 4}, rng);
    EXPECT_LT(max_abs_diff(s_msa(x, 1, w, kCfg).data(), full_attention_reference(x, w, kCfg)), 1e-6);
}

TEST(SMsa, EqualsDenseOnSpaceToDepthPermutation) {
    std::mt19937_64 rng(39);
    auto w = random_attention<double>(4, rng);
    const Index h = 8, interval = 2, sub = h / interval;
    auto x = random_tensor<double>({1, h, h, 4}, rng);
    // x'[a*sub + p, b*sub + q] = x[a + p*I, b + q*I]
    Tensor<double> xp(x.shape());
    auto src = [&](Index y, Index xx) {
        return std::make_pair(y / sub + (y % sub) * interval, xx / sub + (xx % sub) * interval);
    };
    for (Index y = 0; y < h; ++y)
        for (Index xx = 0; xx < h; ++xx) {
            const auto [sy, sx] = src(y, xx);
            for (Index c = 0; c < 4; ++c) xp[(y * h + xx) * 4 + c] = x[(sy * h + sx) * 4 + c];
        }
    auto dense = d_msa(xp, sub, w, kCfg);
    auto sparse = s_msa(x, interval, w, kCfg);
    for (Index y = 0; y < h; ++y)
        for (Index xx = 0; xx < h; ++xx) {
            const auto [sy, sx] = src(y, xx);
            for (Index c = 0; c < 4; ++c)
                EXPECT_NEAR(dense[(y * h + xx) * 4 + c], sparse[(sy * h + sx) * 4 + c], 1e-12);
        }
}

TEST(SMsa, ReachesBeyondTheWindow) {
    std::mt19937_64 rng(40);
    auto w = random_attention<double>(4, rng);
    const Index k = 4;
    auto x = random_tensor<double>({1, 2 * k, 2 * k, 4}, rng);
    auto xp = x.clone();
    xp[0] += 1.0;
    auto changed = [&](const Tensor<double>& a, const Tensor<double>& b) {
        for (Index c = 0; c < 4; ++c)
            if (a[(k * 2 * k + k) * 4 + c] != b[(k * 2 * k + k) * 4 + c]) return true;
        return false;
    };
    EXPECT_TRUE(changed(s_msa(x, k, w, kCfg), s_msa(xp, k, w, kCfg)));
    EXPECT_FALSE(changed(d_msa(x, k, w, kCfg), d_msa(xp, k, w, kCfg)));
}

TEST(Attention, DependencyPatternsMatchPartitions) {
    std::mt19937_64 rng(41);
    auto w = random_attention<double>(4, rng);
    auto x = random_tensor<double>({1, 8, 8, 4}, rng);
    auto dense = dependency_matrix(x, [&](const Tensor<double>& t) { return d_msa(t, 4, w, kCfg); });
    auto sparse = dependency_matrix(x, [&](const Tensor<double>& t) { return s_msa(t, 2, w, kCfg); });
    for (Index p = 0; p < 64; ++p)
        for (Index q = 0; q < 64; ++q) {
            const Index py = p / 8, px = p % 8, qy = q / 8, qx = q % 8;
            EXPECT_EQ(dense[p][q], py / 4 == qy / 4 && px / 4 == qx / 4);
            EXPECT_EQ(sparse[p][q], py % 2 == qy % 2 && px % 2 == qx % 2);
        }
}

TEST(Attention, ShapePreservedForAllExtents) {
    std::mt19937_64 rng(42);
    auto w = random_attention<float>(4, rng);
    for (Index h : {1, 3, 5, 8})
        for (Index wd : {1, 2, 7}) {
            auto x = random_tensor<float>({2, h, wd, 4}, rng);
            EXPECT_EQ(d_msa(x, 4, w, kCfg).shape(), x.shape());
            EXPECT_EQ(s_msa(x, 3, w, kCfg).shape(), x.shape());
        }
}

TEST(Attention, GradcheckDenseAndSparse) {
    std::mt19937_64 rng(43);
    auto w = random_attention<double>(4, rng, 0.5, true);
    auto x = random_tensor<double>({1, 6, 5, 4}, rng, -1, 1, true);
    std::vector<Tensor<double>> inputs{x, w.qkv_weight, w.qkv_bias, w.proj_weight, w.proj_bias};
    auto rd = art::testing::gradcheck(inputs, [&] { return art::testing::weighted_sum(d_msa(x, 4, w, kCfg)); });
    EXPECT_LT(rd.max_rel_error, 1e-4);
    auto rs = art::testing::gradcheck(inputs, [&] { return art::testing::weighted_sum(s_msa(x, 2, w, kCfg)); });
    EXPECT_LT(rs.max_rel_error, 1e-4);
}
