#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>
#include <cstdint>

#include "art/partition.hpp"

namespace art {

struct AttentionConfig {
    Index channels = 0;
    Index num_heads = 1;
    bool qkv_bias = true;

    Index head_dim() const { return channels / num_heads; }
    void validate() const {
        if (channels < 1 || num_heads < 1 || channels % num_heads != 0)
            throw ConfigError("attention: channels " + std::to_string(channels) +
                              " not divisible by num_heads " + std::to_string(num_heads));
    }
};

// qkv: [C, 3C] (+ [3C]); out: [C, C] + [C].
template <typename T>
struct AttentionWeights {
    Tensor<T> qkv_weight, qkv_bias;
    Tensor<T> proj_weight, proj_bias;
};

// Multi-head self-attention inside each token group. Padded key columns are
// masked with -inf; the scale is 1/sqrt(head_dim).
template <typename T>
Tensor<T> msa_group(const Tensor<T>& x, const std::vector<std::uint8_t>& validity,
                    const AttentionWeights<T>& w, const AttentionConfig& cfg) {
    cfg.validate();
    if (x.rank() != 3 || x.dim(2) != cfg.channels)
        throw DimensionError("msa_group: expects [G,T," + std::to_string(cfg.channels) + "], got " +
                             shape_str(x.shape()));
    const Index groups = x.dim(0), tokens = x.dim(1), c = cfg.channels;
    const Index heads = cfg.num_heads, d = cfg.head_dim();
    if (tokens < 1) throw DimensionError("msa_group: empty group");
    if (!validity.empty() && static_cast<Index>(validity.size()) != groups * tokens)
        throw DimensionError("msa_group: validity size does not match tokens");

    auto qkv = linear(x, w.qkv_weight, cfg.qkv_bias ? &w.qkv_bias : nullptr);
    // [G,T,3C] -> [3,G,heads,T,d]
    auto split = permute(reshape(qkv, Shape{groups, tokens, 3, heads, d}), {2, 0, 3, 1, 4});
    const Index chunk = groups * heads * tokens * d;
    auto part = [&](Index which) {
        return reshape(crop(reshape(split, Shape{3, chunk}), Shape{which, 0}, Shape{1, chunk}),
                       Shape{groups, heads, tokens, d});
    };
    auto q = part(0), k = part(1), v = part(2);

    auto logits = scale(matmul(q, transpose_last2(k)), T(1) / std::sqrt(static_cast<T>(d)));
    for (Index i = 0; i < logits.numel(); ++i)
        if (!std::isfinite(logits[i]))
            throw NumericError("msa_group: non-finite attention logit in group " +
                               std::to_string(i / (heads * tokens * tokens)));

    Tensor<T> attn;
    bool all_valid = true;
    for (auto bit : validity)
        if (!bit) all_valid = false;
    if (all_valid) {
        attn = softmax_lastdim(logits);
    } else {
        Tensor<T> mask(Shape{groups, 1, 1, tokens});
        for (std::size_t i = 0; i < validity.size(); ++i)
            if (!validity[i]) mask[static_cast<Index>(i)] = -std::numeric_limits<T>::infinity();
        attn = softmax_lastdim(logits, &mask);
    }
    auto ctx = matmul(attn, v);  // [G,heads,T,d]
    auto merged = reshape(permute(ctx, {0, 2, 1, 3}), Shape{groups, tokens, c});
    return linear(merged, w.proj_weight, &w.proj_bias);
}

// D-MSA: attention within non-overlapping window x window groups.
template <typename T>
Tensor<T> d_msa(const Tensor<T>& x, Index window, const AttentionWeights<T>& w,
                const AttentionConfig& cfg) {
    auto groups = partition_dense(x, window);
    groups.tokens = msa_group(groups.tokens, groups.validity, w, cfg);
    return merge(groups);
}

// S-MSA: attention within strided grids of the given interval.
template <typename T>
Tensor<T> s_msa(const Tensor<T>& x, Index interval, const AttentionWeights<T>& w,
                const AttentionConfig& cfg) {
    auto groups = partition_sparse(x, interval);
    groups.tokens = msa_group(groups.tokens, groups.validity, w, cfg);
    return merge(groups);
}

} // namespace art
