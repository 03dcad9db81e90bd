#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "art/attention.hpp"

namespace art {

enum class BlockKind { dab, sab };

inline const char* to_string(BlockKind k) { return k == BlockKind::dab ? "DAB" : "SAB"; }

// Creates and registers named parameters in construction order.
// Weights: normal(0, 0.02) truncated to +-2 std; biases zero; LN gamma one.
template <typename T>
class ParamFactory {
public:
    ParamFactory(std::vector<Parameter<T>>& registry, std::uint64_t seed)
        : registry_(registry), rng_(seed) {}

    Tensor<T> weight(const std::string& name, Shape shape) {
        Tensor<T> t(std::move(shape), T(0), true);
        std::normal_distribution<double> dist(0.0, 0.02);
        for (auto& v : t.data()) {
            double s;
            do s = dist(rng_);
            while (std::abs(s) > 0.04);
            v = static_cast<T>(s);
        }
        return add(name, t);
    }
    Tensor<T> constant(const std::string& name, Shape shape, T value) {
        return add(name, Tensor<T>(std::move(shape), value, true));
    }

private:
    Tensor<T> add(const std::string& name, Tensor<T> t) {
        for (const auto& p : registry_)
            if (p.name == name) throw ConfigError("duplicate parameter name " + name);
        registry_.push_back({name, t});
        return t;
    }

    std::vector<Parameter<T>>& registry_;
    std::mt19937_64 rng_;
};

template <typename T>
struct LayerNormParams {
    Tensor<T> gamma, beta;

    static LayerNormParams create(ParamFactory<T>& f, const std::string& prefix, Index c) {
        return {f.constant(prefix + ".weight", {c}, T(1)), f.constant(prefix + ".bias", {c}, T(0))};
    }
    Tensor<T> operator()(const Tensor<T>& x) const { return layer_norm(x, gamma, beta); }
};

template <typename T>
struct LinearParams {
    Tensor<T> weight, bias;

    static LinearParams create(ParamFactory<T>& f, const std::string& prefix, Index in, Index out) {
        return {f.weight(prefix + ".weight", {in, out}), f.constant(prefix + ".bias", {out}, T(0))};
    }
    Tensor<T> operator()(const Tensor<T>& x) const { return linear(x, weight, &bias); }
};

template <typename T>
struct ConvParams {
    Tensor<T> weight, bias;

    static ConvParams create(ParamFactory<T>& f, const std::string& prefix, Index in, Index out) {
        return {f.weight(prefix + ".weight", {out, in, 3, 3}), f.constant(prefix + ".bias", {out}, T(0))};
    }
    Tensor<T> operator()(const Tensor<T>& x) const { return conv2d_3x3(x, weight, &bias); }
};

struct BlockConfig {
    Index channels = 0;
    Index num_heads = 1;
    double mlp_ratio = 4.0;
    BlockKind kind = BlockKind::dab;
    Index window_size = 8;  // DAB
    Index interval = 4;     // SAB
    bool qkv_bias = true;

    Index hidden_dim() const { return static_cast<Index>(std::lround(static_cast<double>(channels) * mlp_ratio)); }
    Index attention_extent() const { return kind == BlockKind::dab ? window_size : interval; }

    void validate() const {
        AttentionConfig{channels, num_heads, qkv_bias}.validate();
        if (hidden_dim() < 1) throw ConfigError("mlp hidden dim must be >= 1");
        if (window_size < 1) throw ConfigError("window_size must be >= 1");
        if (interval < 1) throw ConfigError("interval must be >= 1");
    }
};

// Pre-norm transformer block:
//   x' = x + MSA(LN(x)),  out = x' + MLP(LN(x'))
// where MSA is D-MSA for a DAB and S-MSA for a SAB.
template <typename T>
class TransformerBlock {
public:
    TransformerBlock() = default;

    static TransformerBlock create(ParamFactory<T>& f, const std::string& prefix, const BlockConfig& cfg) {
        cfg.validate();
        TransformerBlock b;
        b.cfg_ = cfg;
        const Index c = cfg.channels;
        b.norm1_ = LayerNormParams<T>::create(f, prefix + ".norm1", c);
        b.attn_.qkv_weight = f.weight(prefix + ".attn.qkv.weight", {c, 3 * c});
        if (cfg.qkv_bias) b.attn_.qkv_bias = f.constant(prefix + ".attn.qkv.bias", {3 * c}, T(0));
        b.attn_.proj_weight = f.weight(prefix + ".attn.proj.weight", {c, c});
        b.attn_.proj_bias = f.constant(prefix + ".attn.proj.bias", {c}, T(0));
        b.norm2_ = LayerNormParams<T>::create(f, prefix + ".norm2", c);
        b.fc1_ = LinearParams<T>::create(f, prefix + ".mlp.fc1", c, cfg.hidden_dim());
        b.fc2_ = LinearParams<T>::create(f, prefix + ".mlp.fc2", cfg.hidden_dim(), c);
        return b;
    }

    // x: [B,h,w,C]
    Tensor<T> forward(const Tensor<T>& x) const {
        if (x.rank() != 4 || x.dim(3) != cfg_.channels)
            throw DimensionError("transformer block expects [B,h,w," + std::to_string(cfg_.channels) +
                                 "], got " + shape_str(x.shape()));
        const AttentionConfig acfg{cfg_.channels, cfg_.num_heads, cfg_.qkv_bias};
        auto normed = norm1_(x);
        auto attended = cfg_.kind == BlockKind::dab ? d_msa(normed, cfg_.window_size, attn_, acfg)
                                                    : s_msa(normed, cfg_.interval, attn_, acfg);
        auto mid = add(x, attended);
        auto hidden = gelu(fc1_(norm2_(mid)));
        return add(mid, fc2_(hidden));
    }

    const BlockConfig& config() const { return cfg_; }
    const AttentionWeights<T>& attention() const { return attn_; }

private:
    BlockConfig cfg_;
    LayerNormParams<T> norm1_, norm2_;
    AttentionWeights<T> attn_;
    LinearParams<T> fc1_, fc2_;
};

enum class BlockPattern { alternate, all_dense, all_sparse };

inline const char* to_string(BlockPattern p) {
    switch (p) {
    case BlockPattern::alternate: return "alternate";
    case BlockPattern::all_dense: return "all_dense";
    case BlockPattern::all_sparse: return "all_sparse";
    }
    return "alternate";
}

struct ResidualGroupConfig {
    Index channels = 0;
    Index num_heads = 1;
    Index num_pairs = 3;
    double mlp_ratio = 4.0;
    Index window_size = 8;
    Index interval = 4;
    bool qkv_bias = true;
    // Anything other than `alternate` is an ablation arm, never a preset.
    BlockPattern pattern = BlockPattern::alternate;

    BlockKind kind_at(Index i) const {
        switch (pattern) {
        case BlockPattern::all_dense: return BlockKind::dab;
        case BlockPattern::all_sparse: return BlockKind::sab;
        default: return i % 2 == 0 ? BlockKind::dab : BlockKind::sab;
        }
    }
};

// N_B (DAB, SAB) pairs followed by a 3x3 conv, wrapped in a skip:
//   y = x + Conv(blocks(x))
template <typename T>
class ResidualGroup {
public:
    ResidualGroup() = default;

    static ResidualGroup create(ParamFactory<T>& f, const std::string& prefix,
                                const ResidualGroupConfig& cfg) {
        if (cfg.num_pairs < 1) throw ConfigError("residual group needs at least one block pair");
        ResidualGroup g;
        g.cfg_ = cfg;
        for (Index i = 0; i < 2 * cfg.num_pairs; ++i) {
            BlockConfig bc{cfg.channels, cfg.num_heads, cfg.mlp_ratio, cfg.kind_at(i),
                           cfg.window_size, cfg.interval, cfg.qkv_bias};
            g.blocks_.push_back(
                TransformerBlock<T>::create(f, prefix + ".blocks." + std::to_string(i), bc));
        }
        if (cfg.pattern == BlockPattern::alternate)
            for (std::size_t i = 0; i < g.blocks_.size(); ++i)
                if (g.blocks_[i].config().kind != (i % 2 == 0 ? BlockKind::dab : BlockKind::sab))
                    throw ConfigError("residual group blocks must alternate DAB, SAB");
        g.conv_ = ConvParams<T>::create(f, prefix + ".conv", cfg.channels, cfg.channels);
        return g;
    }

    // x: [B,h,w,C]
    Tensor<T> forward(const Tensor<T>& x) const {
        Tensor<T> y = x;
        for (const auto& b : blocks_) y = b.forward(y);
        auto nchw = permute(y, {0, 3, 1, 2});
        auto refined = permute(conv_(nchw), {0, 2, 3, 1});
        return add(x, refined);
    }

    const std::vector<TransformerBlock<T>>& blocks() const { return blocks_; }
    const ResidualGroupConfig& config() const { return cfg_; }

private:
    ResidualGroupConfig cfg_;
    std::vector<TransformerBlock<T>> blocks_;
    ConvParams<T> conv_;
};

} // namespace art
