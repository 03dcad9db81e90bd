#pragma once

#include <cstdint>
#include <cstdio>
#include <string>

#include "art/model.hpp"

namespace art {

using Count = std::uint64_t;

namespace detail {
inline Count round_up(Count v, Count k) { return (v + k - 1) / k * k; }
} // namespace detail

// Full self-attention over all h*w tokens: 4hwC^2 + 2(hw)^2 C.
inline Count cost_msa(Count h, Count w, Count c) {
    const Count n = h * w;
    return 4 * n * c * c + 2 * n * n * c;
}

// Dense window attention: 4hwC^2 + 2W^2 hwC, with h and w padded up to
// multiples of the window.
inline Count cost_dmsa(Count h, Count w, Count c, Count window) {
    const Count n = detail::round_up(h, window) * detail::round_up(w, window);
    return 4 * n * c * c + 2 * window * window * n * c;
}

// Sparse grid attention: 4hwC^2 + 2(h/I)(w/I) hwC, with h and w padded up to
// multiples of the interval.
inline Count cost_smsa(Count h, Count w, Count c, Count interval) {
    const Count hp = detail::round_up(h, interval), wp = detail::round_up(w, interval);
    const Count n = hp * wp;
    return 4 * n * c * c + 2 * (hp / interval) * (wp / interval) * n * c;
}

namespace detail {
inline Count conv_params(Count in, Count out) { return 9 * in * out + out; }
inline Count conv_macs(Count in, Count out, Count pixels) { return 9 * in * out * pixels; }
} // namespace detail

// Closed-form trainable parameter count.
inline Count count_params(const ModelConfig& cfg) {
    cfg.validate();
    const Count c = static_cast<Count>(cfg.embed_channels);
    const Count hidden = static_cast<Count>(std::lround(static_cast<double>(c) * cfg.mlp_ratio));
    const Count cin = static_cast<Count>(cfg.in_channels);
    const Count block = 4 * c                               // two LayerNorms
                        + 3 * c * c + (cfg.qkv_bias ? 3 * c : 0)  // qkv
                        + c * c + c                         // out projection
                        + c * hidden + hidden + hidden * c + c;  // MLP
    const Count group = 2 * static_cast<Count>(cfg.pairs_per_group) * block + detail::conv_params(c, c);
    Count total = detail::conv_params(cin, c) + 2 * c + static_cast<Count>(cfg.num_groups) * group +
                  detail::conv_params(c, c);
    if (cfg.task == Task::sr) {
        const Count mid = static_cast<Count>(cfg.head_mid_channels);
        total += detail::conv_params(c, mid);
        if (cfg.scale == 3)
            total += detail::conv_params(mid, 9 * mid);
        else
            total += (cfg.scale == 4 ? 2 : 1) * detail::conv_params(mid, 4 * mid);
        total += detail::conv_params(mid, cin);
    } else {
        total += detail::conv_params(c, cin);
    }
    return total;
}

struct CostReport {
    Count params_total = 0;
    Count mult_adds_total = 0;
    Count attention_proj = 0;    // qkv + output projections
    Count attention_matmul = 0;  // QK^T and AV
    Count mlp = 0;
    Count conv = 0;  // shallow, group and body convs
    Count head = 0;  // restoration head convs
    Index out_h = 0, out_w = 0;
    Index body_h = 0, body_w = 0;

    Count breakdown_sum() const { return attention_proj + attention_matmul + mlp + conv + head; }

    std::string to_text() const {
        char buf[640];
        std::snprintf(buf, sizeof buf,
                      "output size        : %lld x %lld\n"
                      "body resolution    : %lld x %lld\n"
                      "params             : %llu (%.2f M)\n"
                      "mult-adds          : %llu (%.1f G)\n"
                      "  attention proj   : %llu\n"
                      "  attention matmul : %llu\n"
                      "  mlp              : %llu\n"
                      "  conv             : %llu\n"
                      "  head             : %llu\n",
                      static_cast<long long>(out_h), static_cast<long long>(out_w),
                      static_cast<long long>(body_h), static_cast<long long>(body_w),
                      static_cast<unsigned long long>(params_total), params_total / 1e6,
                      static_cast<unsigned long long>(mult_adds_total), mult_adds_total / 1e9,
                      static_cast<unsigned long long>(attention_proj),
                      static_cast<unsigned long long>(attention_matmul),
                      static_cast<unsigned long long>(mlp), static_cast<unsigned long long>(conv),
                      static_cast<unsigned long long>(head));
        return buf;
    }

    KeyValueText to_kv() const {
        KeyValueText kv;
        kv.set("out_h", std::to_string(out_h));
        kv.set("out_w", std::to_string(out_w));
        kv.set("body_h", std::to_string(body_h));
        kv.set("body_w", std::to_string(body_w));
        kv.set("params", std::to_string(params_total));
        kv.set("mult_adds", std::to_string(mult_adds_total));
        kv.set("mult_adds_attention_proj", std::to_string(attention_proj));
        kv.set("mult_adds_attention_matmul", std::to_string(attention_matmul));
        kv.set("mult_adds_mlp", std::to_string(mlp));
        kv.set("mult_adds_conv", std::to_string(conv));
        kv.set("mult_adds_head", std::to_string(head));
        return kv;
    }
};

// Multiply-accumulates of every matmul and conv for one image whose restored
// output is out_h x out_w. Biases, LN, softmax and activations are excluded.
inline CostReport model_cost(const ModelConfig& cfg, Index out_h, Index out_w) {
    cfg.validate();
    const Index s = cfg.output_scale();
    if (out_h < 1 || out_w < 1 || out_h % s != 0 || out_w % s != 0)
        throw ConfigError("output size " + std::to_string(out_h) + "x" + std::to_string(out_w) +
                          " must be positive and divisible by the scale " + std::to_string(s));
    CostReport r;
    r.out_h = out_h;
    r.out_w = out_w;
    r.body_h = out_h / s;
    r.body_w = out_w / s;
    const Count h = static_cast<Count>(r.body_h), w = static_cast<Count>(r.body_w), hw = h * w;
    const Count c = static_cast<Count>(cfg.embed_channels);
    const Count hidden = static_cast<Count>(std::lround(static_cast<double>(c) * cfg.mlp_ratio));
    const Count cin = static_cast<Count>(cfg.in_channels);

    ResidualGroupConfig pattern;
    pattern.pattern = cfg.block_pattern;
    for (Index g = 0; g < cfg.num_groups; ++g) {
        const Count interval = static_cast<Count>(cfg.intervals[static_cast<std::size_t>(g)]);
        for (Index b = 0; b < 2 * cfg.pairs_per_group; ++b) {
            const bool dense = pattern.kind_at(b) == BlockKind::dab;
            const Count k = dense ? static_cast<Count>(cfg.window_size) : interval;
            const Count padded = detail::round_up(h, k) * detail::round_up(w, k);
            const Count total = dense ? cost_dmsa(h, w, c, k) : cost_smsa(h, w, c, k);
            r.attention_proj += 4 * padded * c * c;
            r.attention_matmul += total - 4 * padded * c * c;
            r.mlp += 2 * hw * c * hidden;
        }
        r.conv += detail::conv_macs(c, c, hw);
    }
    r.conv += detail::conv_macs(cin, c, hw) + detail::conv_macs(c, c, hw);

    if (cfg.task == Task::sr) {
        const Count mid = static_cast<Count>(cfg.head_mid_channels);
        r.head += detail::conv_macs(c, mid, hw);
        Count pixels = hw;
        if (cfg.scale == 3) {
            r.head += detail::conv_macs(mid, 9 * mid, pixels);
            pixels *= 9;
        } else {
            for (int st = 0; st < (cfg.scale == 4 ? 2 : 1); ++st) {
                r.head += detail::conv_macs(mid, 4 * mid, pixels);
                pixels *= 4;
            }
        }
        r.head += detail::conv_macs(mid, cin, pixels);
    } else {
        r.head += detail::conv_macs(c, cin, hw);
    }
    r.mult_adds_total = r.breakdown_sum();
    r.params_total = count_params(cfg);
    return r;
}

} // namespace art
