#pragma once

#include <atomic>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "art/blocks.hpp"
#include "art/kv_text.hpp"

namespace art {

enum class Task { sr, denoise, car };

inline const char* to_string(Task t) {
    switch (t) {
    case Task::sr: return "sr";
    case Task::denoise: return "denoise";
    case Task::car: return "car";
    }
    return "sr";
}

inline Task parse_task(const std::string& s) {
    if (s == "sr") return Task::sr;
    if (s == "denoise") return Task::denoise;
    if (s == "car") return Task::car;
    throw ConfigError("key 'task': expected sr, denoise or car, got '" + s + "'");
}

inline BlockPattern parse_block_pattern(const std::string& s) {
    if (s == "alternate") return BlockPattern::alternate;
    if (s == "all_dense") return BlockPattern::all_dense;
    if (s == "all_sparse") return BlockPattern::all_sparse;
    throw ConfigError("key 'block_pattern': expected alternate, all_dense or all_sparse, got '" + s + "'");
}

struct ModelConfig {
    Index in_channels = 3;
    Index embed_channels = 180;
    Index num_groups = 6;
    Index pairs_per_group = 3;
    Index window_size = 8;
    std::vector<Index> intervals{4, 4, 4, 4, 4, 4};
    double mlp_ratio = 4.0;
    Index num_heads = 6;
    Task task = Task::sr;
    Index scale = 4;  // 0 unless task == sr
    Index head_mid_channels = 64;
    BlockPattern block_pattern = BlockPattern::alternate;
    bool qkv_bias = true;

    Index output_scale() const { return task == Task::sr ? scale : 1; }

    void validate() const {
        if (in_channels != 1 && in_channels != 3) throw ConfigError("key 'in_channels': must be 1 or 3");
        if (embed_channels < 1) throw ConfigError("key 'embed_channels': must be >= 1");
        if (num_groups < 1) throw ConfigError("key 'num_groups': must be >= 1");
        if (pairs_per_group < 1) throw ConfigError("key 'pairs_per_group': must be >= 1");
        if (window_size < 1) throw ConfigError("key 'window_size': must be >= 1");
        if (static_cast<Index>(intervals.size()) != num_groups)
            throw ConfigError("key 'intervals': expected " + std::to_string(num_groups) +
                              " entries (one per group), got " + std::to_string(intervals.size()));
        for (Index i : intervals)
            if (i < 1) throw ConfigError("key 'intervals': every interval must be >= 1");
        if (!(mlp_ratio > 0.0)) throw ConfigError("key 'mlp_ratio': must be > 0");
        if (num_heads < 1 || embed_channels % num_heads != 0)
            throw ConfigError("key 'num_heads': must divide embed_channels");
        if (std::lround(static_cast<double>(embed_channels) * mlp_ratio) < 1)
            throw ConfigError("key 'mlp_ratio': hidden dim rounds to zero");
        if (task == Task::sr) {
            if (scale != 2 && scale != 3 && scale != 4)
                throw ConfigError("key 'scale': super-resolution scale must be 2, 3 or 4");
            if (head_mid_channels < 1) throw ConfigError("key 'head_mid_channels': must be >= 1");
        } else if (scale != 0) {
            throw ConfigError("key 'scale': only valid for task=sr");
        }
    }

    KeyValueText to_kv() const {
        KeyValueText kv;
        kv.set("task", to_string(task));
        kv.set("scale", std::to_string(scale));
        kv.set("in_channels", std::to_string(in_channels));
        kv.set("embed_channels", std::to_string(embed_channels));
        kv.set("num_groups", std::to_string(num_groups));
        kv.set("pairs_per_group", std::to_string(pairs_per_group));
        kv.set("window_size", std::to_string(window_size));
        kv.set("intervals", join_ints(intervals));
        kv.set("mlp_ratio", format_double(mlp_ratio));
        kv.set("num_heads", std::to_string(num_heads));
        kv.set("head_mid_channels", std::to_string(head_mid_channels));
        kv.set("block_pattern", to_string(block_pattern));
        kv.set("qkv_bias", qkv_bias ? "true" : "false");
        return kv;
    }

    std::string to_text() const { return to_kv().to_text(); }

    static const std::vector<std::string>& keys() {
        static const std::vector<std::string> k{"task", "scale", "in_channels", "embed_channels",
                                                "num_groups", "pairs_per_group", "window_size",
                                                "intervals", "mlp_ratio", "num_heads",
                                                "head_mid_channels", "block_pattern", "qkv_bias"};
        return k;
    }

    // Applies one key; returns false if the key is not a model key.
    bool apply(const std::string& key, const std::string& value) {
        if (key == "task") task = parse_task(value);
        else if (key == "scale") scale = parse_int(key, value);
        else if (key == "in_channels") in_channels = parse_int(key, value);
        else if (key == "embed_channels") embed_channels = parse_int(key, value);
        else if (key == "num_groups") num_groups = parse_int(key, value);
        else if (key == "pairs_per_group") pairs_per_group = parse_int(key, value);
        else if (key == "window_size") window_size = parse_int(key, value);
        else if (key == "intervals") {
            intervals.clear();
            for (long long v : parse_int_list(key, value)) intervals.push_back(v);
        } else if (key == "mlp_ratio") mlp_ratio = parse_double(key, value);
        else if (key == "num_heads") num_heads = parse_int(key, value);
        else if (key == "head_mid_channels") head_mid_channels = parse_int(key, value);
        else if (key == "block_pattern") block_pattern = parse_block_pattern(value);
        else if (key == "qkv_bias") qkv_bias = parse_bool(key, value);
        else return false;
        return true;
    }

    static ModelConfig from_kv(const KeyValueText& kv) {
        ModelConfig cfg;
        for (const auto& [k, v] : kv.entries())
            if (!cfg.apply(k, v)) throw ConfigError("unknown model config key '" + k + "'");
        cfg.validate();
        return cfg;
    }

    // Name of the first field that differs, or empty when identical.
    std::string first_difference(const ModelConfig& other) const {
        const auto a = to_kv(), b = other.to_kv();
        for (const auto& key : keys())
            if (a.get(key) != b.get(key)) return key;
        return {};
    }

    bool operator==(const ModelConfig& other) const { return first_difference(other).empty(); }
};

// Named configurations. SR intervals (4,...), denoise (16,16,12,12,8,8),
// CAR (18,18,13,13,7,7); ART-S halves the MLP ratio and uses interval 8.
inline std::optional<ModelConfig> preset(const std::string& name) {
    ModelConfig c;
    auto sr = [&](Index s) {
        c.task = Task::sr;
        c.scale = s;
        return c;
    };
    if (name == "art_x2") return sr(2);
    if (name == "art_x3") return sr(3);
    if (name == "art_x4") return sr(4);
    if (name == "art_s_x4") {
        c.mlp_ratio = 2.0;
        c.intervals = {8, 8, 8, 8, 8, 8};
        return sr(4);
    }
    if (name == "art_denoise") {
        c.task = Task::denoise;
        c.scale = 0;
        c.intervals = {16, 16, 12, 12, 8, 8};
        return c;
    }
    if (name == "art_car") {
        c.task = Task::car;
        c.scale = 0;
        c.in_channels = 1;
        c.intervals = {18, 18, 13, 13, 7, 7};
        return c;
    }
    ModelConfig tiny;
    tiny.embed_channels = 16;
    tiny.num_groups = 1;
    tiny.pairs_per_group = 1;
    tiny.window_size = 4;
    tiny.intervals = {2};
    tiny.mlp_ratio = 2.0;
    tiny.num_heads = 2;
    tiny.head_mid_channels = 16;
    if (name == "tiny_sr" || name == "tiny_sr_x2") {
        tiny.task = Task::sr;
        tiny.scale = 2;
        return tiny;
    }
    if (name == "tiny_sr_x4") {
        tiny.task = Task::sr;
        tiny.scale = 4;
        return tiny;
    }
    if (name == "tiny_denoise") {
        tiny.task = Task::denoise;
        tiny.scale = 0;
        return tiny;
    }
    if (name == "tiny_car") {
        tiny.task = Task::car;
        tiny.scale = 0;
        tiny.in_channels = 1;
        return tiny;
    }
    return std::nullopt;
}

inline const std::vector<std::string>& preset_names() {
    static const std::vector<std::string> names{"art_x2",      "art_x3",       "art_x4",
                                                "art_s_x4",    "art_denoise",  "art_car",
                                                "tiny_sr",     "tiny_sr_x4",   "tiny_denoise",
                                                "tiny_car"};
    return names;
}

struct BlockInfo {
    Index group;
    Index block;
    BlockKind kind;
    Index window_size;
    Index interval;
};

// Intermediate features captured during forward.
template <typename T>
struct ForwardProbe {
    Tensor<T> shallow;  // F0, [B,C,H,W]
    Tensor<T> deep;     // F1 after the body conv
    Tensor<T> body;     // F_R = F0 + F1
};

// Shallow conv -> LN -> residual groups -> body conv -> + F0 -> head.
template <typename T>
class ArtModel {
public:
    static ArtModel build(const ModelConfig& cfg, std::uint64_t seed = 0) {
        cfg.validate();
        ArtModel m;
        m.cfg_ = cfg;
        ParamFactory<T> f(m.params_, seed);
        const Index c = cfg.embed_channels;
        m.conv_first_ = ConvParams<T>::create(f, "conv_first", cfg.in_channels, c);
        m.embed_norm_ = LayerNormParams<T>::create(f, "embed_norm", c);
        for (Index g = 0; g < cfg.num_groups; ++g) {
            ResidualGroupConfig gc;
            gc.channels = c;
            gc.num_heads = cfg.num_heads;
            gc.num_pairs = cfg.pairs_per_group;
            gc.mlp_ratio = cfg.mlp_ratio;
            gc.window_size = cfg.window_size;
            gc.interval = cfg.intervals[static_cast<std::size_t>(g)];
            gc.qkv_bias = cfg.qkv_bias;
            gc.pattern = cfg.block_pattern;
            m.groups_.push_back(ResidualGroup<T>::create(f, "groups." + std::to_string(g), gc));
        }
        m.conv_body_ = ConvParams<T>::create(f, "conv_body", c, c);
        if (cfg.task == Task::sr) {
            const Index mid = cfg.head_mid_channels;
            m.head_in_ = ConvParams<T>::create(f, "head.conv_in", c, mid);
            if (cfg.scale == 3) {
                m.upsample_.push_back(ConvParams<T>::create(f, "head.upsample.0", mid, 9 * mid));
            } else {
                const Index stages = cfg.scale == 4 ? 2 : 1;
                for (Index s = 0; s < stages; ++s)
                    m.upsample_.push_back(
                        ConvParams<T>::create(f, "head.upsample." + std::to_string(s), mid, 4 * mid));
            }
            m.head_out_ = ConvParams<T>::create(f, "head.conv_out", mid, cfg.in_channels);
        } else {
            m.head_out_ = ConvParams<T>::create(f, "head.conv_out", c, cfg.in_channels);
        }
        return m;
    }

    ArtModel(ArtModel&&) noexcept = default;
    ArtModel& operator=(ArtModel&&) noexcept = default;
    ArtModel(const ArtModel&) = delete;
    ArtModel& operator=(const ArtModel&) = delete;

    // image: [B, C_in, H, W] -> [B, C_in, sH, sW]
    Tensor<T> forward(const Tensor<T>& image, ForwardProbe<T>* probe = nullptr) const {
        if (image.rank() != 4 || image.dim(1) != cfg_.in_channels)
            throw DimensionError("model expects [B," + std::to_string(cfg_.in_channels) +
                                 ",H,W], got " + shape_str(image.shape()));
        if (image.dim(2) < 1 || image.dim(3) < 1) throw DimensionError("model input has empty extent");
        forwards_->fetch_add(1, std::memory_order_relaxed);

        auto shallow = conv_first_(image);
        auto tokens = embed_norm_(permute(shallow, {0, 2, 3, 1}));
        for (const auto& g : groups_) tokens = g.forward(tokens);
        auto deep = conv_body_(permute(tokens, {0, 3, 1, 2}));
        auto body = add(shallow, deep);
        if (probe) *probe = {shallow, deep, body};

        Tensor<T> out;
        if (cfg_.task == Task::sr) {
            auto h = head_in_(body);
            const Index r = cfg_.scale == 3 ? 3 : 2;
            for (const auto& up : upsample_) h = pixel_shuffle(up(h), r);
            out = head_out_(h);
        } else {
            out = add(head_out_(body), image);
        }
        for (const T v : out.data())
            if (!std::isfinite(v)) throw NumericError("model forward produced a non-finite output");
        return out;
    }

    const ModelConfig& config() const { return cfg_; }
    std::vector<Parameter<T>>& parameters() { return params_; }
    const std::vector<Parameter<T>>& parameters() const { return params_; }

    Index parameter_count() const {
        Index n = 0;
        for (const auto& p : params_) n += p.tensor.numel();
        return n;
    }

    Tensor<T>& parameter(const std::string& name) {
        for (auto& p : params_)
            if (p.name == name) return p.tensor;
        throw ConfigError("no parameter named " + name);
    }

    void zero_grad() {
        for (auto& p : params_) p.tensor.zero_grad();
    }

    std::vector<BlockInfo> block_layout() const {
        std::vector<BlockInfo> out;
        for (std::size_t g = 0; g < groups_.size(); ++g) {
            const auto& blocks = groups_[g].blocks();
            for (std::size_t b = 0; b < blocks.size(); ++b) {
                const auto& bc = blocks[b].config();
                out.push_back({static_cast<Index>(g), static_cast<Index>(b), bc.kind, bc.window_size,
                               bc.interval});
            }
        }
        return out;
    }

    const std::vector<ResidualGroup<T>>& groups() const { return groups_; }

    std::uint64_t forward_count() const { return forwards_->load(); }
    void reset_forward_count() { forwards_->store(0); }

private:
    ArtModel() = default;

    ModelConfig cfg_;
    std::vector<Parameter<T>> params_;
    ConvParams<T> conv_first_;
    LayerNormParams<T> embed_norm_;
    std::vector<ResidualGroup<T>> groups_;
    ConvParams<T> conv_body_;
    ConvParams<T> head_in_;
    std::vector<ConvParams<T>> upsample_;
    ConvParams<T> head_out_;
    std::shared_ptr<std::atomic<std::uint64_t>> forwards_ = std::make_shared<std::atomic<std::uint64_t>>(0);
};

} // namespace art
