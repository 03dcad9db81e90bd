#pragma once

#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>

#include "art/checkpoint.hpp"
#include "art/image.hpp"

namespace art {

template <typename T>
Tensor<T> l1_loss(const Tensor<T>& pred, const Tensor<T>& target) {
    return mean(abs(sub(pred, target)));
}

// Elementwise sqrt(d^2 + eps^2), averaged.
template <typename T>
Tensor<T> charbonnier_loss(const Tensor<T>& pred, const Tensor<T>& target, double eps = 1e-3) {
    return mean(sqrt(add_scalar(square(sub(pred, target)), static_cast<T>(eps * eps))));
}

struct TrainConfig {
    Index batch_size = 32;
    Index lq_patch = 64;
    Index total_iters = 500000;
    double lr_init = 2e-4;
    std::vector<Index> milestones{250000, 400000, 450000, 475000};
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double weight_decay = 0.0;
    double charbonnier_eps = 1e-3;
    std::uint64_t seed = 0;
    bool augment = true;
    Index log_every = 100;
    Index checkpoint_every = 5000;

    // Published batch/patch sizes per task.
    static TrainConfig for_task(Task task) {
        TrainConfig c;
        if (task == Task::denoise) {
            c.batch_size = 8;
            c.lq_patch = 128;
        } else if (task == Task::car) {
            c.batch_size = 8;
            c.lq_patch = 126;
        }
        return c;
    }

    void validate() const {
        if (batch_size < 1) throw ConfigError("key 'batch_size': must be >= 1");
        if (lq_patch < 1) throw ConfigError("key 'lq_patch': must be >= 1");
        if (total_iters < 0) throw ConfigError("key 'total_iters': must be >= 0");
        if (!(lr_init > 0)) throw ConfigError("key 'lr_init': must be > 0");
        for (std::size_t i = 0; i < milestones.size(); ++i) {
            if (i && milestones[i] <= milestones[i - 1])
                throw ConfigError("key 'milestones': must be strictly increasing");
            if (milestones[i] < 1 || milestones[i] >= total_iters)
                throw ConfigError("key 'milestones': every milestone must lie in [1, total_iters)");
        }
        if (!(beta1 >= 0 && beta1 < 1)) throw ConfigError("key 'beta1': must be in [0,1)");
        if (!(beta2 >= 0 && beta2 < 1)) throw ConfigError("key 'beta2': must be in [0,1)");
        if (!(adam_eps > 0)) throw ConfigError("key 'adam_eps': must be > 0");
        if (weight_decay < 0) throw ConfigError("key 'weight_decay': must be >= 0");
        if (!(charbonnier_eps > 0)) throw ConfigError("key 'charbonnier_eps': must be > 0");
        if (log_every < 1) throw ConfigError("key 'log_every': must be >= 1");
        if (checkpoint_every < 0) throw ConfigError("key 'checkpoint_every': must be >= 0");
    }

    bool apply(const std::string& key, const std::string& value) {
        if (key == "batch_size") batch_size = parse_int(key, value);
        else if (key == "lq_patch") lq_patch = parse_int(key, value);
        else if (key == "total_iters") total_iters = parse_int(key, value);
        else if (key == "lr_init") lr_init = parse_double(key, value);
        else if (key == "milestones") {
            milestones.clear();
            for (long long v : parse_int_list(key, value)) milestones.push_back(v);
        } else if (key == "beta1") beta1 = parse_double(key, value);
        else if (key == "beta2") beta2 = parse_double(key, value);
        else if (key == "adam_eps") adam_eps = parse_double(key, value);
        else if (key == "weight_decay") weight_decay = parse_double(key, value);
        else if (key == "charbonnier_eps") charbonnier_eps = parse_double(key, value);
        else if (key == "seed") seed = static_cast<std::uint64_t>(parse_int(key, value));
        else if (key == "augment") augment = parse_bool(key, value);
        else if (key == "log_every") log_every = parse_int(key, value);
        else if (key == "checkpoint_every") checkpoint_every = parse_int(key, value);
        else return false;
        return true;
    }

    KeyValueText to_kv() const {
        KeyValueText kv;
        kv.set("batch_size", std::to_string(batch_size));
        kv.set("lq_patch", std::to_string(lq_patch));
        kv.set("total_iters", std::to_string(total_iters));
        kv.set("lr_init", format_double(lr_init));
        kv.set("milestones", join_ints(milestones));
        kv.set("beta1", format_double(beta1));
        kv.set("beta2", format_double(beta2));
        kv.set("adam_eps", format_double(adam_eps));
        kv.set("weight_decay", format_double(weight_decay));
        kv.set("charbonnier_eps", format_double(charbonnier_eps));
        kv.set("seed", std::to_string(seed));
        kv.set("augment", augment ? "true" : "false");
        kv.set("log_every", std::to_string(log_every));
        kv.set("checkpoint_every", std::to_string(checkpoint_every));
        return kv;
    }

    // lr_init halved once per milestone reached after `completed` iterations.
    double lr_at(Index completed) const {
        double lr = lr_init;
        for (Index m : milestones)
            if (completed >= m) lr *= 0.5;
        return lr;
    }
};

template <typename T>
struct TrainState {
    Index iteration = 0;
    double lr = 0.0;
    std::vector<std::vector<T>> m, v;  // Adam moments, one per parameter
    std::mt19937_64 rng;

    static TrainState fresh(const std::vector<Parameter<T>>& params, const TrainConfig& cfg) {
        TrainState s;
        s.lr = cfg.lr_at(0);
        s.rng.seed(cfg.seed);
        for (const auto& p : params) {
            s.m.emplace_back(p.tensor.data().size(), T(0));
            s.v.emplace_back(p.tensor.data().size(), T(0));
        }
        return s;
    }
};

// One bias-corrected Adam update; `step` is 1 on the first call.
template <typename T>
void adam_step(std::vector<Parameter<T>>& params, TrainState<T>& state, double lr, Index step,
               const TrainConfig& cfg) {
    if (state.m.size() != params.size()) throw UsageError("adam_step: optimizer state does not match parameters");
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i].tensor;
        if (!p.has_grad()) continue;
        auto& data = p.data();
        const auto& g = p.grad();
        auto& m = state.m[i];
        auto& v = state.v[i];
        for (std::size_t k = 0; k < data.size(); ++k) {
            const double gk = static_cast<double>(g[k]) + cfg.weight_decay * static_cast<double>(data[k]);
            m[k] = static_cast<T>(cfg.beta1 * m[k] + (1.0 - cfg.beta1) * gk);
            v[k] = static_cast<T>(cfg.beta2 * v[k] + (1.0 - cfg.beta2) * gk * gk);
            const double mhat = m[k] / c1, vhat = v[k] / c2;
            data[k] = static_cast<T>(data[k] - lr * mhat / (std::sqrt(vhat) + cfg.adam_eps));
        }
    }
}

// Aligned LQ/HQ pairs; HQ extents are `scale` times the LQ extents.
struct PairedDataset {
    Index scale = 1;
    std::vector<std::string> names;
    std::vector<Image> lq, hq;

    void add(std::string name, Image lq_img, Image hq_img) {
        if (lq_img.channels != hq_img.channels || hq_img.height != scale * lq_img.height ||
            hq_img.width != scale * lq_img.width)
            throw DimensionError("pair '" + name + "': HQ " + hq_img.shape_text() + " is not x" +
                                 std::to_string(scale) + " of LQ " + lq_img.shape_text());
        names.push_back(std::move(name));
        lq.push_back(std::move(lq_img));
        hq.push_back(std::move(hq_img));
    }
    std::size_t size() const { return lq.size(); }
};

template <typename T>
struct Batch {
    Tensor<T> lq, hq;
};

// Random LQ patch (and the matching HQ window) per sample, with an optional
// dihedral transform applied identically to both.
template <typename T>
Batch<T> sample_batch(const PairedDataset& ds, Index batch, Index patch, std::mt19937_64& rng, bool augment) {
    if (ds.size() == 0) throw ConfigError("training dataset is empty");
    const Index s = ds.scale;
    std::vector<Image> lqs, hqs;
    for (Index b = 0; b < batch; ++b) {
        const std::size_t idx = std::uniform_int_distribution<std::size_t>(0, ds.size() - 1)(rng);
        const Image& lq = ds.lq[idx];
        if (lq.height < patch || lq.width < patch)
            throw ConfigError("key 'lq_patch': " + std::to_string(patch) + " exceeds LQ image '" + ds.names[idx] +
                              "' (" + lq.shape_text() + ")");
        const Index y = std::uniform_int_distribution<Index>(0, lq.height - patch)(rng);
        const Index x = std::uniform_int_distribution<Index>(0, lq.width - patch)(rng);
        Image lp = crop(lq, y, x, patch, patch), hp = crop(ds.hq[idx], y * s, x * s, patch * s, patch * s);
        if (augment) {
            const int k = std::uniform_int_distribution<int>(0, 7)(rng);
            lp = dihedral(lp, k);
            hp = dihedral(hp, k);
        }
        lqs.push_back(std::move(lp));
        hqs.push_back(std::move(hp));
    }
    std::vector<const Image*> lp, hp;
    for (Index b = 0; b < batch; ++b) {
        lp.push_back(&lqs[static_cast<std::size_t>(b)]);
        hp.push_back(&hqs[static_cast<std::size_t>(b)]);
    }
    return {to_tensor<T>(lp), to_tensor<T>(hp)};
}

struct TrainHooks {
    std::function<void(const std::string&)> log;    // receives one log line, no newline
    std::function<void(Index iteration)> checkpoint;  // called every checkpoint_every and at the end
};

inline std::string format_log_line(Index iter, double lr, double loss) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "iter=%lld lr=%s loss=%.6g", static_cast<long long>(iter),
                  format_double(lr).c_str(), loss);
    return buf;
}

// L1 for super-resolution, Charbonnier otherwise. Returns the per-iteration
// losses of this call; `state` continues from wherever it was.
template <typename T>
std::vector<double> train_loop(ArtModel<T>& model, const PairedDataset& ds, const TrainConfig& cfg,
                               TrainState<T>& state, const TrainHooks& hooks = {}) {
    cfg.validate();
    if (ds.scale != model.config().output_scale())
        throw ConfigError("dataset scale " + std::to_string(ds.scale) + " does not match model scale " +
                          std::to_string(model.config().output_scale()));
    const bool sr = model.config().task == Task::sr;
    std::vector<double> losses;
    double window = 0;
    Index window_count = 0;
    while (state.iteration < cfg.total_iters) {
        state.lr = cfg.lr_at(state.iteration);
        auto batch = sample_batch<T>(ds, cfg.batch_size, cfg.lq_patch, state.rng, cfg.augment);
        model.zero_grad();
        auto pred = model.forward(batch.lq);
        auto loss = sr ? l1_loss(pred, batch.hq) : charbonnier_loss(pred, batch.hq, cfg.charbonnier_eps);
        const double value = static_cast<double>(loss.item());
        if (!std::isfinite(value))
            throw NumericError("non-finite training loss at iteration " + std::to_string(state.iteration + 1));
        backward(loss);
        adam_step(model.parameters(), state, state.lr, state.iteration + 1, cfg);
        ++state.iteration;
        losses.push_back(value);
        window += value;
        ++window_count;
        if (hooks.log && (state.iteration % cfg.log_every == 0 || state.iteration == cfg.total_iters)) {
            hooks.log(format_log_line(state.iteration, state.lr, window / static_cast<double>(window_count)));
            window = 0;
            window_count = 0;
        }
        if (hooks.checkpoint && ((cfg.checkpoint_every > 0 && state.iteration % cfg.checkpoint_every == 0) ||
                                 state.iteration == cfg.total_iters))
            hooks.checkpoint(state.iteration);
    }
    state.lr = cfg.lr_at(state.iteration);
    return losses;
}

inline constexpr char kTrainStateMagic[8] = {'A', 'R', 'T', 'S', 'T', 'A', 'T', '1'};

// Iteration, lr, RNG state and Adam moments (as f64), keyed by parameter name.
template <typename T>
void save_train_state(const TrainState<T>& state, const std::vector<Parameter<T>>& params, const std::string& path) {
    detail::ByteWriter w;
    w.bytes(kTrainStateMagic, sizeof kTrainStateMagic);
    w.u64(static_cast<std::uint64_t>(state.iteration));
    w.f64(state.lr);
    std::ostringstream rng;
    rng << state.rng;
    w.str(rng.str());
    w.u32(static_cast<std::uint32_t>(params.size()));
    for (std::size_t i = 0; i < params.size(); ++i) {
        w.str(params[i].name);
        w.u64(state.m[i].size());
        for (T x : state.m[i]) w.f64(static_cast<double>(x));
        for (T x : state.v[i]) w.f64(static_cast<double>(x));
    }
    w.write_file(path);
}

template <typename T>
TrainState<T> load_train_state(const std::vector<Parameter<T>>& params, const std::string& path) {
    auto r = detail::ByteReader<CheckpointError>::from_file(path);
    char magic[8];
    r.bytes(magic, 8);
    if (std::memcmp(magic, kTrainStateMagic, 8) != 0) throw CheckpointError(path + ": not a training state file");
    TrainState<T> s;
    s.iteration = static_cast<Index>(r.u64());
    s.lr = r.f64();
    std::istringstream rng(r.str());
    rng >> s.rng;
    if (!rng) throw CheckpointError(path + ": corrupt RNG state");
    if (r.u32() != params.size()) throw CheckpointError(path + ": parameter count differs from model");
    for (const auto& p : params) {
        if (r.str(4096) != p.name) throw CheckpointError(path + ": parameter order differs at '" + p.name + "'");
        const auto n = r.u64();
        if (n != p.tensor.data().size()) throw CheckpointError(path + ": moment size mismatch for '" + p.name + "'");
        auto& m = s.m.emplace_back(n);
        auto& v = s.v.emplace_back(n);
        for (auto& x : m) x = static_cast<T>(r.f64());
        for (auto& x : v) x = static_cast<T>(r.f64());
    }
    if (!r.at_end()) throw CheckpointError(path + ": trailing bytes");
    return s;
}

} // namespace art
