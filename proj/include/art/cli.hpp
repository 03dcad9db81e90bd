#pragma once

// Command-line driver shared by tools/art_cli.cpp and the tests.
//
//   art train   --config FILE [--key value ...]
//   art eval    --checkpoint CKPT --data DIR [--ensemble] [--tile N]
//   art infer   --checkpoint CKPT --input PNG --output PNG [--ensemble]
//   art flops   --preset NAME | --config FILE [--out-size HxW]
//   art degrade --input DIR --out DIR --task sr|denoise [--scale S] [--sigma V]
//   art init    --preset NAME --output CKPT [--zero-head]
//
// Exit codes: 0 ok, 2 configuration/usage, 3 numeric, 4 I/O or checkpoint.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

#include "art/checkpoint.hpp"
#include "art/cost_model.hpp"
#include "art/degrade.hpp"
#include "art/evaluate.hpp"
#include "art/training.hpp"

namespace art::cli {

enum ExitCode : int { ok = 0, failure = 1, config_error = 2, numeric_error = 3, io_error = 4 };

// Everything a run can be configured with: model, training, tiling, paths.
struct RunConfig {
    std::string preset;
    ModelConfig model;
    TrainConfig train;
    TileSpec tile;
    std::string data_dir, run_dir;
    Index threads = 1;
    bool ensemble = false;
    Index shave = 0;

    static const std::vector<std::string>& run_keys() {
        static const std::vector<std::string> k{"preset", "data_dir", "run_dir", "tile", "tile_overlap",
                                                "threads",  "ensemble", "shave"};
        return k;
    }

    static const std::vector<std::string>& train_keys() {
        static const std::vector<std::string> k = [] {
            std::vector<std::string> out;
            const auto kv = TrainConfig{}.to_kv();
            for (const auto& [key, v] : kv.entries()) out.push_back(key);
            return out;
        }();
        return k;
    }

    // Later sources win: defaults < preset < file < command line. Training
    // defaults follow the resolved task.
    static RunConfig resolve(const KeyValueText& merged) {
        RunConfig rc;
        if (merged.has("preset")) {
            rc.preset = merged.get("preset");
            auto p = art::preset(rc.preset);
            if (!p) throw ConfigError("key 'preset': unknown preset '" + rc.preset + "'");
            rc.model = *p;
        }
        const auto& tk = train_keys();
        const auto& rk = run_keys();
        auto is = [](const std::vector<std::string>& keys, const std::string& k) {
            return std::find(keys.begin(), keys.end(), k) != keys.end();
        };
        for (const auto& [k, v] : merged.entries()) {
            if (is(rk, k) || is(tk, k)) continue;
            if (!rc.model.apply(k, v)) throw ConfigError("unknown config key '" + k + "'");
        }
        rc.model.validate();
        rc.train = TrainConfig::for_task(rc.model.task);
        for (const auto& [k, v] : merged.entries())
            if (is(tk, k)) rc.train.apply(k, v);
        for (const auto& [k, v] : merged.entries()) {
            if (k == "data_dir") rc.data_dir = v;
            else if (k == "run_dir") rc.run_dir = v;
            else if (k == "tile") rc.tile.tile = parse_int(k, v);
            else if (k == "tile_overlap") rc.tile.overlap = parse_int(k, v);
            else if (k == "threads") rc.threads = parse_int(k, v);
            else if (k == "ensemble") rc.ensemble = parse_bool(k, v);
            else if (k == "shave") rc.shave = parse_int(k, v);
        }
        rc.tile.scale = rc.model.output_scale();
        rc.tile.validate();
        if (rc.threads < 1) throw ConfigError("key 'threads': must be >= 1");
        if (rc.shave < 0) throw ConfigError("key 'shave': must be >= 0");
        return rc;
    }

    std::string to_text() const {
        KeyValueText kv;
        if (!preset.empty()) kv.set("preset", preset);
        const auto mkv = model.to_kv(), tkv = train.to_kv();
        for (const auto& [k, v] : mkv.entries()) kv.set(k, v);
        for (const auto& [k, v] : tkv.entries()) kv.set(k, v);
        kv.set("data_dir", data_dir);
        kv.set("run_dir", run_dir);
        kv.set("tile", std::to_string(tile.tile));
        kv.set("tile_overlap", std::to_string(tile.overlap));
        return kv.to_text();
    }
};

inline KeyValueText read_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return KeyValueText::parse(ss.str(), path);
}

namespace detail {

// Collects `--key value` overrides for a fixed key set.
class Overrides {
public:
    void add(CLI::App* app, const std::string& key, const std::vector<std::string>& aliases = {}) {
        auto& slot = values_[key];
        std::string names = "--" + key;
        for (const auto& a : aliases) names += ",--" + a;
        auto* opt = app->add_option(names, slot, "config key '" + key + "'");
        opt->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
        opts_.emplace_back(key, opt);
    }
    void add_all(CLI::App* app, const std::vector<std::string>& keys) {
        for (const auto& k : keys) add(app, k);
    }
    // Merges a config file (if any) under the command-line values.
    KeyValueText merged(const std::string& config_path) const {
        KeyValueText kv;
        if (!config_path.empty()) kv = read_config_file(config_path);
        for (const auto& [key, opt] : opts_)
            if (opt->count() > 0) kv.set(key, values_.at(key));
        return kv;
    }

private:
    std::map<std::string, std::string> values_;
    std::vector<std::pair<std::string, CLI::Option*>> opts_;
};

inline void write_text_file(const std::string& path, const std::string& text, bool append = false) {
    std::ofstream out(path, append ? std::ios::app : std::ios::trunc);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << text;
    if (!out) throw IoError("write failed: " + path);
}

// Writes via a temporary file so an interrupted run never leaves a torn file.
template <typename Fn>
void write_atomically(const std::string& path, Fn write) {
    const std::string tmp = path + ".tmp";
    write(tmp);
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot replace " + path + ": " + ec.message());
}

inline std::vector<std::string> png_files(const std::string& dir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir);
    std::vector<std::string> out;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".png") out.push_back(e.path().string());
    std::sort(out.begin(), out.end());
    if (out.empty()) throw IoError("no PNG files in " + dir);
    return out;
}

inline std::pair<Index, Index> parse_size(const std::string& s) {
    const auto x = s.find('x');
    if (x == std::string::npos) throw ConfigError("key 'out-size': expected HxW, got '" + s + "'");
    return {parse_int("out-size", s.substr(0, x)), parse_int("out-size", s.substr(x + 1))};
}

} // namespace detail

inline int cmd_train(const RunConfig& rc, bool resume, std::ostream& out) {
    if (rc.data_dir.empty()) throw ConfigError("missing key 'data_dir' (dataset with HQ/ and LQ/)");
    if (rc.run_dir.empty()) throw ConfigError("missing key 'run_dir' (output directory)");
    rc.train.validate();
    namespace fs = std::filesystem;
    if (!fs::is_directory(rc.data_dir)) throw ConfigError("key 'data_dir': no such directory '" + rc.data_dir + "'");

    PairedDataset ds;
    ds.scale = rc.model.output_scale();
    for (auto& p : load_pair_dir(rc.data_dir)) {
        if (p.lq.channels != rc.model.in_channels)
            throw ConfigError("image '" + p.name + "' has " + std::to_string(p.lq.channels) +
                              " channels, model expects in_channels=" + std::to_string(rc.model.in_channels));
        ds.add(p.name, std::move(p.lq), crop_to_multiple(p.hq, ds.scale));
    }

    fs::create_directories(rc.run_dir);
    const std::string ckpt = (fs::path(rc.run_dir) / "model.ckpt").string();
    const std::string state_path = (fs::path(rc.run_dir) / "train.state").string();
    const std::string log_path = (fs::path(rc.run_dir) / "train.log").string();

    auto model = resume ? load_checkpoint<float>(ckpt, rc.model) : ArtModel<float>::build(rc.model, rc.train.seed);
    auto state = resume ? load_train_state(model.parameters(), state_path)
                        : TrainState<float>::fresh(model.parameters(), rc.train);
    if (!resume) detail::write_text_file(log_path, "");
    detail::write_text_file((fs::path(rc.run_dir) / "config.txt").string(), rc.to_text());

    TrainHooks hooks;
    hooks.log = [&](const std::string& line) {
        detail::write_text_file(log_path, line + "\n", true);
        out << line << "\n";
    };
    hooks.checkpoint = [&](Index) {
        detail::write_atomically(ckpt, [&](const std::string& p) { save_checkpoint(model, p); });
        detail::write_atomically(state_path, [&](const std::string& p) { save_train_state(state, model.parameters(), p); });
    };
    const Index start = state.iteration;
    train_loop(model, ds, rc.train, state, hooks);
    if (state.iteration == start) hooks.checkpoint(state.iteration);
    out << "trained iterations " << start << ".." << state.iteration << ", checkpoint " << ckpt << "\n";
    return ok;
}

inline int cmd_eval(const std::string& checkpoint, const RunConfig& rc, const std::string& report_path,
                    std::ostream& out) {
    if (rc.data_dir.empty()) throw ConfigError("missing key 'data_dir' (dataset with HQ/ and LQ/)");
    auto model = load_checkpoint<float>(checkpoint);
    EvalOptions opt;
    opt.task = model.config().task;
    opt.scale = model.config().output_scale();
    opt.tile = rc.tile;
    opt.ensemble = rc.ensemble;
    opt.shave = rc.shave;
    auto report = evaluate(make_restorer(model), rc.data_dir, opt);
    const auto manifest = std::filesystem::path(rc.data_dir) / "manifest.txt";
    report.degradation = std::filesystem::exists(manifest) ? read_config_file(manifest.string()).get("degradation")
                                                           : "unspecified";
    out << report.to_text();
    out << "forward_passes=" << model.forward_count() << "\n";
    if (!report_path.empty()) detail::write_text_file(report_path, report.to_kv().to_text());
    return ok;
}

inline int cmd_infer(const std::string& checkpoint, const std::string& input, const std::string& output,
                     const RunConfig& rc, std::ostream& out) {
    auto model = load_checkpoint<float>(checkpoint);
    const Image lq = read_png(input);
    if (lq.channels != model.config().in_channels)
        throw ConfigError("input has " + std::to_string(lq.channels) + " channels, model expects " +
                          std::to_string(model.config().in_channels));
    TileSpec spec = rc.tile;
    spec.scale = model.config().output_scale();
    const auto f = make_restorer(model);
    const Image restored = rc.ensemble ? self_ensemble(f, lq, spec) : infer_tiled(f, lq, spec);
    write_png(output, restored);
    out << "wrote " << output << " (" << restored.shape_text() << ")\n";
    out << "forward_passes=" << model.forward_count() << "\n";
    return ok;
}

inline int cmd_flops(const ModelConfig& cfg, const std::string& size, std::ostream& out) {
    const auto [h, w] = detail::parse_size(size);
    const auto report = model_cost(cfg, h, w);
    out << report.to_text() << "\n" << report.to_kv().to_text();
    return ok;
}

inline int cmd_degrade(const std::string& input, const std::string& out_dir, const std::string& task_name,
                       Index scale, double sigma, std::uint64_t seed, std::ostream& out) {
    const Task task = parse_task(task_name);
    if (task == Task::car)
        throw ConfigError("key 'task': car pairs must be JPEG-encoded externally; no codec is built in");
    if (task == Task::sr && scale < 2) throw ConfigError("key 'scale': must be >= 2 for task=sr");
    if (task == Task::denoise && sigma < 0) throw ConfigError("key 'sigma': must be >= 0");
    const auto files = detail::png_files(input);
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(out_dir) / "HQ");
    fs::create_directories(fs::path(out_dir) / "LQ");

    KeyValueText manifest;
    manifest.set("task", to_string(task));
    manifest.set("degradation", task == Task::sr ? "bicubic x" + std::to_string(scale)
                                                 : "awgn sigma=" + format_double(sigma));
    manifest.set("scale", std::to_string(task == Task::sr ? scale : 1));
    manifest.set("sigma", format_double(task == Task::sr ? 0.0 : sigma));
    manifest.set("seed", std::to_string(seed));
    manifest.set("images", std::to_string(files.size()));
    for (std::size_t i = 0; i < files.size(); ++i) {
        const std::string stem = fs::path(files[i]).stem().string();
        Image hq = read_png(files[i]);
        Image lq;
        if (task == Task::sr) {
            hq = crop_to_multiple(hq, scale);
            lq = degrade_bicubic(hq, scale);
        } else {
            lq = degrade_awgn(hq, sigma, seed + i);
        }
        write_png((fs::path(out_dir) / "HQ" / (stem + ".png")).string(), hq);
        write_png((fs::path(out_dir) / "LQ" / (stem + ".png")).string(), lq);
        manifest.set("image." + std::to_string(i), stem);
        manifest.set("image." + std::to_string(i) + ".noise_seed", std::to_string(task == Task::sr ? 0 : seed + i));
    }
    detail::write_text_file((fs::path(out_dir) / "manifest.txt").string(), manifest.to_text());
    out << "wrote " << files.size() << " pairs to " << out_dir << "\n";
    return ok;
}

inline int cmd_init(const ModelConfig& cfg, std::uint64_t seed, bool zero_head, const std::string& output,
                    std::ostream& out) {
    auto model = ArtModel<float>::build(cfg, seed);
    if (zero_head) {
        if (cfg.task == Task::sr) throw ConfigError("--zero-head applies to denoise/car models only");
        for (auto& p : model.parameters())
            if (p.name.rfind("head.", 0) == 0) std::fill(p.tensor.data().begin(), p.tensor.data().end(), 0.0f);
    }
    save_checkpoint(model, output);
    out << "wrote " << output << " (" << model.parameter_count() << " parameters)\n";
    return ok;
}

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"ART image restoration toolkit"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "art 1.0");

    std::string config_path, checkpoint, input, output, report_path, out_size = "640x640", task_name = "sr";
    bool resume = false, zero_head = false, ensemble_flag = false;
    Index scale = 2;
    double sigma = 25;
    long long seed = 0;

    std::vector<std::string> model_keys = ModelConfig::keys();
    std::vector<std::string> train_keys = RunConfig::train_keys();

    auto* train = app.add_subcommand("train", "train a model on a paired dataset");
    train->add_option("--config", config_path, "flat key=value config file");
    detail::Overrides train_ov;
    train_ov.add_all(train, model_keys);
    for (const auto& k : train_keys) {
        if (k == "total_iters") train_ov.add(train, k, {"iters"});
        else train_ov.add(train, k);
    }
    train_ov.add(train, "preset");
    train_ov.add(train, "data_dir", {"data"});
    train_ov.add(train, "run_dir", {"out"});
    train_ov.add(train, "threads");
    train->add_flag("--resume", resume, "continue from run_dir/model.ckpt and train.state");

    auto* eval = app.add_subcommand("eval", "score a checkpoint on <data>/HQ and <data>/LQ");
    eval->add_option("--checkpoint", checkpoint)->required();
    detail::Overrides eval_ov;
    eval_ov.add(eval, "data_dir", {"data"});
    eval_ov.add(eval, "tile");
    eval_ov.add(eval, "tile_overlap");
    eval_ov.add(eval, "shave");
    eval_ov.add(eval, "threads");
    eval->add_flag("--ensemble", ensemble_flag, "average over the 8 dihedral transforms");
    eval->add_option("--report", report_path, "also write the key=value report here");

    auto* infer = app.add_subcommand("infer", "restore one PNG");
    infer->add_option("--checkpoint", checkpoint)->required();
    infer->add_option("--input", input)->required();
    infer->add_option("--output", output)->required();
    detail::Overrides infer_ov;
    infer_ov.add(infer, "tile");
    infer_ov.add(infer, "tile_overlap");
    infer_ov.add(infer, "threads");
    infer->add_flag("--ensemble", ensemble_flag, "average over the 8 dihedral transforms");

    auto* flops = app.add_subcommand("flops", "parameter and mult-add report");
    flops->add_option("--config", config_path, "flat key=value config file");
    detail::Overrides flops_ov;
    flops_ov.add_all(flops, model_keys);
    flops_ov.add(flops, "preset");
    flops->add_option("--out-size", out_size, "restored output size HxW");

    auto* degrade = app.add_subcommand("degrade", "synthesize an LQ/HQ pair set from clean PNGs");
    degrade->add_option("--input", input, "directory of clean PNGs")->required();
    degrade->add_option("--out", output, "output directory (gets HQ/, LQ/, manifest.txt)")->required();
    degrade->add_option("--task", task_name, "sr or denoise");
    degrade->add_option("--scale", scale, "bicubic factor for sr");
    degrade->add_option("--sigma", sigma, "noise level on the 0-255 scale for denoise");
    degrade->add_option("--seed", seed, "noise seed");

    auto* init = app.add_subcommand("init", "write a freshly initialized checkpoint");
    init->add_option("--config", config_path, "flat key=value config file");
    detail::Overrides init_ov;
    init_ov.add_all(init, model_keys);
    init_ov.add(init, "preset");
    init->add_option("--seed", seed, "initialization seed");
    init->add_option("--output", output)->required();
    init->add_flag("--zero-head", zero_head, "zero the restoration head (denoise/car: identity map)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? ok : config_error;
    }

    try {
        if (train->parsed()) return cmd_train(RunConfig::resolve(train_ov.merged(config_path)), resume, out);
        if (eval->parsed()) {
            auto rc = RunConfig::resolve(eval_ov.merged(""));
            rc.ensemble = ensemble_flag;
            return cmd_eval(checkpoint, rc, report_path, out);
        }
        if (infer->parsed()) {
            auto rc = RunConfig::resolve(infer_ov.merged(""));
            rc.ensemble = ensemble_flag;
            return cmd_infer(checkpoint, input, output, rc, out);
        }
        if (flops->parsed()) {
            auto kv = flops_ov.merged(config_path);
            if (kv.entries().empty()) throw ConfigError("flops needs --preset or --config");
            return cmd_flops(RunConfig::resolve(kv).model, out_size, out);
        }
        if (degrade->parsed())
            return cmd_degrade(input, output, task_name, scale, sigma, static_cast<std::uint64_t>(seed), out);
        if (init->parsed()) {
            auto kv = init_ov.merged(config_path);
            if (kv.entries().empty()) throw ConfigError("init needs --preset or --config");
            return cmd_init(RunConfig::resolve(kv).model, static_cast<std::uint64_t>(seed), zero_head, output, out);
        }
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return config_error;
    } catch (const UsageError& e) {
        err << "usage error: " << e.what() << "\n";
        return config_error;
    } catch (const DimensionError& e) {
        err << "config error: " << e.what() << "\n";
        return config_error;
    } catch (const NumericError& e) {
        err << "numeric error: " << e.what() << "\n";
        return numeric_error;
    } catch (const IoError& e) {
        err << "i/o error: " << e.what() << "\n";
        return io_error;
    } catch (const CheckpointError& e) {
        err << "checkpoint error: " << e.what() << "\n";
        return io_error;
    } catch (const std::filesystem::filesystem_error& e) {
        err << "i/o error: " << e.what() << "\n";
        return io_error;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return failure;
    }
    return failure;
}

} // namespace art::cli
