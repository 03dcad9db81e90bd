#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <map>

#include "art/kv_text.hpp"
#include "art/metrics.hpp"
#include "art/png_io.hpp"
#include "art/tiling.hpp"

namespace art {

struct ImagePair {
    std::string name;
    Image lq, hq;
};

// Reads <root>/HQ/*.png and <root>/LQ/*.png, matched by file stem, sorted by name.
inline std::vector<ImagePair> load_pair_dir(const std::string& root) {
    namespace fs = std::filesystem;
    const fs::path hq_dir = fs::path(root) / "HQ", lq_dir = fs::path(root) / "LQ";
    for (const auto& d : {hq_dir, lq_dir})
        if (!fs::is_directory(d)) throw IoError("dataset directory missing: " + d.string());
    auto list = [](const fs::path& dir) {
        std::map<std::string, fs::path> out;
        for (const auto& e : fs::directory_iterator(dir))
            if (e.is_regular_file() && e.path().extension() == ".png") out[e.path().stem().string()] = e.path();
        return out;
    };
    const auto hq = list(hq_dir), lq = list(lq_dir);
    if (hq.empty()) throw IoError("no PNG files in " + hq_dir.string());
    std::vector<ImagePair> pairs;
    for (const auto& [stem, path] : hq) {
        auto it = lq.find(stem);
        if (it == lq.end()) throw IoError("no LQ image matching " + path.string());
        pairs.push_back({stem, read_png(it->second.string()), read_png(path.string())});
    }
    for (const auto& [stem, path] : lq)
        if (!hq.count(stem)) throw IoError("no HQ image matching " + path.string());
    return pairs;
}

struct EvalOptions {
    Task task = Task::sr;
    Index scale = 1;
    TileSpec tile;
    bool ensemble = false;
    Index shave = 0;  // border pixels cropped before metrics
};

struct EvalRow {
    std::string name;
    double psnr = 0, ssim = 0;
};

struct EvalReport {
    Task task = Task::sr;
    Index scale = 1;
    Index tile = 200, tile_overlap = 16;
    bool ensemble = false;
    Index shave = 0;
    std::string degradation;  // free text, e.g. "bicubic x2" or "awgn sigma=25"
    std::vector<EvalRow> rows;
    double mean_psnr = 0, mean_ssim = 0;

    void finalize() {
        mean_psnr = mean_ssim = 0;
        for (const auto& r : rows) {
            mean_psnr += r.psnr;
            mean_ssim += r.ssim;
        }
        if (!rows.empty()) {
            mean_psnr /= static_cast<double>(rows.size());
            mean_ssim /= static_cast<double>(rows.size());
        }
    }

    KeyValueText to_kv() const {
        KeyValueText kv;
        kv.set("task", to_string(task));
        kv.set("scale", std::to_string(scale));
        kv.set("degradation", degradation);
        kv.set("tile", std::to_string(tile));
        kv.set("tile_overlap", std::to_string(tile_overlap));
        kv.set("ensemble", ensemble ? "true" : "false");
        kv.set("shave", std::to_string(shave));
        kv.set("images", std::to_string(rows.size()));
        for (std::size_t i = 0; i < rows.size(); ++i) {
            const std::string p = "image." + std::to_string(i) + ".";
            kv.set(p + "name", rows[i].name);
            kv.set(p + "psnr", format_double(rows[i].psnr));
            kv.set(p + "ssim", format_double(rows[i].ssim));
        }
        kv.set("mean_psnr", format_double(mean_psnr));
        kv.set("mean_ssim", format_double(mean_ssim));
        return kv;
    }

    static EvalReport from_kv(const KeyValueText& kv) {
        EvalReport r;
        r.task = parse_task(kv.get("task"));
        r.scale = parse_int("scale", kv.get("scale"));
        r.degradation = kv.get("degradation");
        r.tile = parse_int("tile", kv.get("tile"));
        r.tile_overlap = parse_int("tile_overlap", kv.get("tile_overlap"));
        r.ensemble = parse_bool("ensemble", kv.get("ensemble"));
        r.shave = parse_int("shave", kv.get("shave"));
        const auto n = parse_int("images", kv.get("images"));
        for (long long i = 0; i < n; ++i) {
            const std::string p = "image." + std::to_string(i) + ".";
            r.rows.push_back({kv.get(p + "name"), parse_double(p + "psnr", kv.get(p + "psnr")),
                              parse_double(p + "ssim", kv.get(p + "ssim"))});
        }
        r.mean_psnr = parse_double("mean_psnr", kv.get("mean_psnr"));
        r.mean_ssim = parse_double("mean_ssim", kv.get("mean_ssim"));
        return r;
    }

    // Human-readable table followed by the machine block.
    std::string to_text() const {
        std::string out;
        char buf[256];
        std::snprintf(buf, sizeof buf, "%-24s %10s %8s\n", "image", "PSNR(dB)", "SSIM");
        out += buf;
        auto row = [&](const std::string& name, double p, double s) {
            std::snprintf(buf, sizeof buf, "%-24s %10.4f %8.5f\n", name.c_str(), p, s);
            out += buf;
        };
        for (const auto& r : rows) row(r.name, r.psnr, r.ssim);
        row("mean", mean_psnr, mean_ssim);
        out += "\n" + to_kv().to_text();
        return out;
    }
};

// Restores every pair and scores it. Outputs are clamped and quantized to 8
// bits; 3-channel images are scored on Y.
inline EvalReport evaluate_pairs(const Restorer& restore, const std::vector<ImagePair>& pairs,
                                 const EvalOptions& opt) {
    EvalReport report;
    report.task = opt.task;
    report.scale = opt.scale;
    report.tile = opt.tile.tile;
    report.tile_overlap = opt.tile.overlap;
    report.ensemble = opt.ensemble;
    report.shave = opt.shave;
    TileSpec tile = opt.tile;
    tile.scale = opt.scale;
    for (const auto& p : pairs) {
        const Image hq = opt.scale > 1 ? crop_to_multiple(p.hq, opt.scale) : p.hq;
        if (hq.height != p.lq.height * opt.scale || hq.width != p.lq.width * opt.scale)
            throw DimensionError("pair '" + p.name + "': HQ " + p.hq.shape_text() + " does not match LQ " +
                                 p.lq.shape_text() + " at scale " + std::to_string(opt.scale));
        const Image out = opt.ensemble ? self_ensemble(restore, p.lq, tile) : infer_tiled(restore, p.lq, tile);
        const Image a = shave(rgb_to_y(quantize8(out)), opt.shave), b = shave(rgb_to_y(hq), opt.shave);
        report.rows.push_back({p.name, psnr(a, b), ssim(a, b)});
    }
    report.finalize();
    return report;
}

inline EvalReport evaluate(const Restorer& restore, const std::string& dataset_dir, const EvalOptions& opt) {
    return evaluate_pairs(restore, load_pair_dir(dataset_dir), opt);
}

} // namespace art
