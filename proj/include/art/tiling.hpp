#pragma once

#include <functional>

#include "art/image.hpp"
#include "art/model.hpp"

namespace art {

// Maps an LQ image to its restored version (extents multiplied by `scale`).
using Restorer = std::function<Image(const Image&)>;

template <typename T>
Restorer make_restorer(const ArtModel<T>& model) {
    return [&model](const Image& img) {
        NoGradGuard ng;
        return from_tensor(model.forward(to_tensor<T>(img)));
    };
}

struct TileSpec {
    Index tile = 200;
    Index overlap = 16;
    Index scale = 1;

    void validate() const {
        if (tile < 1) throw ConfigError("key 'tile': must be >= 1");
        if (overlap < 0 || 2 * overlap >= tile) throw ConfigError("key 'tile_overlap': must be in [0, tile/2)");
        if (scale < 1) throw ConfigError("tile scale must be >= 1");
    }
};

struct TileSpan {
    Index start, length;
};

// Tile spans along one axis of extent n. Consecutive tiles overlap by at
// least `overlap`; the last tile is flush with the end.
inline std::vector<TileSpan> tile_spans(Index n, const TileSpec& spec) {
    if (n <= spec.tile) return {{0, n}};
    const Index stride = spec.tile - spec.overlap;
    std::vector<TileSpan> out;
    for (Index a = 0;; a += stride) {
        if (a + spec.tile >= n) {
            out.push_back({n - spec.tile, spec.tile});
            break;
        }
        out.push_back({a, spec.tile});
    }
    return out;
}

// Unnormalized blend weight of output offset i inside a tile of output
// length len: linear ramp over `ramp` pixels on sides that meet another tile.
inline double ramp_weight(Index i, Index len, Index ramp, bool ramp_lo, bool ramp_hi) {
    double w = 1.0;
    if (ramp > 0) {
        if (ramp_lo) w = std::min(w, static_cast<double>(i + 1) / static_cast<double>(ramp + 1));
        if (ramp_hi) w = std::min(w, static_cast<double>(len - i) / static_cast<double>(ramp + 1));
    }
    return w;
}

namespace detail {

// Per-axis raw weights for every tile, in output coordinates.
inline std::vector<std::vector<double>> axis_weights(Index n, const TileSpec& spec) {
    const auto spans = tile_spans(n, spec);
    std::vector<std::vector<double>> out;
    for (std::size_t t = 0; t < spans.size(); ++t) {
        const Index len = spans[t].length * spec.scale;
        std::vector<double> w(static_cast<std::size_t>(len));
        for (Index i = 0; i < len; ++i)
            w[static_cast<std::size_t>(i)] =
                ramp_weight(i, len, spec.overlap * spec.scale, t > 0, t + 1 < spans.size());
        out.push_back(std::move(w));
    }
    return out;
}

} // namespace detail

// Sum over tiles of the normalized blend weights at each output pixel.
inline Image tile_weight_coverage(Index h, Index w, const TileSpec& spec) {
    spec.validate();
    const auto ys = tile_spans(h, spec), xs = tile_spans(w, spec);
    const auto wy = detail::axis_weights(h, spec), wx = detail::axis_weights(w, spec);
    const Index s = spec.scale;
    std::vector<double> raw(static_cast<std::size_t>(h * s * w * s), 0.0);
    auto each = [&](auto&& fn) {
        for (std::size_t ty = 0; ty < ys.size(); ++ty)
            for (std::size_t tx = 0; tx < xs.size(); ++tx)
                for (Index y = 0; y < ys[ty].length * s; ++y)
                    for (Index x = 0; x < xs[tx].length * s; ++x)
                        fn((ys[ty].start * s + y) * w * s + xs[tx].start * s + x,
                           wy[ty][static_cast<std::size_t>(y)] * wx[tx][static_cast<std::size_t>(x)]);
    };
    each([&](Index o, double wt) { raw[static_cast<std::size_t>(o)] += wt; });
    Image cov(1, h * s, w * s);
    std::vector<double> acc(raw.size(), 0.0);
    each([&](Index o, double wt) { acc[static_cast<std::size_t>(o)] += wt / raw[static_cast<std::size_t>(o)]; });
    for (std::size_t i = 0; i < acc.size(); ++i) cov.data[i] = static_cast<float>(acc[i]);
    return cov;
}

// Restores `lq` tile by tile and blends overlaps with normalized linear ramps.
// Images no larger than one tile go straight through.
inline Image infer_tiled(const Restorer& restore, const Image& lq, const TileSpec& spec) {
    spec.validate();
    if (lq.height <= spec.tile && lq.width <= spec.tile) return restore(lq);
    const Index s = spec.scale, oh = lq.height * s, ow = lq.width * s;
    const auto ys = tile_spans(lq.height, spec), xs = tile_spans(lq.width, spec);
    const auto wy = detail::axis_weights(lq.height, spec), wx = detail::axis_weights(lq.width, spec);
    std::vector<double> acc, wsum(static_cast<std::size_t>(oh * ow), 0.0);
    Index channels = 0;
    for (std::size_t ty = 0; ty < ys.size(); ++ty)
        for (std::size_t tx = 0; tx < xs.size(); ++tx) {
            const Image out = restore(crop(lq, ys[ty].start, xs[tx].start, ys[ty].length, xs[tx].length));
            if (out.height != ys[ty].length * s || out.width != xs[tx].length * s)
                throw DimensionError("restorer returned " + out.shape_text() + " for a tile of " +
                                     std::to_string(ys[ty].length) + "x" + std::to_string(xs[tx].length) +
                                     " at scale " + std::to_string(s));
            if (acc.empty()) {
                channels = out.channels;
                acc.assign(static_cast<std::size_t>(channels * oh * ow), 0.0);
            }
            for (Index y = 0; y < out.height; ++y)
                for (Index x = 0; x < out.width; ++x) {
                    const double wt = wy[ty][static_cast<std::size_t>(y)] * wx[tx][static_cast<std::size_t>(x)];
                    const Index oy = ys[ty].start * s + y, ox = xs[tx].start * s + x;
                    wsum[static_cast<std::size_t>(oy * ow + ox)] += wt;
                    for (Index c = 0; c < channels; ++c)
                        acc[static_cast<std::size_t>((c * oh + oy) * ow + ox)] += wt * out.at(c, y, x);
                }
        }
    Image result(channels, oh, ow);
    for (Index c = 0; c < channels; ++c)
        for (Index i = 0; i < oh * ow; ++i) {
            const double wt = wsum[static_cast<std::size_t>(i)];
            if (!(wt > 0)) throw Error("tile blending left an output pixel uncovered");
            result.data[static_cast<std::size_t>(c * oh * ow + i)] =
                static_cast<float>(acc[static_cast<std::size_t>(c * oh * ow + i)] / wt);
        }
    return result;
}

// Average of the 8 dihedral variants, each mapped back before averaging.
inline Image self_ensemble(const Restorer& restore, const Image& lq, const TileSpec& spec) {
    std::vector<double> acc;
    Image shape;
    for (int k = 0; k < 8; ++k) {
        const Image out = dihedral(infer_tiled(restore, dihedral(lq, k), spec), dihedral_inverse(k));
        if (acc.empty()) {
            shape = out;
            acc.assign(out.data.size(), 0.0);
        }
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += out.data[i];
    }
    for (std::size_t i = 0; i < acc.size(); ++i) shape.data[i] = static_cast<float>(acc[i] / 8.0);
    return shape;
}

} // namespace art
