#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "art/tensor.hpp"

namespace art {

// Planar CHW image with values nominally in [0,1].
struct Image {
    Index channels = 0, height = 0, width = 0;
    std::vector<float> data;

    Image() = default;
    Image(Index c, Index h, Index w, float fill = 0.0f)
        : channels(c), height(h), width(w), data(static_cast<std::size_t>(c * h * w), fill) {}

    float& at(Index c, Index y, Index x) { return data[static_cast<std::size_t>((c * height + y) * width + x)]; }
    float at(Index c, Index y, Index x) const {
        return data[static_cast<std::size_t>((c * height + y) * width + x)];
    }
    bool same_shape(const Image& o) const {
        return channels == o.channels && height == o.height && width == o.width;
    }
    std::string shape_text() const {
        return std::to_string(channels) + "x" + std::to_string(height) + "x" + std::to_string(width);
    }
};

inline Image clamp01(Image img) {
    for (auto& v : img.data) v = std::clamp(v, 0.0f, 1.0f);
    return img;
}

inline Image crop(const Image& img, Index y0, Index x0, Index h, Index w) {
    if (y0 < 0 || x0 < 0 || y0 + h > img.height || x0 + w > img.width)
        throw DimensionError("crop window out of range for image " + img.shape_text());
    Image out(img.channels, h, w);
    for (Index c = 0; c < img.channels; ++c)
        for (Index y = 0; y < h; ++y)
            std::copy_n(&img.data[static_cast<std::size_t>((c * img.height + y0 + y) * img.width + x0)], w,
                        &out.at(c, y, 0));
    return out;
}

// Largest top-left crop whose extents are multiples of s.
inline Image crop_to_multiple(const Image& img, Index s) {
    return crop(img, 0, 0, img.height / s * s, img.width / s * s);
}

// Dihedral transform k in [0,8): optional horizontal flip (k >= 4) followed
// by k % 4 counter-clockwise quarter turns.
inline Image dihedral(const Image& img, int k) {
    const bool flip = k >= 4;
    const int turns = k % 4;
    const Index h = img.height, w = img.width;
    const bool swap = turns % 2 == 1;
    Image out(img.channels, swap ? w : h, swap ? h : w);
    for (Index c = 0; c < img.channels; ++c)
        for (Index y = 0; y < h; ++y)
            for (Index x = 0; x < w; ++x) {
                const Index fx = flip ? w - 1 - x : x;
                Index oy = y, ox = fx;
                switch (turns) {
                case 1: oy = w - 1 - fx; ox = y; break;
                case 2: oy = h - 1 - y; ox = w - 1 - fx; break;
                case 3: oy = fx; ox = h - 1 - y; break;
                default: break;
                }
                out.at(c, oy, ox) = img.at(c, y, x);
            }
    return out;
}

// k such that dihedral(dihedral(x, t), k) == x.
inline int dihedral_inverse(int t) {
    // Flips are involutions; pure rotations invert by turning back.
    return t >= 4 ? t : (4 - t) % 4;
}

// Index of dihedral(dihedral(x, a), b) as a single transform, found by
// applying both to an asymmetric probe.
inline int dihedral_compose(int a, int b) {
    Image probe(1, 2, 3);
    for (std::size_t i = 0; i < probe.data.size(); ++i) probe.data[i] = static_cast<float>(i);
    const Image target = dihedral(dihedral(probe, a), b);
    for (int k = 0; k < 8; ++k) {
        const Image cand = dihedral(probe, k);
        if (cand.same_shape(target) && cand.data == target.data) return k;
    }
    throw Error("dihedral composition not closed");
}

// Stacks same-shape images into [B,C,H,W].
template <typename T>
Tensor<T> to_tensor(const std::vector<const Image*>& images) {
    if (images.empty()) throw DimensionError("to_tensor: empty batch");
    const Image& first = *images.front();
    Tensor<T> t({static_cast<Index>(images.size()), first.channels, first.height, first.width});
    auto& d = t.data();
    std::size_t off = 0;
    for (const Image* img : images) {
        if (!img->same_shape(first)) throw DimensionError("to_tensor: batch images differ in shape");
        for (float v : img->data) d[off++] = static_cast<T>(v);
    }
    return t;
}

template <typename T>
Tensor<T> to_tensor(const Image& img) {
    return to_tensor<T>(std::vector<const Image*>{&img});
}

template <typename T>
Image from_tensor(const Tensor<T>& t, Index batch_index = 0) {
    if (t.rank() != 4) throw DimensionError("from_tensor expects [B,C,H,W], got " + shape_str(t.shape()));
    Image img(t.dim(1), t.dim(2), t.dim(3));
    const std::size_t n = img.data.size(), off = static_cast<std::size_t>(batch_index) * n;
    for (std::size_t i = 0; i < n; ++i) img.data[i] = static_cast<float>(t.data()[off + i]);
    return img;
}

} // namespace art
