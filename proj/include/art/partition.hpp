#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "art/ops.hpp"

namespace art {

enum class PartitionMode { dense, sparse };

inline const char* to_string(PartitionMode m) { return m == PartitionMode::dense ? "dense" : "sparse"; }

// How a [B,h,w,C] map was split into groups. `size` is the window side in
// dense mode and the grid interval in sparse mode; padding is appended on the
// bottom/right so that both padded extents divide by `size`.
struct PartitionSpec {
    PartitionMode mode = PartitionMode::dense;
    Index size = 1;
    Index batch = 1;
    Index orig_h = 0, orig_w = 0;
    Index pad_h = 0, pad_w = 0;
    Index channels = 0;

    Index padded_h() const { return orig_h + pad_h; }
    Index padded_w() const { return orig_w + pad_w; }

    Index groups_per_image() const {
        if (mode == PartitionMode::dense) return (padded_h() / size) * (padded_w() / size);
        return size * size;
    }
    Index tokens_per_group() const {
        if (mode == PartitionMode::dense) return size * size;
        return (padded_h() / size) * (padded_w() / size);
    }

    // Padded-map coordinate of (group, slot) within one image.
    std::pair<Index, Index> pixel_of(Index group, Index slot) const {
        if (mode == PartitionMode::dense) {
            const Index nw = padded_w() / size;
            return {(group / nw) * size + slot / size, (group % nw) * size + slot % size};
        }
        const Index tw = padded_w() / size;
        return {group / size + (slot / tw) * size, group % size + (slot % tw) * size};
    }

    // Inverse of pixel_of on the padded map.
    std::pair<Index, Index> slot_of(Index y, Index x) const {
        if (mode == PartitionMode::dense) {
            const Index nw = padded_w() / size;
            return {(y / size) * nw + x / size, (y % size) * size + x % size};
        }
        const Index tw = padded_w() / size;
        return {(y % size) * size + x % size, (y / size) * tw + x / size};
    }
};

// Token groups [B*G, T, C] plus per-slot validity (false marks padding).
template <typename T>
struct TokenGroups {
    Tensor<T> tokens;
    std::vector<std::uint8_t> validity;
    PartitionSpec spec;

    Index num_groups() const { return tokens.dim(0); }
    Index tokens_per_group() const { return tokens.dim(1); }
    bool all_valid() const {
        for (auto v : validity)
            if (!v) return false;
        return true;
    }
};

namespace detail {

inline PartitionSpec make_spec(PartitionMode mode, Index size, const Shape& shape) {
    if (shape.size() != 4)
        throw DimensionError("partition expects [B,h,w,C], got " + shape_str(shape));
    if (size < 1)
        throw ConfigError(std::string(mode == PartitionMode::dense ? "window size" : "interval") +
                          " must be >= 1");
    PartitionSpec spec;
    spec.mode = mode;
    spec.size = size;
    spec.batch = shape[0];
    spec.orig_h = shape[1];
    spec.orig_w = shape[2];
    spec.channels = shape[3];
    spec.pad_h = (size - shape[1] % size) % size;
    spec.pad_w = (size - shape[2] % size) % size;
    return spec;
}

template <typename T>
TokenGroups<T> partition(const Tensor<T>& x, PartitionMode mode, Index size) {
    const PartitionSpec spec = make_spec(mode, size, x.shape());
    const Index groups = spec.groups_per_image(), tokens = spec.tokens_per_group();
    const Index total = spec.batch * groups * tokens;
    std::vector<Index> src(static_cast<std::size_t>(total));
    std::vector<std::uint8_t> valid(static_cast<std::size_t>(total));
    for (Index b = 0; b < spec.batch; ++b)
        for (Index g = 0; g < groups; ++g)
            for (Index t = 0; t < tokens; ++t) {
                const auto [y, xx] = spec.pixel_of(g, t);
                const std::size_t row = static_cast<std::size_t>((b * groups + g) * tokens + t);
                const bool inside = y < spec.orig_h && xx < spec.orig_w;
                valid[row] = inside ? 1 : 0;
                src[row] = inside ? (b * spec.orig_h + y) * spec.orig_w + xx : -1;
            }
    TokenGroups<T> out;
    out.tokens = gather_rows(x, spec.channels, Shape{spec.batch * groups, tokens, spec.channels},
                             std::move(src));
    out.validity = std::move(valid);
    out.spec = spec;
    return out;
}

} // namespace detail

// Non-overlapping window x window groups, raster order within each window.
template <typename T>
TokenGroups<T> partition_dense(const Tensor<T>& x, Index window) {
    return detail::partition(x, PartitionMode::dense, window);
}

// interval^2 groups; group (a,b) holds pixels (a + p*interval, b + q*interval)
// in raster order over (p,q).
template <typename T>
TokenGroups<T> partition_sparse(const Tensor<T>& x, Index interval) {
    return detail::partition(x, PartitionMode::sparse, interval);
}

// Exact inverse of partition_dense / partition_sparse. Padded slots are dropped.
template <typename T>
Tensor<T> merge(const TokenGroups<T>& groups) {
    const PartitionSpec& spec = groups.spec;
    const Index g = spec.groups_per_image(), t = spec.tokens_per_group();
    const Shape expected{spec.batch * g, t, spec.channels};
    if (groups.tokens.shape() != expected ||
        static_cast<Index>(groups.validity.size()) != spec.batch * g * t)
        throw CorruptionError("merge: tokens " + shape_str(groups.tokens.shape()) +
                              " disagree with partition spec " + shape_str(expected));
    std::vector<Index> src(static_cast<std::size_t>(spec.batch * spec.orig_h * spec.orig_w));
    std::size_t i = 0;
    for (Index b = 0; b < spec.batch; ++b)
        for (Index y = 0; y < spec.orig_h; ++y)
            for (Index x = 0; x < spec.orig_w; ++x) {
                const auto [grp, slot] = spec.slot_of(y, x);
                src[i++] = (b * g + grp) * t + slot;
            }
    return gather_rows(groups.tokens, spec.channels,
                       Shape{spec.batch, spec.orig_h, spec.orig_w, spec.channels}, std::move(src));
}

} // namespace art
