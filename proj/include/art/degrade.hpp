#pragma once

#include <cmath>
#include <random>

#include "art/image.hpp"

namespace art {

// Keys cubic kernel with a = -0.5.
inline double cubic_kernel(double x) {
    const double a = -0.5, t = std::abs(x);
    if (t <= 1.0) return ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0;
    if (t < 2.0) return ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a;
    return 0.0;
}

namespace detail {

struct Taps {
    Index first;
    std::vector<double> weights;
};

// Antialiased taps for downscaling n -> n/s: the kernel is stretched by s,
// normalized to sum 1, and sample indices are clamped (edge replication).
inline std::vector<Taps> bicubic_taps(Index n_out, Index s) {
    std::vector<Taps> taps(static_cast<std::size_t>(n_out));
    for (Index i = 0; i < n_out; ++i) {
        const double center = (static_cast<double>(i) + 0.5) * static_cast<double>(s) - 0.5;
        const Index lo = static_cast<Index>(std::floor(center - 2.0 * static_cast<double>(s)));
        const Index hi = static_cast<Index>(std::ceil(center + 2.0 * static_cast<double>(s)));
        auto& t = taps[static_cast<std::size_t>(i)];
        t.first = lo;
        double total = 0;
        for (Index j = lo; j <= hi; ++j) {
            const double w = cubic_kernel((center - static_cast<double>(j)) / static_cast<double>(s));
            t.weights.push_back(w);
            total += w;
        }
        for (auto& w : t.weights) w /= total;
    }
    return taps;
}

} // namespace detail

// Bicubic downscale by integer s. The image is first cropped to a multiple of s.
inline Image degrade_bicubic(const Image& hq_in, Index s) {
    if (s < 1) throw ConfigError("key 'scale': bicubic factor must be >= 1");
    const Image hq = crop_to_multiple(hq_in, s);
    if (s == 1) return hq;
    const Index h = hq.height, w = hq.width, oh = h / s, ow = w / s;
    if (oh < 1 || ow < 1) throw DimensionError("image " + hq_in.shape_text() + " too small for scale " + std::to_string(s));
    const auto tx = detail::bicubic_taps(ow, s), ty = detail::bicubic_taps(oh, s);
    auto clampi = [](Index v, Index n) { return std::clamp<Index>(v, 0, n - 1); };

    Image out(hq.channels, oh, ow);
    std::vector<double> rows(static_cast<std::size_t>(h * ow));
    for (Index c = 0; c < hq.channels; ++c) {
        for (Index y = 0; y < h; ++y)
            for (Index x = 0; x < ow; ++x) {
                const auto& t = tx[static_cast<std::size_t>(x)];
                double acc = 0;
                for (std::size_t k = 0; k < t.weights.size(); ++k)
                    acc += t.weights[k] * hq.at(c, y, clampi(t.first + static_cast<Index>(k), w));
                rows[static_cast<std::size_t>(y * ow + x)] = acc;
            }
        for (Index y = 0; y < oh; ++y) {
            const auto& t = ty[static_cast<std::size_t>(y)];
            for (Index x = 0; x < ow; ++x) {
                double acc = 0;
                for (std::size_t k = 0; k < t.weights.size(); ++k)
                    acc += t.weights[k] * rows[static_cast<std::size_t>(clampi(t.first + static_cast<Index>(k), h) * ow + x)];
                out.at(c, y, x) = static_cast<float>(acc);
            }
        }
    }
    return out;
}

// Additive white Gaussian noise, sigma on the 0-255 scale. Not clamped.
inline Image degrade_awgn(const Image& hq, double sigma_255, std::uint64_t seed) {
    if (sigma_255 < 0) throw ConfigError("key 'sigma': must be >= 0");
    Image out = hq;
    if (sigma_255 == 0) return out;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, sigma_255 / 255.0);
    for (auto& v : out.data) v = static_cast<float>(v + noise(rng));
    return out;
}

} // namespace art
