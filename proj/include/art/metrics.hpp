#pragma once

#include <cmath>
#include <limits>

#include "art/image.hpp"

namespace art {

// BT.601 studio-swing luma for RGB in [0,1]; single-channel images pass through.
inline Image rgb_to_y(const Image& img) {
    if (img.channels == 1) return img;
    if (img.channels != 3) throw DimensionError("rgb_to_y expects 1 or 3 channels, got " + img.shape_text());
    Image y(1, img.height, img.width);
    for (Index i = 0; i < img.height; ++i)
        for (Index j = 0; j < img.width; ++j) {
            const double v = 65.481 * img.at(0, i, j) + 128.553 * img.at(1, i, j) + 24.966 * img.at(2, i, j) + 16.0;
            y.at(0, i, j) = static_cast<float>(v / 255.0);
        }
    return y;
}

// Crops `border` pixels from every side.
inline Image shave(const Image& img, Index border) {
    if (border <= 0) return img;
    if (2 * border >= img.height || 2 * border >= img.width)
        throw DimensionError("shave of " + std::to_string(border) + " leaves nothing of " + img.shape_text());
    return crop(img, border, border, img.height - 2 * border, img.width - 2 * border);
}

// Quantizes to 8-bit levels, as if written to and read back from a PNG.
inline Image quantize8(Image img) {
    for (auto& v : img.data) v = static_cast<float>(std::round(std::clamp(v, 0.0f, 1.0f) * 255.0f) / 255.0);
    return img;
}

inline double mse(const Image& a, const Image& b) {
    if (!a.same_shape(b)) throw DimensionError("metric shape mismatch: " + a.shape_text() + " vs " + b.shape_text());
    double acc = 0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double d = static_cast<double>(a.data[i]) - b.data[i];
        acc += d * d;
    }
    return acc / static_cast<double>(a.data.size());
}

// Peak 1.0. Identical images give +infinity.
inline double psnr(const Image& a, const Image& b) {
    const double m = mse(a, b);
    if (m == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / m);
}

namespace detail {

inline std::vector<double> gaussian_window(Index n, double sigma) {
    std::vector<double> g(static_cast<std::size_t>(n));
    double total = 0;
    for (Index i = 0; i < n; ++i) {
        const double x = static_cast<double>(i) - (static_cast<double>(n) - 1.0) / 2.0;
        total += g[static_cast<std::size_t>(i)] = std::exp(-x * x / (2 * sigma * sigma));
    }
    for (auto& v : g) v /= total;
    return g;
}

// Separable "valid" filtering of one channel.
inline std::vector<double> filter_valid(const std::vector<double>& src, Index h, Index w,
                                        const std::vector<double>& gy, const std::vector<double>& gx) {
    const Index ky = static_cast<Index>(gy.size()), kx = static_cast<Index>(gx.size());
    const Index oh = h - ky + 1, ow = w - kx + 1;
    std::vector<double> tmp(static_cast<std::size_t>(h * ow)), out(static_cast<std::size_t>(oh * ow));
    for (Index y = 0; y < h; ++y)
        for (Index x = 0; x < ow; ++x) {
            double acc = 0;
            for (Index k = 0; k < kx; ++k) acc += gx[static_cast<std::size_t>(k)] * src[static_cast<std::size_t>(y * w + x + k)];
            tmp[static_cast<std::size_t>(y * ow + x)] = acc;
        }
    for (Index y = 0; y < oh; ++y)
        for (Index x = 0; x < ow; ++x) {
            double acc = 0;
            for (Index k = 0; k < ky; ++k) acc += gy[static_cast<std::size_t>(k)] * tmp[static_cast<std::size_t>((y + k) * ow + x)];
            out[static_cast<std::size_t>(y * ow + x)] = acc;
        }
    return out;
}

} // namespace detail

// SSIM with an 11x11 Gaussian window (sigma 1.5), K1=0.01, K2=0.03, averaged
// over valid window positions and channels. For extents below 11 the window
// shrinks to the image extent.
inline double ssim(const Image& a, const Image& b) {
    if (!a.same_shape(b)) throw DimensionError("metric shape mismatch: " + a.shape_text() + " vs " + b.shape_text());
    const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    const Index h = a.height, w = a.width;
    const auto gy = detail::gaussian_window(std::min<Index>(11, h), 1.5);
    const auto gx = detail::gaussian_window(std::min<Index>(11, w), 1.5);
    const std::size_t n = static_cast<std::size_t>(h * w);
    double total = 0;
    std::size_t count = 0;
    for (Index c = 0; c < a.channels; ++c) {
        std::vector<double> x(n), y(n), xx(n), yy(n), xy(n);
        for (std::size_t i = 0; i < n; ++i) {
            x[i] = a.data[c * n + i];
            y[i] = b.data[c * n + i];
            xx[i] = x[i] * x[i];
            yy[i] = y[i] * y[i];
            xy[i] = x[i] * y[i];
        }
        const auto mx = detail::filter_valid(x, h, w, gy, gx), my = detail::filter_valid(y, h, w, gy, gx);
        const auto sxx = detail::filter_valid(xx, h, w, gy, gx), syy = detail::filter_valid(yy, h, w, gy, gx);
        const auto sxy = detail::filter_valid(xy, h, w, gy, gx);
        for (std::size_t i = 0; i < mx.size(); ++i) {
            const double vx = sxx[i] - mx[i] * mx[i], vy = syy[i] - my[i] * my[i], cov = sxy[i] - mx[i] * my[i];
            total += ((2 * mx[i] * my[i] + c1) * (2 * cov + c2)) /
                     ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
            ++count;
        }
    }
    return total / static_cast<double>(count);
}

} // namespace art
