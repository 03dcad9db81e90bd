#pragma once

// Shared helpers for the test suites: random tensors, a central-difference
// gradient checker, and a naive full-attention reference.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "art/attention.hpp"

namespace art::testing {

template <typename T>
Tensor<T> random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0,
                        bool requires_grad = false) {
    Tensor<T> t(std::move(shape), T(0), requires_grad);
    std::uniform_real_distribution<double> dist(lo, hi);
    for (auto& v : t.data()) v = static_cast<T>(dist(rng));
    return t;
}

inline double rel_error(double analytic, double numeric) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-5});
}

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t checked = 0;
};

// Compares reverse-mode gradients of `loss_fn` against central differences
// for every element of `inputs` (or a random sample of `max_per_input`).
inline GradCheckResult gradcheck(std::vector<Tensor<double>> inputs,
                                 const std::function<Tensor<double>()>& loss_fn,
                                 double step = 1e-6, std::size_t max_per_input = 0,
                                 std::uint64_t seed = 1) {
    for (auto& t : inputs) t.zero_grad();
    auto loss = loss_fn();
    backward(loss);
    std::mt19937_64 rng(seed);
    GradCheckResult res;
    for (auto& t : inputs) {
        std::vector<std::size_t> idx(t.data().size());
        std::iota(idx.begin(), idx.end(), 0);
        if (max_per_input && idx.size() > max_per_input) {
            std::shuffle(idx.begin(), idx.end(), rng);
            idx.resize(max_per_input);
        }
        const std::vector<double> analytic =
            t.has_grad() ? t.grad() : std::vector<double>(t.data().size(), 0.0);
        for (std::size_t i : idx) {
            const double orig = t.data()[i];
            double plus, minus;
            {
                NoGradGuard ng;
                t.data()[i] = orig + step;
                plus = loss_fn().item();
                t.data()[i] = orig - step;
                minus = loss_fn().item();
            }
            t.data()[i] = orig;
            const double numeric = (plus - minus) / (2 * step);
            res.max_rel_error = std::max(res.max_rel_error, rel_error(analytic[i], numeric));
            ++res.checked;
        }
    }
    return res;
}

// Weighted sum with fixed pseudo-random weights, so gradients are not all
// identical.
template <typename T>
Tensor<T> weighted_sum(const Tensor<T>& x, std::uint64_t seed = 99) {
    std::mt19937_64 rng(seed);
    auto w = random_tensor<T>(x.shape(), rng);
    return sum(mul(x, w));
}

template <typename T>
AttentionWeights<T> random_attention(Index c, std::mt19937_64& rng, double amp = 0.5,
                                     bool requires_grad = false) {
    AttentionWeights<T> w;
    w.qkv_weight = random_tensor<T>({c, 3 * c}, rng, -amp, amp, requires_grad);
    w.qkv_bias = random_tensor<T>({3 * c}, rng, -amp, amp, requires_grad);
    w.proj_weight = random_tensor<T>({c, c}, rng, -amp, amp, requires_grad);
    w.proj_bias = random_tensor<T>({c}, rng, -amp, amp, requires_grad);
    return w;
}

// Naive multi-head attention over all h*w tokens of one [1,h,w,C] map,
// written with plain loops and no library ops.
inline std::vector<double> full_attention_reference(const Tensor<double>& x,
                                                    const AttentionWeights<double>& w,
                                                    const AttentionConfig& cfg) {
    const Index n = x.dim(1) * x.dim(2), c = cfg.channels, heads = cfg.num_heads, d = c / heads;
    std::vector<double> qkv(static_cast<std::size_t>(n * 3 * c));
    for (Index t = 0; t < n; ++t)
        for (Index j = 0; j < 3 * c; ++j) {
            double acc = cfg.qkv_bias ? w.qkv_bias[j] : 0.0;
            for (Index i = 0; i < c; ++i) acc += x[t * c + i] * w.qkv_weight[i * 3 * c + j];
            qkv[t * 3 * c + j] = acc;
        }
    std::vector<double> ctx(static_cast<std::size_t>(n * c), 0.0);
    for (Index h = 0; h < heads; ++h)
        for (Index qi = 0; qi < n; ++qi) {
            std::vector<double> logits(static_cast<std::size_t>(n));
            double mx = -1e300;
            for (Index ki = 0; ki < n; ++ki) {
                double acc = 0;
                for (Index e = 0; e < d; ++e)
                    acc += qkv[qi * 3 * c + h * d + e] * qkv[ki * 3 * c + c + h * d + e];
                logits[ki] = acc / std::sqrt(static_cast<double>(d));
                mx = std::max(mx, logits[ki]);
            }
            double s = 0;
            for (auto& l : logits) s += (l = std::exp(l - mx));
            for (Index ki = 0; ki < n; ++ki)
                for (Index e = 0; e < d; ++e)
                    ctx[qi * c + h * d + e] += logits[ki] / s * qkv[ki * 3 * c + 2 * c + h * d + e];
        }
    std::vector<double> out(static_cast<std::size_t>(n * c));
    for (Index t = 0; t < n; ++t)
        for (Index j = 0; j < c; ++j) {
            double acc = w.proj_bias[j];
            for (Index i = 0; i < c; ++i) acc += ctx[t * c + i] * w.proj_weight[i * c + j];
            out[t * c + j] = acc;
        }
    return out;
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

} // namespace art::testing
