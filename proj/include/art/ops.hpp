#pragma once

#include <cmath>
#include <limits>
#include <numbers>
#include <span>

#include "art/tensor.hpp"

namespace art {

namespace detail {

template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

inline void require_same_shape(const Shape& a, const Shape& b, const char* op) {
    if (a != b)
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " +
                             shape_str(b));
}

// Strides of `in` aligned against the trailing dims of `out`; zero where `in`
// broadcasts (missing or extent 1).
inline Shape broadcast_strides(const Shape& out, const Shape& in, const char* op) {
    if (in.size() > out.size())
        throw DimensionError(std::string(op) + ": cannot broadcast " + shape_str(in) + " to " +
                             shape_str(out));
    const Shape in_strides = contiguous_strides(in);
    Shape strides(out.size(), 0);
    const std::size_t lead = out.size() - in.size();
    for (std::size_t i = 0; i < in.size(); ++i) {
        if (in[i] == out[lead + i])
            strides[lead + i] = in_strides[i];
        else if (in[i] != 1)
            throw DimensionError(std::string(op) + ": cannot broadcast " + shape_str(in) + " to " +
                                 shape_str(out));
    }
    return strides;
}

// Offset of every element of `out` into a broadcast operand.
inline std::vector<Index> broadcast_offsets(const Shape& out, const Shape& strides) {
    const Index n = numel(out);
    std::vector<Index> offsets(static_cast<std::size_t>(n));
    Shape idx(out.size(), 0);
    Index off = 0;
    for (Index i = 0; i < n; ++i) {
        offsets[static_cast<std::size_t>(i)] = off;
        for (int d = static_cast<int>(out.size()) - 1; d >= 0; --d) {
            if (++idx[d] < out[d]) {
                off += strides[d];
                break;
            }
            off -= strides[d] * (out[d] - 1);
            idx[d] = 0;
        }
    }
    return offsets;
}

// Element gather: out[i] = x[src[i]], or zero when src[i] < 0. Backward is
// the matching scatter-add. Shared by permute, pad, crop and pixel shuffle.
template <typename T>
Tensor<T> gather_elements(const Tensor<T>& x, Shape out_shape, std::vector<Index> src) {
    std::vector<T> out(src.size());
    const auto& xd = x.data();
    for (std::size_t i = 0; i < src.size(); ++i) out[i] = src[i] < 0 ? T(0) : xd[src[i]];
    auto xn = x.node();
    return make_result<T>(std::move(out_shape), std::move(out), {xn},
                          [xn, src = std::move(src)](Node<T>& self) {
                              auto& g = xn->ensure_grad();
                              for (std::size_t i = 0; i < src.size(); ++i)
                                  if (src[i] >= 0) g[src[i]] += self.grad[i];
                          });
}

template <typename T, typename Fwd, typename Bwd>
Tensor<T> unary(const Tensor<T>& x, Fwd fwd, Bwd dfdx) {
    std::vector<T> out(x.data().size());
    const auto& xd = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(xd[i]);
    auto xn = x.node();
    return make_result<T>(x.shape(), std::move(out), {xn}, [xn, dfdx](Node<T>& self) {
        auto& g = xn->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * dfdx(xn->data[i]);
    });
}

} // namespace detail

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
    if (numel(shape) != x.numel())
        throw DimensionError("reshape: " + shape_str(x.shape()) + " to " + shape_str(shape));
    auto xn = x.node();
    return detail::make_result<T>(std::move(shape), x.data(), {xn}, [xn](Node<T>& self) {
        auto& g = xn->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
}

// out.shape[i] = x.shape[perm[i]].
template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<int>& perm) {
    const Shape& in = x.shape();
    if (perm.size() != in.size()) throw DimensionError("permute: rank mismatch");
    Shape out_shape(in.size());
    Shape in_strides = contiguous_strides(in);
    Shape src_strides(in.size());
    std::vector<bool> seen(in.size(), false);
    for (std::size_t i = 0; i < perm.size(); ++i) {
        const int p = perm[i];
        if (p < 0 || p >= static_cast<int>(in.size()) || seen[p])
            throw DimensionError("permute: invalid permutation");
        seen[p] = true;
        out_shape[i] = in[p];
        src_strides[i] = in_strides[p];
    }
    auto src = detail::broadcast_offsets(out_shape, src_strides);
    return detail::gather_elements(x, std::move(out_shape), std::move(src));
}

template <typename T>
Tensor<T> transpose_last2(const Tensor<T>& x) {
    std::vector<int> perm(x.rank());
    std::iota(perm.begin(), perm.end(), 0);
    std::swap(perm[perm.size() - 1], perm[perm.size() - 2]);
    return permute(x, perm);
}

// Zero padding appended after each dim.
template <typename T>
Tensor<T> pad_zeros(const Tensor<T>& x, const Shape& pad_after) {
    const Shape& in = x.shape();
    if (pad_after.size() != in.size()) throw DimensionError("pad_zeros: rank mismatch");
    Shape out_shape(in.size());
    for (std::size_t d = 0; d < in.size(); ++d) {
        if (pad_after[d] < 0) throw DimensionError("pad_zeros: negative pad");
        out_shape[d] = in[d] + pad_after[d];
    }
    const Shape in_strides = contiguous_strides(in);
    std::vector<Index> src(static_cast<std::size_t>(numel(out_shape)));
    Shape idx(in.size(), 0);
    for (std::size_t i = 0; i < src.size(); ++i) {
        Index off = 0;
        bool inside = true;
        for (std::size_t d = 0; d < in.size(); ++d) {
            if (idx[d] >= in[d]) inside = false;
            off += idx[d] * in_strides[d];
        }
        src[i] = inside ? off : -1;
        for (int d = static_cast<int>(in.size()) - 1; d >= 0; --d) {
            if (++idx[d] < out_shape[d]) break;
            idx[d] = 0;
        }
    }
    return detail::gather_elements(x, std::move(out_shape), std::move(src));
}

template <typename T>
Tensor<T> crop(const Tensor<T>& x, const Shape& start, const Shape& size) {
    const Shape& in = x.shape();
    if (start.size() != in.size() || size.size() != in.size())
        throw DimensionError("crop: rank mismatch");
    for (std::size_t d = 0; d < in.size(); ++d)
        if (start[d] < 0 || size[d] < 0 || start[d] + size[d] > in[d])
            throw DimensionError("crop: window outside " + shape_str(in));
    const Shape in_strides = contiguous_strides(in);
    Index base = 0;
    for (std::size_t d = 0; d < in.size(); ++d) base += start[d] * in_strides[d];
    auto src = detail::broadcast_offsets(size, in_strides);
    for (auto& s : src) s += base;
    return detail::gather_elements(x, size, std::move(src));
}

// Slice [start, start+len) of the last dimension.
template <typename T>
Tensor<T> narrow_last(const Tensor<T>& x, Index start, Index len) {
    Shape st(x.rank(), 0), sz = x.shape();
    st.back() = start;
    sz.back() = len;
    return crop(x, st, sz);
}

// Row gather over x viewed as [rows, row_len]: out row r = x row src[r], or
// zeros when src[r] < 0.
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, Index row_len, Shape out_shape,
                      std::vector<Index> src_rows) {
    if (x.numel() % row_len != 0) throw DimensionError("gather_rows: row length mismatch");
    if (numel(out_shape) != static_cast<Index>(src_rows.size()) * row_len)
        throw DimensionError("gather_rows: output shape mismatch");
    const Index nrows = x.numel() / row_len;
    std::vector<T> out(static_cast<std::size_t>(numel(out_shape)), T(0));
    const auto& xd = x.data();
    for (std::size_t r = 0; r < src_rows.size(); ++r) {
        const Index s = src_rows[r];
        if (s < 0) continue;
        if (s >= nrows) throw CorruptionError("gather_rows: source row out of range");
        std::copy_n(xd.begin() + s * row_len, row_len, out.begin() + static_cast<Index>(r) * row_len);
    }
    auto xn = x.node();
    return detail::make_result<T>(std::move(out_shape), std::move(out), {xn},
                                  [xn, row_len, src = std::move(src_rows)](Node<T>& self) {
                                      auto& g = xn->ensure_grad();
                                      for (std::size_t r = 0; r < src.size(); ++r) {
                                          if (src[r] < 0) continue;
                                          T* dst = g.data() + src[r] * row_len;
                                          const T* gs = self.grad.data() + r * row_len;
                                          for (Index c = 0; c < row_len; ++c) dst[c] += gs[c];
                                      }
                                  });
}

// a + b where b broadcasts to a's shape.
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    auto an = a.node(), bn = b.node();
    if (a.shape() == b.shape()) {
        std::vector<T> out(a.data());
        const auto& bd = b.data();
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += bd[i];
        return detail::make_result<T>(a.shape(), std::move(out), {an, bn}, [an, bn](Node<T>& self) {
            if (an->requires_grad) {
                auto& g = an->ensure_grad();
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
            }
            if (bn->requires_grad) {
                auto& g = bn->ensure_grad();
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
            }
        });
    }
    auto offsets = detail::broadcast_offsets(a.shape(), detail::broadcast_strides(a.shape(), b.shape(), "add"));
    std::vector<T> out(a.data());
    const auto& bd = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bd[offsets[i]];
    return detail::make_result<T>(a.shape(), std::move(out), {an, bn},
                                  [an, bn, offsets = std::move(offsets)](Node<T>& self) {
                                      if (an->requires_grad) {
                                          auto& g = an->ensure_grad();
                                          for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                                      }
                                      if (bn->requires_grad) {
                                          auto& g = bn->ensure_grad();
                                          for (std::size_t i = 0; i < offsets.size(); ++i)
                                              g[offsets[i]] += self.grad[i];
                                      }
                                  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape(a.shape(), b.shape(), "sub");
    std::vector<T> out(a.data());
    const auto& bd = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bd[i];
    auto an = a.node(), bn = b.node();
    return detail::make_result<T>(a.shape(), std::move(out), {an, bn}, [an, bn](Node<T>& self) {
        if (an->requires_grad) {
            auto& g = an->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (bn->requires_grad) {
            auto& g = bn->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
        }
    });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape(a.shape(), b.shape(), "mul");
    std::vector<T> out(a.data());
    const auto& bd = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bd[i];
    auto an = a.node(), bn = b.node();
    return detail::make_result<T>(a.shape(), std::move(out), {an, bn}, [an, bn](Node<T>& self) {
        if (an->requires_grad) {
            auto& g = an->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bn->data[i];
        }
        if (bn->requires_grad) {
            auto& g = bn->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * an->data[i];
        }
    });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T s) {
    return detail::unary(x, [s](T v) { return v * s; }, [s](T) { return s; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T s) {
    return detail::unary(x, [s](T v) { return v + s; }, [](T) { return T(1); });
}

template <typename T>
Tensor<T> square(const Tensor<T>& x) {
    return detail::unary(x, [](T v) { return v * v; }, [](T v) { return T(2) * v; });
}

template <typename T>
Tensor<T> sqrt(const Tensor<T>& x) {
    return detail::unary(x, [](T v) { return std::sqrt(v); },
                         [](T v) { return T(0.5) / std::sqrt(v); });
}

// |x| with subgradient sign(0) = 0.
template <typename T>
Tensor<T> abs(const Tensor<T>& x) {
    return detail::unary(x, [](T v) { return std::abs(v); },
                         [](T v) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
}

// GELU, tanh approximation.
template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
    constexpr T k = static_cast<T>(0.7978845608028654);  // sqrt(2/pi)
    constexpr T c = static_cast<T>(0.044715);
    return detail::unary(
        x,
        [](T v) { return T(0.5) * v * (T(1) + std::tanh(k * (v + c * v * v * v))); },
        [](T v) {
            const T t = std::tanh(k * (v + c * v * v * v));
            return T(0.5) * (T(1) + t) + T(0.5) * v * (T(1) - t * t) * k * (T(1) + T(3) * c * v * v);
        });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
    T s = T(0);
    for (T v : x.data()) s += v;
    auto xn = x.node();
    return detail::make_result<T>(Shape{}, {s}, {xn}, [xn](Node<T>& self) {
        auto& g = xn->ensure_grad();
        for (auto& v : g) v += self.grad[0];
    });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
    if (x.numel() == 0) throw DimensionError("mean of empty tensor");
    return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

// Batched matrix product with broadcast batch dims: [..,m,k] x [..,k,n].
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() < 2 || b.rank() < 2 || a.dim(-1) != b.dim(-2))
        throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()));
    const Index m = a.dim(-2), k = a.dim(-1), n = b.dim(-1);
    Shape a_batch(a.shape().begin(), a.shape().end() - 2);
    Shape b_batch(b.shape().begin(), b.shape().end() - 2);
    const std::size_t rank = std::max(a_batch.size(), b_batch.size());
    Shape out_batch(rank, 1);
    auto aligned = [rank](const Shape& s) {
        Shape r(rank, 1);
        std::copy(s.begin(), s.end(), r.begin() + static_cast<std::ptrdiff_t>(rank - s.size()));
        return r;
    };
    const Shape aa = aligned(a_batch), ba = aligned(b_batch);
    for (std::size_t d = 0; d < rank; ++d) {
        if (aa[d] != ba[d] && aa[d] != 1 && ba[d] != 1)
            throw DimensionError("matmul: batch dims of " + shape_str(a.shape()) + " and " +
                                 shape_str(b.shape()) + " do not broadcast");
        out_batch[d] = std::max(aa[d], ba[d]);
    }
    Shape a_bs = detail::broadcast_strides(out_batch, aa, "matmul");
    Shape b_bs = detail::broadcast_strides(out_batch, ba, "matmul");
    auto a_off = detail::broadcast_offsets(out_batch, a_bs);
    auto b_off = detail::broadcast_offsets(out_batch, b_bs);
    const Index batches = numel(out_batch);

    Shape out_shape = out_batch;
    out_shape.push_back(m);
    out_shape.push_back(n);
    std::vector<T> out(static_cast<std::size_t>(batches * m * n), T(0));
    const T* ad = a.data().data();
    const T* bd = b.data().data();
    for (Index bi = 0; bi < batches; ++bi) {
        const T* A = ad + a_off[bi] * m * k;
        const T* B = bd + b_off[bi] * k * n;
        T* C = out.data() + bi * m * n;
        for (Index i = 0; i < m; ++i)
            for (Index p = 0; p < k; ++p) {
                const T av = A[i * k + p];
                const T* brow = B + p * n;
                T* crow = C + i * n;
                for (Index j = 0; j < n; ++j) crow[j] += av * brow[j];
            }
    }
    if (mac_counter().enabled) mac_counter().matmul += static_cast<std::uint64_t>(batches * m * k * n);

    auto an = a.node(), bn = b.node();
    return detail::make_result<T>(
        std::move(out_shape), std::move(out), {an, bn},
        [an, bn, m, k, n, batches, a_off = std::move(a_off), b_off = std::move(b_off)](Node<T>& self) {
            const T* G = self.grad.data();
            if (an->requires_grad) {
                T* ga = an->ensure_grad().data();
                const T* bd = bn->data.data();
                for (Index bi = 0; bi < batches; ++bi) {
                    const T* B = bd + b_off[bi] * k * n;
                    const T* Gb = G + bi * m * n;
                    T* GA = ga + a_off[bi] * m * k;
                    for (Index i = 0; i < m; ++i)
                        for (Index p = 0; p < k; ++p) {
                            const T* brow = B + p * n;
                            const T* grow = Gb + i * n;
                            T acc = T(0);
                            for (Index j = 0; j < n; ++j) acc += grow[j] * brow[j];
                            GA[i * k + p] += acc;
                        }
                }
            }
            if (bn->requires_grad) {
                T* gb = bn->ensure_grad().data();
                const T* ad = an->data.data();
                for (Index bi = 0; bi < batches; ++bi) {
                    const T* A = ad + a_off[bi] * m * k;
                    const T* Gb = G + bi * m * n;
                    T* GB = gb + b_off[bi] * k * n;
                    for (Index i = 0; i < m; ++i)
                        for (Index p = 0; p < k; ++p) {
                            const T av = A[i * k + p];
                            const T* grow = Gb + i * n;
                            T* gbrow = GB + p * n;
                            for (Index j = 0; j < n; ++j) gbrow[j] += av * grow[j];
                        }
                }
            }
        });
}

// Token-wise affine map: x[.., in] * weight[in, out] + bias[out].
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>* bias = nullptr) {
    if (weight.rank() != 2 || x.rank() < 1 || x.dim(-1) != weight.dim(0))
        throw DimensionError("linear: input " + shape_str(x.shape()) + " vs weight " +
                             shape_str(weight.shape()));
    const Index in = weight.dim(0), outc = weight.dim(1);
    if (bias && (bias->rank() != 1 || bias->dim(0) != outc))
        throw DimensionError("linear: bias " + shape_str(bias->shape()) + " vs weight " +
                             shape_str(weight.shape()));
    const Index rows = in == 0 ? 0 : x.numel() / in;
    Shape out_shape = x.shape();
    out_shape.back() = outc;
    std::vector<T> out(static_cast<std::size_t>(rows * outc));
    const T* xd = x.data().data();
    const T* wd = weight.data().data();
    for (Index r = 0; r < rows; ++r) {
        T* orow = out.data() + r * outc;
        if (bias)
            std::copy_n(bias->data().data(), outc, orow);
        else
            std::fill_n(orow, outc, T(0));
        const T* xrow = xd + r * in;
        for (Index p = 0; p < in; ++p) {
            const T xv = xrow[p];
            const T* wrow = wd + p * outc;
            for (Index j = 0; j < outc; ++j) orow[j] += xv * wrow[j];
        }
    }
    if (mac_counter().enabled) mac_counter().linear += static_cast<std::uint64_t>(rows * in * outc);

    auto xn = x.node(), wn = weight.node();
    std::vector<detail::NodePtr<T>> parents{xn, wn};
    detail::NodePtr<T> bn = bias ? bias->node() : nullptr;
    if (bn) parents.push_back(bn);
    return detail::make_result<T>(
        std::move(out_shape), std::move(out), std::move(parents),
        [xn, wn, bn, rows, in, outc](Node<T>& self) {
            const T* G = self.grad.data();
            if (xn->requires_grad) {
                T* gx = xn->ensure_grad().data();
                const T* wd = wn->data.data();
                for (Index r = 0; r < rows; ++r)
                    for (Index p = 0; p < in; ++p) {
                        const T* wrow = wd + p * outc;
                        const T* grow = G + r * outc;
                        T acc = T(0);
                        for (Index j = 0; j < outc; ++j) acc += grow[j] * wrow[j];
                        gx[r * in + p] += acc;
                    }
            }
            if (wn->requires_grad) {
                T* gw = wn->ensure_grad().data();
                const T* xd = xn->data.data();
                for (Index r = 0; r < rows; ++r)
                    for (Index p = 0; p < in; ++p) {
                        const T xv = xd[r * in + p];
                        const T* grow = G + r * outc;
                        T* gwrow = gw + p * outc;
                        for (Index j = 0; j < outc; ++j) gwrow[j] += xv * grow[j];
                    }
            }
            if (bn && bn->requires_grad) {
                T* gb = bn->ensure_grad().data();
                for (Index r = 0; r < rows; ++r)
                    for (Index j = 0; j < outc; ++j) gb[j] += G[r * outc + j];
            }
        });
}

struct SoftmaxStatus {
    Index fully_masked_rows = 0;
};

// Softmax over the last dim with an optional additive mask (0 or -inf)
// broadcast to x. A row whose entries are all -inf yields zeros and is
// counted in `status` rather than raising.
template <typename T>
Tensor<T> softmax_lastdim(const Tensor<T>& x, const Tensor<T>* mask = nullptr,
                          SoftmaxStatus* status = nullptr) {
    if (x.rank() < 1) throw DimensionError("softmax_lastdim on scalar");
    const Index n = x.dim(-1);
    const Index rows = n == 0 ? 0 : x.numel() / n;
    std::vector<Index> mask_row_off;
    Index mask_col_stride = 0;
    if (mask) {
        Shape strides = detail::broadcast_strides(x.shape(), mask->shape(), "softmax mask");
        mask_col_stride = strides.back();
        Shape row_shape(x.shape().begin(), x.shape().end() - 1);
        Shape row_strides(strides.begin(), strides.end() - 1);
        mask_row_off = detail::broadcast_offsets(row_shape, row_strides);
    }
    std::vector<T> out(x.data().size());
    const T* xd = x.data().data();
    Index masked_rows = 0;
    std::vector<T> logits(static_cast<std::size_t>(n));
    for (Index r = 0; r < rows; ++r) {
        const T* xr = xd + r * n;
        T* orow = out.data() + r * n;
        for (Index j = 0; j < n; ++j)
            logits[j] = mask ? xr[j] + mask->data()[mask_row_off[r] + j * mask_col_stride] : xr[j];
        T mx = -std::numeric_limits<T>::infinity();
        for (Index j = 0; j < n; ++j) mx = std::max(mx, logits[j]);
        if (mx == -std::numeric_limits<T>::infinity()) {
            std::fill_n(orow, n, T(0));
            ++masked_rows;
            continue;
        }
        T s = T(0);
        for (Index j = 0; j < n; ++j) {
            orow[j] = std::exp(logits[j] - mx);
            s += orow[j];
        }
        const T inv = T(1) / s;
        for (Index j = 0; j < n; ++j) orow[j] *= inv;
    }
    if (status) status->fully_masked_rows += masked_rows;
    auto xn = x.node();
    auto result = detail::make_result<T>(x.shape(), std::move(out), {xn}, nullptr);
    if (result.requires_grad()) {
        result.node()->backward_fn = [xn, n, rows](Node<T>& self) {
            auto& g = xn->ensure_grad();
            for (Index r = 0; r < rows; ++r) {
                const T* y = self.data.data() + r * n;
                const T* gy = self.grad.data() + r * n;
                T dot = T(0);
                for (Index j = 0; j < n; ++j) dot += y[j] * gy[j];
                for (Index j = 0; j < n; ++j) g[r * n + j] += y[j] * (gy[j] - dot);
            }
        };
    }
    return result;
}

// Per-token normalization over the last dim (population variance), then
// gamma * xhat + beta.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps = T(1e-5)) {
    const Index c = x.dim(-1);
    if (gamma.numel() != c || beta.numel() != c)
        throw DimensionError("layer_norm: affine params " + shape_str(gamma.shape()) +
                             " do not match channels of " + shape_str(x.shape()));
    const Index rows = c == 0 ? 0 : x.numel() / c;
    std::vector<T> out(x.data().size());
    std::vector<T> xhat(x.data().size());
    std::vector<T> rstd(static_cast<std::size_t>(rows));
    const T* xd = x.data().data();
    const T* gd = gamma.data().data();
    const T* bd = beta.data().data();
    for (Index r = 0; r < rows; ++r) {
        const T* xr = xd + r * c;
        T mu = T(0);
        for (Index j = 0; j < c; ++j) mu += xr[j];
        mu /= static_cast<T>(c);
        T var = T(0);
        for (Index j = 0; j < c; ++j) var += (xr[j] - mu) * (xr[j] - mu);
        var /= static_cast<T>(c);
        const T rs = T(1) / std::sqrt(var + eps);
        rstd[r] = rs;
        for (Index j = 0; j < c; ++j) {
            const T h = (xr[j] - mu) * rs;
            xhat[r * c + j] = h;
            out[r * c + j] = gd[j] * h + bd[j];
        }
    }
    auto xn = x.node(), gn = gamma.node(), bn = beta.node();
    if (!(grad_enabled() && (xn->requires_grad || gn->requires_grad || bn->requires_grad)))
        return Tensor<T>(x.shape(), std::move(out));
    return detail::make_result<T>(
        x.shape(), std::move(out), {xn, gn, bn},
        [xn, gn, bn, rows, c, xhat = std::move(xhat), rstd = std::move(rstd)](Node<T>& self) {
            const T* G = self.grad.data();
            const T* gd = gn->data.data();
            if (gn->requires_grad) {
                auto& gg = gn->ensure_grad();
                for (Index r = 0; r < rows; ++r)
                    for (Index j = 0; j < c; ++j) gg[j] += G[r * c + j] * xhat[r * c + j];
            }
            if (bn->requires_grad) {
                auto& gb = bn->ensure_grad();
                for (Index r = 0; r < rows; ++r)
                    for (Index j = 0; j < c; ++j) gb[j] += G[r * c + j];
            }
            if (xn->requires_grad) {
                auto& gx = xn->ensure_grad();
                const T inv_c = T(1) / static_cast<T>(c);
                for (Index r = 0; r < rows; ++r) {
                    T mean_g = T(0), mean_gx = T(0);
                    for (Index j = 0; j < c; ++j) {
                        const T gj = G[r * c + j] * gd[j];
                        mean_g += gj;
                        mean_gx += gj * xhat[r * c + j];
                    }
                    mean_g *= inv_c;
                    mean_gx *= inv_c;
                    for (Index j = 0; j < c; ++j) {
                        const T gj = G[r * c + j] * gd[j];
                        gx[r * c + j] += rstd[r] * (gj - mean_g - xhat[r * c + j] * mean_gx);
                    }
                }
            }
        });
}

namespace detail {

// col[(ci*9 + ky*3 + kx), y*W + x] = x[ci, y+ky-1, x+kx-1] (zero outside).
template <typename T>
void im2col_3x3(const T* x, Index cin, Index h, Index w, T* col) {
    for (Index ci = 0; ci < cin; ++ci)
        for (Index ky = 0; ky < 3; ++ky)
            for (Index kx = 0; kx < 3; ++kx) {
                T* dst = col + ((ci * 9 + ky * 3 + kx) * h * w);
                for (Index y = 0; y < h; ++y) {
                    const Index sy = y + ky - 1;
                    for (Index xx = 0; xx < w; ++xx) {
                        const Index sx = xx + kx - 1;
                        dst[y * w + xx] = (sy < 0 || sy >= h || sx < 0 || sx >= w)
                                              ? T(0)
                                              : x[(ci * h + sy) * w + sx];
                    }
                }
            }
}

template <typename T>
void col2im_3x3(const T* col, Index cin, Index h, Index w, T* x) {
    for (Index ci = 0; ci < cin; ++ci)
        for (Index ky = 0; ky < 3; ++ky)
            for (Index kx = 0; kx < 3; ++kx) {
                const T* src = col + ((ci * 9 + ky * 3 + kx) * h * w);
                for (Index y = 0; y < h; ++y) {
                    const Index sy = y + ky - 1;
                    if (sy < 0 || sy >= h) continue;
                    for (Index xx = 0; xx < w; ++xx) {
                        const Index sx = xx + kx - 1;
                        if (sx < 0 || sx >= w) continue;
                        x[(ci * h + sy) * w + sx] += src[y * w + xx];
                    }
                }
            }
}

} // namespace detail

// 3x3 cross-correlation, stride 1, zero padding 1. x [B,Cin,H,W],
// weight [Cout,Cin,3,3], bias [Cout].
template <typename T>
Tensor<T> conv2d_3x3(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>* bias = nullptr) {
    if (x.rank() != 4 || weight.rank() != 4 || weight.dim(2) != 3 || weight.dim(3) != 3)
        throw DimensionError("conv2d_3x3: expects x [B,C,H,W] and weight [Co,Ci,3,3], got " +
                             shape_str(x.shape()) + " and " + shape_str(weight.shape()));
    if (x.dim(1) != weight.dim(1))
        throw DimensionError("conv2d_3x3: input channels " + std::to_string(x.dim(1)) +
                             " vs weight " + shape_str(weight.shape()));
    const Index bsz = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3), cout = weight.dim(0);
    if (bias && bias->numel() != cout) throw DimensionError("conv2d_3x3: bias size");
    const Index hw = h * w, kk = cin * 9;
    std::vector<T> out(static_cast<std::size_t>(bsz * cout * hw));
    std::vector<T> col(static_cast<std::size_t>(kk * hw));
    const T* wd = weight.data().data();
    for (Index b = 0; b < bsz; ++b) {
        detail::im2col_3x3(x.data().data() + b * cin * hw, cin, h, w, col.data());
        T* ob = out.data() + b * cout * hw;
        for (Index co = 0; co < cout; ++co) {
            T* orow = ob + co * hw;
            std::fill_n(orow, hw, bias ? bias->data()[co] : T(0));
            for (Index k = 0; k < kk; ++k) {
                const T wv = wd[co * kk + k];
                const T* crow = col.data() + k * hw;
                for (Index p = 0; p < hw; ++p) orow[p] += wv * crow[p];
            }
        }
    }
    if (mac_counter().enabled) mac_counter().conv += static_cast<std::uint64_t>(bsz * cout * kk * hw);

    auto xn = x.node(), wn = weight.node();
    std::vector<detail::NodePtr<T>> parents{xn, wn};
    detail::NodePtr<T> bn = bias ? bias->node() : nullptr;
    if (bn) parents.push_back(bn);
    return detail::make_result<T>(
        Shape{bsz, cout, h, w}, std::move(out), std::move(parents),
        [xn, wn, bn, bsz, cin, h, w, cout, hw, kk](Node<T>& self) {
            std::vector<T> col(static_cast<std::size_t>(kk * hw));
            std::vector<T> dcol;
            const T* wd = wn->data.data();
            T* gw = wn->requires_grad ? wn->ensure_grad().data() : nullptr;
            T* gx = xn->requires_grad ? xn->ensure_grad().data() : nullptr;
            if (bn && bn->requires_grad) {
                auto& gb = bn->ensure_grad();
                for (Index b = 0; b < bsz; ++b)
                    for (Index co = 0; co < cout; ++co) {
                        const T* grow = self.grad.data() + (b * cout + co) * hw;
                        T acc = T(0);
                        for (Index p = 0; p < hw; ++p) acc += grow[p];
                        gb[co] += acc;
                    }
            }
            for (Index b = 0; b < bsz; ++b) {
                const T* gb = self.grad.data() + b * cout * hw;
                if (gw) {
                    detail::im2col_3x3(xn->data.data() + b * cin * hw, cin, h, w, col.data());
                    for (Index co = 0; co < cout; ++co) {
                        const T* grow = gb + co * hw;
                        for (Index k = 0; k < kk; ++k) {
                            const T* crow = col.data() + k * hw;
                            T acc = T(0);
                            for (Index p = 0; p < hw; ++p) acc += grow[p] * crow[p];
                            gw[co * kk + k] += acc;
                        }
                    }
                }
                if (gx) {
                    dcol.assign(static_cast<std::size_t>(kk * hw), T(0));
                    for (Index co = 0; co < cout; ++co) {
                        const T* grow = gb + co * hw;
                        for (Index k = 0; k < kk; ++k) {
                            const T wv = wd[co * kk + k];
                            T* drow = dcol.data() + k * hw;
                            for (Index p = 0; p < hw; ++p) drow[p] += wv * grow[p];
                        }
                    }
                    detail::col2im_3x3(dcol.data(), cin, h, w, gx + b * cin * hw);
                }
            }
        });
}

// Depth-to-space: [B, C*r*r, H, W] -> [B, C, H*r, W*r] with
// out[b, c, y*r+i, x*r+j] = in[b, c*r*r + i*r + j, y, x].
template <typename T>
Tensor<T> pixel_shuffle(const Tensor<T>& x, Index r) {
    if (x.rank() != 4 || r < 1) throw DimensionError("pixel_shuffle: expects [B,C,H,W] and r >= 1");
    if (x.dim(1) % (r * r) != 0)
        throw ConfigError("pixel_shuffle: channels " + std::to_string(x.dim(1)) +
                          " not divisible by r^2 = " + std::to_string(r * r));
    const Index bsz = x.dim(0), c = x.dim(1) / (r * r), h = x.dim(2), w = x.dim(3);
    const Index oh = h * r, ow = w * r;
    std::vector<Index> src(static_cast<std::size_t>(bsz * c * oh * ow));
    std::size_t i = 0;
    for (Index b = 0; b < bsz; ++b)
        for (Index ch = 0; ch < c; ++ch)
            for (Index oy = 0; oy < oh; ++oy)
                for (Index ox = 0; ox < ow; ++ox) {
                    const Index sc = ch * r * r + (oy % r) * r + (ox % r);
                    src[i++] = ((b * c * r * r + sc) * h + oy / r) * w + ox / r;
                }
    return detail::gather_elements(x, Shape{bsz, c, oh, ow}, std::move(src));
}

// Inverse of pixel_shuffle.
template <typename T>
Tensor<T> pixel_unshuffle(const Tensor<T>& x, Index r) {
    if (x.rank() != 4 || r < 1) throw DimensionError("pixel_unshuffle: expects [B,C,H,W] and r >= 1");
    if (x.dim(2) % r != 0 || x.dim(3) % r != 0)
        throw ConfigError("pixel_unshuffle: spatial extents not divisible by r");
    const Index bsz = x.dim(0), c = x.dim(1), h = x.dim(2) / r, w = x.dim(3) / r;
    std::vector<Index> src(static_cast<std::size_t>(x.numel()));
    std::size_t i = 0;
    for (Index b = 0; b < bsz; ++b)
        for (Index sc = 0; sc < c * r * r; ++sc)
            for (Index y = 0; y < h; ++y)
                for (Index xx = 0; xx < w; ++xx) {
                    const Index ch = sc / (r * r), di = (sc % (r * r)) / r, dj = sc % r;
                    src[i++] = ((b * c + ch) * h * r + y * r + di) * w * r + xx * r + dj;
                }
    return detail::gather_elements(x, Shape{bsz, c * r * r, h, w}, std::move(src));
}

} // namespace art
