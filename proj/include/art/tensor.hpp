#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "art/error.hpp"

namespace art {

using Index = std::int64_t;
using Shape = std::vector<Index>;

inline Index numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

// Row-major strides for a contiguous buffer.
inline Shape contiguous_strides(const Shape& shape) {
    Shape strides(shape.size(), 1);
    for (int i = static_cast<int>(shape.size()) - 2; i >= 0; --i)
        strides[i] = strides[i + 1] * shape[i + 1];
    return strides;
}

// Thread-local switch for tape recording. Inference paths disable it so no
// graph is retained.
inline bool& grad_mode_flag() {
    thread_local bool enabled = true;
    return enabled;
}

inline bool grad_enabled() { return grad_mode_flag(); }

class NoGradGuard {
public:
    NoGradGuard() : previous_(grad_mode_flag()) { grad_mode_flag() = false; }
    ~NoGradGuard() { grad_mode_flag() = previous_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

// Multiply-accumulate counter fed by the matmul, linear and conv kernels.
// Disabled by default; enable around a forward pass to instrument it.
struct MacCounter {
    bool enabled = false;
    std::uint64_t matmul = 0;  // attention QK^T and AV products
    std::uint64_t linear = 0;  // token-wise projections (qkv, out, mlp)
    std::uint64_t conv = 0;

    std::uint64_t total() const { return matmul + linear + conv; }
    void reset() { matmul = linear = conv = 0; }
};

inline MacCounter& mac_counter() {
    thread_local MacCounter counter;
    return counter;
}

class MacCountScope {
public:
    MacCountScope() : previous_(mac_counter().enabled) {
        mac_counter().reset();
        mac_counter().enabled = true;
    }
    ~MacCountScope() { mac_counter().enabled = previous_; }
    MacCountScope(const MacCountScope&) = delete;
    MacCountScope& operator=(const MacCountScope&) = delete;

private:
    bool previous_;
};

template <typename T>
struct Node {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // empty until a gradient reaches this node
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    // Reads this node's grad and accumulates into parents' grads.
    std::function<void(Node&)> backward_fn;

    bool is_leaf() const { return !backward_fn; }

    std::vector<T>& ensure_grad() {
        if (grad.empty()) grad.assign(data.size(), T(0));
        return grad;
    }
};

// Handle to a dense row-major array. Copies share storage; use clone() for a
// deep copy. Gradient-tracking results record a backward closure on the tape.
template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;

    explicit Tensor(Shape shape, T fill = T(0), bool requires_grad = false)
        : node_(std::make_shared<Node<T>>()) {
        for (Index e : shape)
            if (e < 0) throw DimensionError("negative extent in shape " + shape_str(shape));
        node_->data.assign(static_cast<std::size_t>(art::numel(shape)), fill);
        node_->shape = std::move(shape);
        node_->requires_grad = requires_grad;
    }

    Tensor(Shape shape, std::vector<T> data, bool requires_grad = false)
        : node_(std::make_shared<Node<T>>()) {
        if (static_cast<Index>(data.size()) != art::numel(shape))
            throw DimensionError("buffer of " + std::to_string(data.size()) +
                                 " elements does not match shape " + shape_str(shape));
        node_->shape = std::move(shape);
        node_->data = std::move(data);
        node_->requires_grad = requires_grad;
    }

    static Tensor scalar(T value, bool requires_grad = false) {
        return Tensor(Shape{}, std::vector<T>{value}, requires_grad);
    }

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const { return node_->shape; }
    Index dim(int i) const {
        const int r = rank();
        return node_->shape.at(static_cast<std::size_t>(i < 0 ? r + i : i));
    }
    int rank() const { return static_cast<int>(node_->shape.size()); }
    Index numel() const { return static_cast<Index>(node_->data.size()); }

    std::vector<T>& data() { return node_->data; }
    const std::vector<T>& data() const { return node_->data; }
    T item() const {
        if (numel() != 1) throw UsageError("item() on tensor of shape " + shape_str(shape()));
        return node_->data[0];
    }
    T& operator[](Index i) { return node_->data[static_cast<std::size_t>(i)]; }
    T operator[](Index i) const { return node_->data[static_cast<std::size_t>(i)]; }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool on) { node_->requires_grad = on; }
    bool has_grad() const { return !node_->grad.empty(); }
    const std::vector<T>& grad() const { return node_->grad; }
    std::vector<T>& grad() { return node_->grad; }
    void zero_grad() { node_->grad.clear(); }

    Tensor clone() const {
        Tensor out(node_->shape, node_->data, false);
        return out;
    }
    // Same values, cut from the tape.
    Tensor detach() const { return Tensor(node_->shape, node_->data, false); }

    template <typename U>
    Tensor<U> cast() const {
        std::vector<U> out(node_->data.size());
        std::transform(node_->data.begin(), node_->data.end(), out.begin(),
                       [](T v) { return static_cast<U>(v); });
        return Tensor<U>(node_->shape, std::move(out), false);
    }

    const std::shared_ptr<Node<T>>& node() const { return node_; }
    static Tensor from_node(std::shared_ptr<Node<T>> node) {
        Tensor t;
        t.node_ = std::move(node);
        return t;
    }

private:
    std::shared_ptr<Node<T>> node_;
};

namespace detail {

// Builds an op result. The backward closure and parent links are stored only
// when recording is on and some input needs a gradient.
template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> data,
                      std::vector<std::shared_ptr<Node<T>>> parents,
                      std::function<void(Node<T>&)> backward_fn) {
    auto out = Tensor<T>(std::move(shape), std::move(data), false);
    bool needs = false;
    if (grad_enabled())
        for (const auto& p : parents)
            if (p->requires_grad) needs = true;
    if (needs) {
        auto& node = *out.node();
        node.requires_grad = true;
        node.parents = std::move(parents);
        node.backward_fn = std::move(backward_fn);
    }
    return out;
}

} // namespace detail

// Reverse-mode sweep from a scalar. Intermediate grads are reset first so a
// repeated call on the same graph accumulates only into leaves.
template <typename T>
void backward(const Tensor<T>& loss) {
    if (loss.numel() != 1)
        throw UsageError("backward() requires a scalar loss, got shape " + shape_str(loss.shape()));
    if (!loss.requires_grad()) return;

    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> visited;
    std::vector<std::pair<Node<T>*, std::size_t>> stack;
    stack.emplace_back(loss.node().get(), 0);
    visited.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node<T>* parent = node->parents[next++].get();
            if (parent->requires_grad && visited.insert(parent).second)
                stack.emplace_back(parent, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    for (Node<T>* node : order)
        if (!node->is_leaf()) node->grad.clear();

    Node<T>* root = loss.node().get();
    root->ensure_grad()[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* node = *it;
        if (node->is_leaf() || node->grad.empty()) continue;
        node->backward_fn(*node);
    }
}

// A named trainable tensor.
template <typename T>
struct Parameter {
    std::string name;
    Tensor<T> tensor;
};

} // namespace art
