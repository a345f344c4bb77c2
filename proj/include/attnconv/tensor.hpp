#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "attnconv/error.hpp"

namespace attnconv {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape& dims) {
    return std::accumulate(dims.begin(), dims.end(), std::int64_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape& dims) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < dims.size(); ++i) os << (i ? "," : "") << dims[i];
    os << ']';
    return os.str();
}

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

template <class T>
constexpr DType dtype_of();
template <>
constexpr DType dtype_of<float>() { return DType::f32; }
template <>
constexpr DType dtype_of<double>() { return DType::f64; }

namespace detail {

inline bool& grad_mode() {
    thread_local bool enabled = true;
    return enabled;
}

template <class T>
struct Node;

template <class T>
struct TensorImpl {
    Shape dims;
    std::vector<T> data;
    std::vector<T> grad;  // empty means "no gradient"
    bool requires_grad = false;
    std::shared_ptr<Node<T>> grad_fn;

    bool tracked() const { return requires_grad || grad_fn != nullptr; }

    std::vector<T>& grad_buffer() {
        if (grad.empty()) grad.assign(data.size(), T(0));
        return grad;
    }
};

/// One recorded operation. Holds its inputs; the backward closure receives the
/// gradient of the op's output and accumulates into tracked inputs.
template <class T>
struct Node {
    std::vector<std::shared_ptr<TensorImpl<T>>> inputs;
    std::function<void(std::span<const T>)> backward;
};

}  // namespace detail

/// Disables graph recording for the current thread while alive.
class NoGradGuard {
public:
    NoGradGuard() : prev_(detail::grad_mode()) { detail::grad_mode() = false; }
    ~NoGradGuard() { detail::grad_mode() = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

/// Dense row-major tensor with optional reverse-mode gradient tracking.
///
/// Copies are shallow handles onto the same storage; use clone() for a deep copy.
/// Op results are never mutated; leaf parameters are updated in place by the
/// optimizer through mutable_data().
template <class T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;

    Tensor(Shape dims, std::vector<T> values, bool requires_grad = false)
        : impl_(std::make_shared<detail::TensorImpl<T>>()) {
        for (auto d : dims) {
            if (d <= 0) throw ShapeError("tensor dims must be positive, got " + shape_str(dims));
        }
        if (shape_numel(dims) != static_cast<std::int64_t>(values.size())) {
            throw ShapeError("tensor of shape " + shape_str(dims) + " given " +
                             std::to_string(values.size()) + " values");
        }
        impl_->dims = std::move(dims);
        impl_->data = std::move(values);
        impl_->requires_grad = requires_grad;
    }

    static Tensor zeros(Shape dims) { return full(std::move(dims), T(0)); }
    static Tensor ones(Shape dims) { return full(std::move(dims), T(1)); }
    static Tensor full(Shape dims, T value) {
        for (auto d : dims) {
            if (d <= 0) throw ShapeError("tensor dims must be positive, got " + shape_str(dims));
        }
        const auto n = shape_numel(dims);
        return Tensor(std::move(dims), std::vector<T>(static_cast<std::size_t>(n), value));
    }
    static Tensor scalar(T value) { return Tensor({1}, {value}); }

    bool defined() const { return impl_ != nullptr; }
    const Shape& dims() const { return impl_->dims; }
    std::int64_t dim(std::size_t i) const { return impl_->dims.at(i); }
    std::size_t rank() const { return impl_->dims.size(); }
    std::int64_t numel() const { return static_cast<std::int64_t>(impl_->data.size()); }
    static constexpr DType dtype() { return dtype_of<T>(); }

    std::span<const T> data() const { return impl_->data; }
    /// Direct write access. Only for leaves (parameters, buffers, inputs).
    std::span<T> mutable_data() { return impl_->data; }
    const std::vector<T>& values() const { return impl_->data; }

    T item() const {
        if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(dims()));
        return impl_->data[0];
    }
    T operator[](std::int64_t i) const { return impl_->data[static_cast<std::size_t>(i)]; }

    bool requires_grad() const { return impl_->requires_grad; }
    void set_requires_grad(bool on) { impl_->requires_grad = on; }
    bool is_leaf() const { return impl_->grad_fn == nullptr; }
    bool tracked() const { return impl_->tracked(); }

    bool has_grad() const { return !impl_->grad.empty(); }
    std::span<const T> grad() const { return impl_->grad; }
    void zero_grad() { impl_->grad.clear(); }

    /// Leaf copy of the values with no history.
    Tensor detach() const { return Tensor(dims(), impl_->data); }
    /// Deep copy preserving the requires_grad flag (not the gradient).
    Tensor clone() const { return Tensor(dims(), impl_->data, requires_grad()); }

    bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

    const std::shared_ptr<detail::TensorImpl<T>>& impl() const { return impl_; }

    /// Wraps an op result and records the node when any input is tracked.
    static Tensor make_result(Shape dims, std::vector<T> values,
                              std::vector<std::shared_ptr<detail::TensorImpl<T>>> inputs,
                              std::function<void(std::span<const T>)> backward) {
        Tensor out(std::move(dims), std::move(values));
        if (!detail::grad_mode()) return out;
        const bool any = std::any_of(inputs.begin(), inputs.end(),
                                     [](const auto& p) { return p && p->tracked(); });
        if (!any) return out;
        auto node = std::make_shared<detail::Node<T>>();
        node->inputs = std::move(inputs);
        node->backward = std::move(backward);
        out.impl_->grad_fn = std::move(node);
        return out;
    }

private:
    std::shared_ptr<detail::TensorImpl<T>> impl_;
};

/// Reverse-mode sweep from a scalar loss. Gradients accumulate additively into
/// every tracked ancestor; intermediate gradients are released afterwards.
template <class T>
void backward(const Tensor<T>& loss) {
    if (loss.numel() != 1) {
        throw ShapeError("backward() needs a scalar loss, got shape " + shape_str(loss.dims()));
    }
    if (!loss.tracked()) {
        throw ConfigError("backward(): loss does not depend on any tensor requiring grad");
    }
    using Impl = detail::TensorImpl<T>;

    // Iterative post-order DFS; `order` ends up topologically sorted (inputs first).
    std::vector<Impl*> order;
    std::unordered_set<Impl*> seen;
    std::vector<std::pair<Impl*, std::size_t>> stack;
    stack.emplace_back(loss.impl().get(), 0);
    seen.insert(loss.impl().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        const auto* fn = node->grad_fn.get();
        if (fn != nullptr && next < fn->inputs.size()) {
            Impl* child = fn->inputs[next++].get();
            if (child != nullptr && child->tracked() && seen.insert(child).second) {
                stack.emplace_back(child, 0);
            }
            continue;
        }
        order.push_back(node);
        stack.pop_back();
    }

    loss.impl()->grad_buffer()[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Impl* node = *it;
        if (node->grad_fn == nullptr || node->grad.empty()) continue;
        node->grad_fn->backward(node->grad);
        if (!node->requires_grad) {
            node->grad.clear();
            node->grad.shrink_to_fit();
        }
    }
}

namespace detail {

/// Accumulation target for an input's gradient, or nullptr when the input is not tracked.
template <class T>
T* grad_target(const std::shared_ptr<TensorImpl<T>>& impl) {
    if (!impl || !impl->tracked()) return nullptr;
    return impl->grad_buffer().data();
}

}  // namespace detail

}  // namespace attnconv
