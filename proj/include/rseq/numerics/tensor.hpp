#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

#include "rseq/errors.hpp"

namespace rseq {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << ']';
    return os.str();
}

template <typename S>
class Tensor;

namespace detail {

template <typename S>
struct TensorImpl;

// One recorded operation. The node keeps its inputs alive until backward
// has run; the closure holds whatever intermediates the gradient rule needs.
template <typename S>
struct TapeNode {
    std::string_view op;
    std::vector<std::shared_ptr<TensorImpl<S>>> inputs;
    std::function<void(std::span<const S> grad_out)> backward;
    std::uint64_t seq = 0;
};

template <typename S>
struct TensorImpl {
    Shape shape;
    std::vector<S> data;
    std::vector<S> grad;
    bool has_grad = false;
    bool requires_grad = false;
    std::shared_ptr<TapeNode<S>> node;

    std::span<S> ensure_grad() {
        if (!has_grad) {
            grad.assign(data.size(), S(0));
            has_grad = true;
        }
        return grad;
    }
};

inline std::atomic<std::uint64_t>& tape_clock() {
    static std::atomic<std::uint64_t> clock{0};
    return clock;
}

inline bool& grad_mode() {
    thread_local bool enabled = true;
    return enabled;
}

// Test hook: scales the incoming gradient of every node whose op matches.
// Used to demonstrate that the gradient checker catches a broken rule.
struct BackwardFault {
    std::string op;
    double scale = 1.0;
};

inline BackwardFault& backward_fault() {
    thread_local BackwardFault fault;
    return fault;
}

// Digest of which side of their kink every piecewise-linear op landed on
// during a forward pass. Only collected while a finite-difference probe is
// running.
struct KinkDigest {
    std::uint64_t value = 0xcbf29ce484222325ULL;
    void mix(bool bit) { value = (value ^ (bit ? 1u : 2u)) * 0x100000001b3ULL; }
};

inline KinkDigest*& kink_digest() {
    thread_local KinkDigest* digest = nullptr;
    return digest;
}

}  // namespace detail

// Disables tape recording on this thread for the guard's lifetime.
class NoGradGuard {
public:
    NoGradGuard() : prev_(detail::grad_mode()) { detail::grad_mode() = false; }
    ~NoGradGuard() { detail::grad_mode() = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

// Scoped installation of a BackwardFault.
class ScopedBackwardFault {
public:
    ScopedBackwardFault(std::string op, double scale) : prev_(detail::backward_fault()) {
        detail::backward_fault() = {std::move(op), scale};
    }
    ~ScopedBackwardFault() { detail::backward_fault() = prev_; }
    ScopedBackwardFault(const ScopedBackwardFault&) = delete;
    ScopedBackwardFault& operator=(const ScopedBackwardFault&) = delete;

private:
    detail::BackwardFault prev_;
};

/// Dense row-major array with an optional gradient slot.
///
/// A Tensor is a cheap shared handle. Values are fixed once an operation has
/// produced them; only parameters are updated in place (by the optimizer,
/// through mutable_data()). Operations on tensors that require gradients
/// record a TapeNode, and backward() walks those nodes in reverse creation
/// order.
template <typename S>
class Tensor {
public:
    using Scalar = S;

    Tensor() = default;

    Tensor(Shape shape, std::vector<S> data, bool requires_grad = false)
        : impl_(std::make_shared<detail::TensorImpl<S>>()) {
        if (shape_size(shape) != data.size()) {
            throw DimensionError("Tensor: shape " + shape_str(shape) + " holds " +
                                 std::to_string(shape_size(shape)) + " values, got " +
                                 std::to_string(data.size()));
        }
        impl_->shape = std::move(shape);
        impl_->data = std::move(data);
        impl_->requires_grad = requires_grad;
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        const auto n = shape_size(shape);
        return Tensor(std::move(shape), std::vector<S>(n, S(0)), requires_grad);
    }

    static Tensor full(Shape shape, S value, bool requires_grad = false) {
        const auto n = shape_size(shape);
        return Tensor(std::move(shape), std::vector<S>(n, value), requires_grad);
    }

    static Tensor scalar(S value) { return Tensor(Shape{}, std::vector<S>{value}); }

    bool defined() const noexcept { return static_cast<bool>(impl_); }

    const Shape& shape() const { return impl_->shape; }
    std::size_t rank() const { return impl_->shape.size(); }
    std::size_t size() const { return impl_->data.size(); }
    std::size_t dim(std::size_t i) const {
        if (i >= rank()) throw DimensionError("Tensor::dim: axis out of range for " + shape_str(shape()));
        return impl_->shape[i];
    }
    // Extent of the last axis; rank-0 tensors count as one column.
    std::size_t cols() const { return rank() == 0 ? 1 : impl_->shape.back(); }
    std::size_t rows() const { return size() / std::max<std::size_t>(cols(), 1); }

    std::span<const S> data() const { return impl_->data; }
    // In-place access for parameter updates and test fixtures. Never call on
    // a tensor that is an input to a recorded, not yet backpropagated node.
    std::span<S> mutable_data() { return impl_->data; }

    S item() const {
        if (size() != 1) throw UsageError("Tensor::item on tensor of shape " + shape_str(shape()));
        return impl_->data[0];
    }
    S operator[](std::size_t i) const { return impl_->data[i]; }
    S at(std::size_t r, std::size_t c) const { return impl_->data[r * cols() + c]; }

    bool requires_grad() const { return impl_->requires_grad; }
    void set_requires_grad(bool on) { impl_->requires_grad = on; }

    bool has_grad() const { return impl_->has_grad; }
    std::span<const S> grad() const {
        if (!impl_->has_grad) throw UsageError("Tensor::grad: no gradient populated");
        return impl_->grad;
    }
    std::span<S> mutable_grad() { return impl_->ensure_grad(); }
    void zero_grad() {
        if (impl_->has_grad) std::fill(impl_->grad.begin(), impl_->grad.end(), S(0));
    }
    void clear_grad() {
        impl_->grad.clear();
        impl_->has_grad = false;
    }

    // Deep copy of values without tape history.
    Tensor detach_copy() const { return Tensor(shape(), impl_->data, false); }

    std::string_view op() const { return impl_->node ? impl_->node->op : std::string_view{"leaf"}; }
    bool has_node() const { return static_cast<bool>(impl_->node); }

    const std::shared_ptr<detail::TensorImpl<S>>& impl() const { return impl_; }

private:
    std::shared_ptr<detail::TensorImpl<S>> impl_;
};

namespace detail {

template <typename S>
bool all_finite(std::span<const S> xs) {
    return std::all_of(xs.begin(), xs.end(), [](S v) { return std::isfinite(v); });
}

// Builds the output of an operation, enforcing the non-finite policy and
// recording a tape node when any input takes part in differentiation.
// make_backward receives raw pointers to the input impls (kept alive by the
// node) and returns the gradient rule.
template <typename S, typename MakeBackward>
Tensor<S> record(std::string_view op, Shape shape, std::vector<S> data,
                 std::initializer_list<Tensor<S>> inputs, MakeBackward&& make_backward) {
    if (!all_finite<S>(data)) throw NumericFault(std::string(op));
    Tensor<S> out(std::move(shape), std::move(data));
    if (!grad_mode()) return out;
    bool any = false;
    for (const auto& in : inputs) any = any || in.requires_grad();
    if (!any) return out;

    auto node = std::make_shared<TapeNode<S>>();
    node->op = op;
    node->seq = tape_clock().fetch_add(1, std::memory_order_relaxed);
    std::vector<TensorImpl<S>*> raw;
    for (const auto& in : inputs) {
        node->inputs.push_back(in.impl());
        raw.push_back(in.impl().get());
    }
    node->backward = make_backward(raw);
    out.impl()->node = std::move(node);
    out.set_requires_grad(true);
    return out;
}

// Gradient buffer of an input, or an empty span when it takes no gradient.
template <typename S>
std::span<S> grad_of(TensorImpl<S>* impl) {
    if (!impl->requires_grad) return {};
    return impl->ensure_grad();
}

}  // namespace detail

/// Reverse-mode sweep from a scalar loss. Every reachable tensor that
/// requires a gradient gets dLoss/dTensor added to its grad slot; the
/// recorded nodes are then released.
template <typename S>
void backward(const Tensor<S>& loss) {
    if (!loss.defined() || loss.size() != 1) {
        throw UsageError("backward: loss must be a scalar, got shape " +
                         (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
    }
    if (!loss.requires_grad()) throw UsageError("backward: loss is not connected to the tape");

    using Impl = detail::TensorImpl<S>;
    std::vector<std::shared_ptr<Impl>> order;
    std::unordered_set<Impl*> seen;
    std::vector<std::shared_ptr<Impl>> stack{loss.impl()};
    while (!stack.empty()) {
        auto cur = std::move(stack.back());
        stack.pop_back();
        if (!cur->node || !seen.insert(cur.get()).second) continue;
        for (const auto& in : cur->node->inputs) stack.push_back(in);
        order.push_back(std::move(cur));
    }
    std::sort(order.begin(), order.end(),
              [](const auto& a, const auto& b) { return a->node->seq > b->node->seq; });

    loss.impl()->ensure_grad()[0] += S(1);
    const auto& fault = detail::backward_fault();
    for (const auto& impl : order) {
        if (!impl->has_grad) continue;
        if (!fault.op.empty() && impl->node->op == fault.op) {
            std::vector<S> scaled(impl->grad);
            for (auto& g : scaled) g = static_cast<S>(g * fault.scale);
            impl->node->backward(scaled);
        } else {
            impl->node->backward(impl->grad);
        }
    }
    // Release the graph. Interior gradients are dropped with it.
    for (const auto& impl : order) {
        impl->node.reset();
        impl->grad.clear();
        impl->grad.shrink_to_fit();
        impl->has_grad = false;
    }
}

}  // namespace rseq
