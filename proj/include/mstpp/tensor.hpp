#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "errors.hpp"

namespace mstpp {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << ']';
    return os.str();
}

namespace detail {

struct TensorImpl;

struct Node {
    std::vector<std::shared_ptr<TensorImpl>> inputs;
    // Receives the gradient of the node's output and accumulates into inputs.
    std::function<void(const std::vector<double>&)> backward;
};

struct TensorImpl {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;
    bool requires_grad = false;
    // Shape-only tensor: carries extents but no storage. Used for cost-only passes.
    bool meta = false;
    // Set once backward() has consumed and freed the graph behind this tensor.
    bool released = false;
    std::shared_ptr<Node> grad_fn;
};

inline bool& grad_mode() {
    thread_local bool enabled = true;
    return enabled;
}

}  // namespace detail

/// Disables graph recording on the calling thread while alive.
class NoGradGuard {
   public:
    NoGradGuard() : prev_(detail::grad_mode()) { detail::grad_mode() = false; }
    ~NoGradGuard() { detail::grad_mode() = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

   private:
    bool prev_;
};

inline bool grad_enabled() { return detail::grad_mode(); }

/// Dense row-major float64 tensor with reverse-mode autodiff. Copies share
/// storage (handle semantics); use clone() for a deep copy.
class Tensor {
   public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        const auto n = shape_numel(shape);
        return from(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
    }

    static Tensor full(Shape shape, double value, bool requires_grad = false) {
        const auto n = shape_numel(shape);
        return from(std::move(shape), std::vector<double>(n, value), requires_grad);
    }

    static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false) {
        if (shape_numel(shape) != data.size())
            throw DimensionError("tensor data length " + std::to_string(data.size()) +
                                 " does not match shape " + shape_str(shape));
        for (auto e : shape)
            if (e == 0) throw DimensionError("tensor extents must be positive: " + shape_str(shape));
        auto impl = std::make_shared<detail::TensorImpl>();
        impl->shape = std::move(shape);
        impl->data = std::move(data);
        impl->requires_grad = requires_grad;
        return Tensor(std::move(impl));
    }

    static Tensor scalar(double v, bool requires_grad = false) { return from({1}, {v}, requires_grad); }

    static Tensor meta(Shape shape) {
        auto impl = std::make_shared<detail::TensorImpl>();
        impl->shape = std::move(shape);
        impl->meta = true;
        return Tensor(std::move(impl));
    }

    explicit operator bool() const { return impl_ != nullptr; }
    bool defined() const { return impl_ != nullptr; }

    const Shape& shape() const { return impl_->shape; }
    std::size_t rank() const { return impl_->shape.size(); }
    std::size_t dim(std::size_t i) const { return impl_->shape.at(i); }
    std::size_t numel() const { return shape_numel(impl_->shape); }
    bool is_meta() const { return impl_->meta; }

    std::span<double> data() { return impl_->data; }
    std::span<const double> data() const { return impl_->data; }
    const std::vector<double>& values() const { return impl_->data; }

    double operator[](std::size_t i) const { return impl_->data[i]; }
    double& operator[](std::size_t i) { return impl_->data[i]; }

    double item() const {
        if (numel() != 1) throw DimensionError("item() on non-scalar tensor " + shape_str(shape()));
        return impl_->data[0];
    }

    bool requires_grad() const { return impl_->requires_grad; }
    void set_requires_grad(bool v) { impl_->requires_grad = v; }
    bool is_leaf() const { return impl_->grad_fn == nullptr && !impl_->released; }

    bool has_grad() const { return !impl_->grad.empty(); }
    std::span<const double> grad() const { return impl_->grad; }
    void zero_grad() { impl_->grad.clear(); }

    /// Deep copy without graph history.
    Tensor clone() const {
        if (is_meta()) return meta(shape());
        return from(shape(), impl_->data, false);
    }

    Tensor detach() const { return clone(); }

    bool same_storage(const Tensor& o) const { return impl_ == o.impl_; }

    /// Reverse-mode sweep from a scalar loss. Frees the graph afterwards.
    void backward() const;

    detail::TensorImpl& impl() const { return *impl_; }
    const std::shared_ptr<detail::TensorImpl>& impl_ptr() const { return impl_; }

   private:
    explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
    friend Tensor make_op_result(Shape, std::vector<double>, std::initializer_list<Tensor>,
                                 std::function<void(const std::vector<double>&)>);
    friend Tensor make_meta_result(Shape);

    std::shared_ptr<detail::TensorImpl> impl_;
};

inline Tensor make_meta_result(Shape shape) { return Tensor::meta(std::move(shape)); }

/// Wraps freshly computed output data and, when any input is tracked and
/// grad mode is on, attaches a backward closure.
inline Tensor make_op_result(Shape shape, std::vector<double> data, std::initializer_list<Tensor> inputs,
                             std::function<void(const std::vector<double>&)> backward) {
    auto impl = std::make_shared<detail::TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = std::move(data);
    bool tracked = false;
    if (grad_enabled())
        for (const auto& t : inputs)
            if (t.defined() && t.requires_grad()) tracked = true;
    if (tracked) {
        impl->requires_grad = true;
        auto node = std::make_shared<detail::Node>();
        for (const auto& t : inputs)
            if (t.defined() && t.requires_grad()) node->inputs.push_back(t.impl_ptr());
        node->backward = std::move(backward);
        impl->grad_fn = std::move(node);
    }
    return Tensor(std::move(impl));
}

inline bool any_meta(std::initializer_list<Tensor> ts) {
    return std::any_of(ts.begin(), ts.end(), [](const Tensor& t) { return t.defined() && t.is_meta(); });
}

/// Gradient accumulator for `t`, or nullptr when `t` is untracked.
inline double* grad_sink(const Tensor& t) {
    if (!t.defined() || !t.requires_grad()) return nullptr;
    auto& g = t.impl().grad;
    if (g.empty()) g.assign(t.numel(), 0.0);
    return g.data();
}

inline void Tensor::backward() const {
    if (!impl_) throw std::logic_error("backward() on an undefined tensor");
    if (impl_->released)
        throw std::logic_error("backward() called twice: the graph was already released");
    if (numel() != 1) throw DimensionError("backward() requires a scalar loss, got " + shape_str(shape()));
    if (!impl_->requires_grad) throw std::logic_error("backward() on a detached tensor (no tracked inputs)");

    // Iterative post-order DFS gives a topological order of graph nodes.
    std::vector<detail::TensorImpl*> order;
    std::unordered_set<detail::TensorImpl*> seen;
    std::vector<std::pair<detail::TensorImpl*, std::size_t>> stack{{impl_.get(), 0}};
    seen.insert(impl_.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (node->grad_fn && next < node->grad_fn->inputs.size()) {
            auto* child = node->grad_fn->inputs[next++].get();
            if (seen.insert(child).second) stack.emplace_back(child, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    if (impl_->grad.empty()) impl_->grad.assign(1, 0.0);
    impl_->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        auto* node = *it;
        if (node->grad_fn && !node->grad.empty()) node->grad_fn->backward(node->grad);
    }
    for (auto* node : order) {
        if (node->grad_fn) {
            node->grad_fn.reset();
            node->released = true;
            node->grad.clear();
            node->grad.shrink_to_fit();
        }
    }
}

}  // namespace mstpp
