#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "admc/errors.hpp"
#include "admc/rng.hpp"

namespace admc {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& dims) {
    int64_t n = 1;
    for (int64_t d : dims) n *= d;
    return n;
}

inline std::string shape_str(const Shape& dims) {
    std::ostringstream os;
    os << '(';
    for (size_t i = 0; i < dims.size(); ++i) {
        if (i) os << ',';
        os << dims[i];
    }
    os << ')';
    return os.str();
}

namespace autograd {

// Graph-wide switches. Gradient recording is on by default; eval paths wrap
// themselves in NoGradGuard. Debug finiteness checks default to on in debug
// builds only.
inline bool& grad_mode() {
    thread_local bool enabled = true;
    return enabled;
}

inline bool& debug_checks() {
#ifdef NDEBUG
    static bool enabled = false;
#else
    static bool enabled = true;
#endif
    return enabled;
}

struct NoGradGuard {
    NoGradGuard() : prev_(grad_mode()) { grad_mode() = false; }
    ~NoGradGuard() { grad_mode() = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

} // namespace autograd

// Dense row-major tensor with reverse-mode autodiff. A Tensor is a cheap
// handle (shared_ptr) onto its storage + graph node. Non-leaf tensors carry
// a backward function that scatters their gradient into their parents.
template <typename T>
class Tensor {
public:
    struct Impl {
        Shape dims;
        std::vector<T> data;
        std::vector<T> grad; // empty until first backward touch
        bool requires_grad = false;
        bool is_leaf = true;
        bool consumed = false; // backward already ran through this node
        std::vector<Tensor> parents;
        std::function<void(Impl&)> backward_fn;
    };

    Tensor() = default;

    static Tensor zeros(Shape dims) {
        auto impl = std::make_shared<Impl>();
        impl->data.assign(static_cast<size_t>(shape_numel(dims)), T(0));
        impl->dims = std::move(dims);
        return Tensor(std::move(impl));
    }

    static Tensor full(Shape dims, T value) {
        Tensor t = zeros(std::move(dims));
        for (T& v : t.impl_->data) v = value;
        return t;
    }

    static Tensor from(Shape dims, std::vector<T> values) {
        if (static_cast<int64_t>(values.size()) != shape_numel(dims))
            raise(ErrorCategory::Shape,
                  "tensor data length " + std::to_string(values.size()) +
                      " does not match dims " + shape_str(dims));
        auto impl = std::make_shared<Impl>();
        impl->dims = std::move(dims);
        impl->data = std::move(values);
        return Tensor(std::move(impl));
    }

    static Tensor randn(Shape dims, rng::Stream& stream, double stddev = 1.0) {
        Tensor t = zeros(std::move(dims));
        for (T& v : t.impl_->data) v = static_cast<T>(stream.next_normal() * stddev);
        return t;
    }

    bool defined() const { return impl_ != nullptr; }
    const Shape& dims() const { return impl_->dims; }
    int64_t dim(size_t i) const { return impl_->dims[i]; }
    size_t rank() const { return impl_->dims.size(); }
    int64_t numel() const { return static_cast<int64_t>(impl_->data.size()); }

    const T* data() const { return impl_->data.data(); }
    const std::vector<T>& values() const { return impl_->data; }

    // Direct mutation is for leaves only (data prep, optimizer updates);
    // mutating an interior node would corrupt saved activations.
    T* mutable_data() {
        if (!impl_->is_leaf)
            raise(ErrorCategory::Usage, "mutable_data() on a non-leaf tensor");
        return impl_->data.data();
    }

    bool requires_grad() const { return impl_->requires_grad; }
    void set_requires_grad(bool v) {
        if (!impl_->is_leaf)
            raise(ErrorCategory::Usage, "requires_grad is settable on leaves only");
        impl_->requires_grad = v;
    }

    bool has_grad() const { return !impl_->grad.empty(); }
    const std::vector<T>& grad() const {
        if (impl_->grad.empty())
            raise(ErrorCategory::State, "tensor has no gradient (backward not run?)");
        return impl_->grad;
    }
    void zero_grad() {
        if (!impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), T(0));
    }

    T item() const {
        if (numel() != 1)
            raise(ErrorCategory::Shape, "item() on tensor of shape " + shape_str(dims()));
        return impl_->data[0];
    }

    // Reverse-mode sweep from a scalar root. Gradients accumulate on every
    // reachable tensor with requires_grad set. The traversed graph is released
    // afterwards; running backward again through it raises a state error.
    void backward() {
        if (numel() != 1)
            raise(ErrorCategory::Usage, "backward() requires a scalar loss");
        if (impl_->consumed)
            raise(ErrorCategory::State, "backward() on a stale graph; re-run forward first");
        if (!impl_->requires_grad) return; // constant loss: nothing depends on leaves

        // Strong refs keep interior nodes alive while their last owning
        // handles (parent lists) are being released below.
        std::vector<std::shared_ptr<Impl>> order;
        topo_sort(order);
        ensure_grad(*impl_);
        impl_->grad[0] = T(1);
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            Impl* node = it->get();
            if (node->backward_fn) {
                node->backward_fn(*node);
                node->backward_fn = nullptr;
                node->consumed = true;
                node->parents.clear();
            }
        }
    }

    static void ensure_grad(Impl& impl) {
        if (impl.grad.empty()) impl.grad.assign(impl.data.size(), T(0));
    }

    Impl* impl() const { return impl_.get(); }
    const std::shared_ptr<Impl>& impl_ptr() const { return impl_; }

private:
    explicit Tensor(std::shared_ptr<Impl> impl) : impl_(std::move(impl)) {}

    void topo_sort(std::vector<std::shared_ptr<Impl>>& order) const {
        // Iterative postorder DFS over parents.
        std::unordered_set<Impl*> visited;
        std::vector<std::pair<std::shared_ptr<Impl>, size_t>> stack;
        stack.emplace_back(impl_, 0);
        visited.insert(impl_.get());
        while (!stack.empty()) {
            auto& [node, next] = stack.back();
            if (next < node->parents.size()) {
                std::shared_ptr<Impl> parent = node->parents[next].impl_ptr();
                ++next;
                if (parent->consumed)
                    raise(ErrorCategory::State,
                          "graph reaches a node already consumed by a previous backward()");
                if (parent->backward_fn && !visited.count(parent.get())) {
                    visited.insert(parent.get());
                    stack.emplace_back(std::move(parent), 0);
                }
            } else {
                order.push_back(node);
                stack.pop_back();
            }
        }
    }

    template <typename U>
    friend class OpBuilder;

    std::shared_ptr<Impl> impl_;
};

// Helper used by ops to register a result node on the graph. If gradient
// recording is off or no parent needs gradients, the result stays a plain
// leaf and the backward closure is dropped.
template <typename T>
class OpBuilder {
public:
    static void check_finite(const Tensor<T>& t, const char* op) {
        if (!autograd::debug_checks()) return;
        for (T v : t.values()) {
            if (!std::isfinite(static_cast<double>(v)))
                raise(ErrorCategory::Training,
                      std::string("non-finite value produced by op '") + op + "'");
        }
    }

    static void attach(Tensor<T>& out, std::vector<Tensor<T>> parents,
                       std::function<void(typename Tensor<T>::Impl&)> backward) {
        if (!autograd::grad_mode()) return;
        bool any = false;
        for (const auto& p : parents)
            if (p.requires_grad()) any = true;
        if (!any) return;
        auto* impl = out.impl();
        impl->is_leaf = false;
        impl->requires_grad = true;
        impl->parents = std::move(parents);
        impl->backward_fn = std::move(backward);
    }
};

} // namespace admc
