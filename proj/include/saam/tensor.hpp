#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "saam/common.hpp"

namespace saam {

// ---------------------------------------------------------------------------
// Dense rank-4 tensor with a dynamic autodiff tape over whole-tensor ops.
//
// A Tensor is a cheap handle onto a shared Node. Forward ops create new nodes
// that remember their parents and a backprop closure; backward() walks the
// graph in reverse topological order and accumulates gradients (sum) into
// every reachable node with requires_grad. Values are immutable after forward
// creation except for grad accumulation, so concurrent forwards on disjoint
// tensors are safe.
//
// T is float for training/inference and double for gradient checking.
// ---------------------------------------------------------------------------

template <class T>
struct Node {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;  // allocated lazily, same length as value
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void()> backprop;  // pushes this->grad into parents

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    }
};

// Thread-local switch: when disabled, ops skip tape construction entirely.
namespace detail {
inline bool& grad_mode() {
    thread_local bool enabled = true;
    return enabled;
}
}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode(); }

struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(detail::grad_mode()) { detail::grad_mode() = false; }
    ~NoGradGuard() { detail::grad_mode() = prev; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

template <class T>
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(const Shape& s, T fill = T(0)) : node_(std::make_shared<Node<T>>()) {
        if (s.n <= 0 || s.c <= 0 || s.h <= 0 || s.w <= 0)
            throw ShapeError("Tensor: all dims must be positive, got " + s.str());
        node_->shape = s;
        node_->value.assign(std::size_t(s.numel()), fill);
    }

    static Tensor zeros(const Shape& s) { return Tensor(s, T(0)); }
    static Tensor full(const Shape& s, T v) { return Tensor(s, v); }
    static Tensor scalar(T v) { return Tensor(Shape{1, 1, 1, 1}, v); }

    static Tensor from_data(const Shape& s, std::vector<T> data) {
        if (i64(data.size()) != s.numel())
            throw ShapeError("Tensor::from_data: " + std::to_string(data.size()) +
                             " values for shape " + s.str());
        Tensor t(s);
        t.node_->value = std::move(data);
        return t;
    }

    static Tensor from_node(std::shared_ptr<Node<T>> n) {
        Tensor t;
        t.node_ = std::move(n);
        return t;
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    i64 numel() const { return node_->shape.numel(); }

    std::vector<T>& data() { return node_->value; }
    const std::vector<T>& data() const { return node_->value; }

    T& at(i64 n, i64 c, i64 h, i64 w) { return node_->value[std::size_t(shape().index(n, c, h, w))]; }
    T at(i64 n, i64 c, i64 h, i64 w) const {
        return node_->value[std::size_t(shape().index(n, c, h, w))];
    }

    bool requires_grad() const { return node_->requires_grad; }
    Tensor& set_requires_grad(bool v) {
        node_->requires_grad = v;
        return *this;
    }

    std::vector<T>& grad() {
        node_->ensure_grad();
        return node_->grad;
    }
    const std::vector<T>& grad() const { return node_->grad; }
    bool has_grad() const { return node_->grad.size() == node_->value.size(); }
    void zero_grad() {
        if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
    }

    // Deep copy; result is a leaf.
    Tensor clone() const {
        Tensor t(shape());
        t.node_->value = node_->value;
        return t;
    }

    // Same values, detached from the tape.
    Tensor detach() const { return clone(); }

    template <class U>
    Tensor<U> cast() const {
        Tensor<U> t{shape()};
        auto& dst = t.data();
        const auto& src = node_->value;
        for (std::size_t i = 0; i < src.size(); ++i) dst[i] = U(src[i]);
        return t;
    }

    std::shared_ptr<Node<T>> node() const { return node_; }

    // Reverse-mode sweep from a scalar loss. Grads accumulate across multiple
    // uses of a tensor; order is fixed by graph construction order.
    void backward() const {
        if (numel() != 1)
            throw ValueError("backward: loss must be scalar, got shape " + shape().str());
        if (!node_->requires_grad)
            throw ValueError("backward: loss does not require grad (no recorded ops)");

        std::vector<Node<T>*> order;
        std::unordered_set<Node<T>*> seen;
        std::vector<std::pair<Node<T>*, std::size_t>> stack;
        stack.push_back({node_.get(), 0});
        seen.insert(node_.get());
        while (!stack.empty()) {
            auto& [nd, idx] = stack.back();
            if (idx < nd->parents.size()) {
                Node<T>* p = nd->parents[idx++].get();
                if (p->requires_grad && !seen.count(p)) {
                    seen.insert(p);
                    stack.push_back({p, 0});
                }
            } else {
                order.push_back(nd);
                stack.pop_back();
            }
        }

        node_->ensure_grad();
        node_->grad[0] += T(1);
        for (auto it = order.rbegin(); it != order.rend(); ++it)
            if ((*it)->backprop) (*it)->backprop();
    }

private:
    std::shared_ptr<Node<T>> node_;
};

// Free-function spelling used throughout the training loop.
template <class T>
void backward(const Tensor<T>& loss) {
    loss.backward();
}

// True when the tape is live and at least one input will receive gradients.
template <class T>
bool tape_active(std::initializer_list<const Tensor<T>*> inputs) {
    if (!grad_enabled()) return false;
    for (auto* t : inputs)
        if (t->requires_grad()) return true;
    return false;
}

// Records out as the result of an op over parents. The closure may capture
// out.node().get() raw; the node owns its closure so the pointer stays valid
// for the closure's lifetime.
template <class T>
void attach_tape(Tensor<T>& out, std::initializer_list<Tensor<T>> parents,
                 std::function<void()> bp) {
    auto n = out.node();
    n->requires_grad = true;
    for (const auto& p : parents) n->parents.push_back(p.node());
    n->backprop = std::move(bp);
}

template <class T>
bool all_finite(const Tensor<T>& t) {
    for (T v : t.data())
        if (!std::isfinite(double(v))) return false;
    return true;
}

}  // namespace saam
