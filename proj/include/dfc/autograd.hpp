#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "dfc/tensor.hpp"

namespace dfc {

namespace detail {
inline bool& grad_mode_flag() {
    thread_local bool enabled = true;
    return enabled;
}
}  // namespace detail

/// RAII switch that stops ops from recording the graph on this thread.
class NoGradGuard {
public:
    NoGradGuard() : previous_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
    ~NoGradGuard() { detail::grad_mode_flag() = previous_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

inline bool grad_enabled() { return detail::grad_mode_flag(); }

template <class T>
struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    bool has_grad = false;
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node&)> backward_fn;

    Tensor<T>& grad_buffer() {
        if (!has_grad) {
            grad = Tensor<T>(value.shape(), T{0});
            has_grad = true;
        }
        return grad;
    }
};

/// Handle to a node of the computation graph. Copies share the node.
template <class T>
class Var {
public:
    Var() = default;
    explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

    static Var constant(Tensor<T> value) {
        auto n = std::make_shared<Node<T>>();
        n->value = std::move(value);
        return Var(std::move(n));
    }

    static Var parameter(Tensor<T> value) {
        auto n = std::make_shared<Node<T>>();
        n->value = std::move(value);
        n->requires_grad = true;
        return Var(std::move(n));
    }

    bool defined() const noexcept { return static_cast<bool>(node_); }
    const Tensor<T>& value() const { return node_->value; }
    Tensor<T>& mutable_value() { return node_->value; }
    const Shape& shape() const { return node_->value.shape(); }
    int dim(int i) const { return node_->value.dim(i); }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    T item() const { return node_->value.item(); }

    /// Gradient accumulated by the last backward pass; zeros when the node
    /// was not reached.
    Tensor<T> grad() const {
        if (node_->has_grad) return node_->grad;
        return Tensor<T>(node_->value.shape(), T{0});
    }
    bool has_grad() const { return node_->has_grad; }
    void zero_grad() {
        node_->grad = Tensor<T>();
        node_->has_grad = false;
    }

    Var detach() const { return constant(node_->value); }

    Node<T>* node() const { return node_.get(); }
    const std::shared_ptr<Node<T>>& node_ptr() const { return node_; }

private:
    std::shared_ptr<Node<T>> node_;
};

/// Builds the result node of an op. The backward closure is recorded only
/// when grad mode is on and some input needs a gradient.
template <class T>
Var<T> make_result(Tensor<T> value, std::vector<Var<T>> inputs, std::function<void(Node<T>&)> backward) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    if (grad_enabled()) {
        bool any = false;
        for (const auto& in : inputs) any = any || in.requires_grad();
        if (any) {
            n->requires_grad = true;
            n->inputs.reserve(inputs.size());
            for (auto& in : inputs) n->inputs.push_back(in.node_ptr());
            n->backward_fn = std::move(backward);
        }
    }
    return Var<T>(std::move(n));
}

/// Adds `g` into the gradient of input `i` of `self` when that input tracks gradients.
template <class T>
Tensor<T>* input_grad(Node<T>& self, std::size_t i) {
    auto& in = self.inputs[i];
    if (!in || !in->requires_grad) return nullptr;
    return &in->grad_buffer();
}

/// Reverse-mode sweep from a scalar root. Gradients accumulate into every
/// reachable node that requires them; call zero_grad on parameters first.
template <class T>
void backward(const Var<T>& root) {
    if (root.value().numel() != 1)
        throw ShapeError("backward() needs a scalar root, got " + shape_str(root.shape()));
    if (!root.requires_grad()) return;

    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    std::vector<std::pair<Node<T>*, std::size_t>> stack{{root.node(), 0}};
    seen.insert(root.node());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            Node<T>* child = node->inputs[next++].get();
            if (child && child->requires_grad && seen.insert(child).second) stack.push_back({child, 0});
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root.node()->grad_buffer()[0] += T{1};
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* n = *it;
        if (n->backward_fn && n->has_grad) n->backward_fn(*n);
    }
}

}  // namespace dfc
