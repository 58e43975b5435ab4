#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "transmat/tensor.hpp"

namespace transmat {

template <class T>
struct Node {
    Tensor<T> value;
    Tensor<T> grad;  // allocated on first accumulation
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    // Reads this->grad and accumulates into parents' grads.
    std::function<void(Node&)> backward_fn;

    Tensor<T>& grad_buffer() {
        if (grad.shape() != value.shape()) grad = Tensor<T>(value.shape());
        return grad;
    }
    void accumulate(const Tensor<T>& g) {
        auto& buf = grad_buffer();
        T* d = buf.data();
        const T* s = g.data();
        for (int64_t i = 0; i < buf.size(); ++i) d[i] += s[i];
    }
};

/// Handle to a node of the reverse-mode tape. Copies share the node.
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
    static Var leaf(Tensor<T> value, bool requires_grad = true) {
        auto n = std::make_shared<Node<T>>();
        n->value = std::move(value);
        n->requires_grad = requires_grad;
        return Var(std::move(n));
    }

    bool defined() const { return node_ != nullptr; }
    const Tensor<T>& value() const { return node_->value; }
    Tensor<T>& mutable_value() { return node_->value; }
    const Shape& shape() const { return node_->value.shape(); }
    int64_t dim(int i) const { return node_->value.dim(i); }
    bool requires_grad() const { return node_->requires_grad; }
    const std::shared_ptr<Node<T>>& node() const { return node_; }

    /// Gradient accumulated by backward(); zeros if none reached this node.
    const Tensor<T>& grad() const { return node_->grad_buffer(); }
    void zero_grad() {
        if (!node_->grad.empty()) node_->grad.fill(T(0));
    }

    /// Seeds a scalar output with 1 and propagates.
    void backward() const { backward(Tensor<T>(shape(), T(1))); }
    void backward(const Tensor<T>& seed) const;

private:
    std::shared_ptr<Node<T>> node_;
};

/// Builds a result node. Parents that do not require gradients are dropped so
/// inference graphs are released as soon as possible.
template <class T>
Var<T> make_result(Tensor<T> value, std::initializer_list<Var<T>> parents,
                   std::function<void(Node<T>&)> backward_fn) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    bool any = false;
    for (const auto& p : parents) any = any || p.requires_grad();
    if (any) {
        n->requires_grad = true;
        for (const auto& p : parents) n->parents.push_back(p.node());
        n->backward_fn = std::move(backward_fn);
    }
    return Var<T>(std::move(n));
}

template <class T>
Var<T> make_result(Tensor<T> value, const std::vector<Var<T>>& parents,
                   std::function<void(Node<T>&)> backward_fn) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    bool any = false;
    for (const auto& p : parents) any = any || p.requires_grad();
    if (any) {
        n->requires_grad = true;
        for (const auto& p : parents) n->parents.push_back(p.node());
        n->backward_fn = std::move(backward_fn);
    }
    return Var<T>(std::move(n));
}

template <class T>
void Var<T>::backward(const Tensor<T>& seed) const {
    if (!node_->requires_grad) return;
    if (seed.shape() != shape()) throw ShapeError("backward seed shape mismatch");

    // Iterative post-order DFS gives a topological order.
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> visited;
    std::vector<std::pair<Node<T>*, size_t>> stack{{node_.get(), 0}};
    visited.insert(node_.get());
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->parents.size()) {
            Node<T>* p = n->parents[next++].get();
            if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }

    node_->accumulate(seed);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* n = *it;
        if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
    }
}

/// Accumulates `g` into parent `i` of `self` when that parent wants gradients.
template <class T>
inline void accumulate_parent(Node<T>& self, size_t i, const Tensor<T>& g) {
    auto& p = *self.parents[i];
    if (p.requires_grad) p.accumulate(g);
}

template <class T>
inline bool parent_wants_grad(const Node<T>& self, size_t i) {
    return self.parents[i]->requires_grad;
}

}  // namespace transmat
