#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "omnirestore/error.hpp"

namespace omnirestore {

using Shape = std::vector<int>;

inline long shape_numel(const Shape& shape) {
    long n = 1;
    for (int e : shape) {
        if (e <= 0) throw ShapeError("tensor extents must be positive");
        n *= e;
    }
    return n;
}

std::string shape_str(const Shape& shape);

// One recorded operation output. `parents` + `backprop` form the compute
// graph; both are cleared once backward() has consumed them.
template <class S>
struct Node {
    Shape shape;
    std::vector<S> value;
    std::vector<S> grad;  // allocated on first accumulation
    bool requires_grad = false;  // leaf flag
    bool needs_grad = false;     // this node or an ancestor requires grad
    std::vector<std::shared_ptr<Node<S>>> parents;
    std::function<void(Node<S>&)> backprop;
    const char* op = "";
    bool visit_mark = false;  // scratch for backward()'s traversal

    void accumulate(const S* g, long n) {
        if (grad.empty()) grad.assign(value.size(), S(0));
        for (long i = 0; i < n; ++i) grad[static_cast<size_t>(i)] += g[i];
    }
};

// Value-semantic handle over a shared graph node. Copying a Tensor aliases
// the node, as in the usual tape designs.
template <class S>
class Tensor {
  public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node<S>> n) : node_(std::move(n)) {}

    static Tensor zeros(Shape shape) {
        auto n = std::make_shared<Node<S>>();
        n->value.assign(static_cast<size_t>(shape_numel(shape)), S(0));
        n->shape = std::move(shape);
        return Tensor(std::move(n));
    }

    static Tensor full(Shape shape, S v) {
        Tensor t = zeros(std::move(shape));
        for (auto& x : t.node_->value) x = v;
        return t;
    }

    static Tensor from(Shape shape, std::vector<S> data) {
        if (static_cast<long>(data.size()) != shape_numel(shape))
            throw ShapeError("data length does not match shape " + shape_str(shape));
        auto n = std::make_shared<Node<S>>();
        n->shape = std::move(shape);
        n->value = std::move(data);
        return Tensor(std::move(n));
    }

    static Tensor scalar(S v) { return from({1}, {v}); }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    long numel() const { return static_cast<long>(node_->value.size()); }
    int dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
    int ndim() const { return static_cast<int>(node_->shape.size()); }

    const std::vector<S>& data() const { return node_->value; }
    std::vector<S>& mutable_data() { return node_->value; }

    S item() const {
        if (numel() != 1) throw ContractError("item() on non-scalar tensor " + shape_str(shape()));
        return node_->value[0];
    }

    bool requires_grad() const { return node_->requires_grad; }
    Tensor& set_requires_grad(bool v) {
        node_->requires_grad = v;
        node_->needs_grad = v || node_->needs_grad;
        return *this;
    }

    bool has_grad() const { return !node_->grad.empty(); }
    const std::vector<S>& grad() const {
        if (node_->grad.empty()) throw ContractError("tensor has no gradient; run backward() first");
        return node_->grad;
    }
    void zero_grad() { node_->grad.clear(); }

    // Same values, detached from any graph.
    Tensor detached() const {
        auto n = std::make_shared<Node<S>>();
        n->shape = node_->shape;
        n->value = node_->value;
        return Tensor(std::move(n));
    }

    // Reverse pass from a scalar. Visits every reachable recorded node once,
    // in reverse execution order; frees the graph unless retain_graph.
    void backward(bool retain_graph = false);

    std::shared_ptr<Node<S>>& node() { return node_; }
    const std::shared_ptr<Node<S>>& node() const { return node_; }

  private:
    std::shared_ptr<Node<S>> node_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

template <class S>
void Tensor<S>::backward(bool retain_graph) {
    if (!node_) throw ContractError("backward() on undefined tensor");
    if (numel() != 1) throw ContractError("backward() requires a scalar root, got " + shape_str(shape()));

    // Post-order DFS gives execution order; replay it reversed. Visitation is
    // tracked with a per-node mark, reset once the sweep is done. The order
    // list owns its nodes so that freeing graph edges mid-sweep cannot drop a
    // node that is still pending.
    std::vector<std::shared_ptr<Node<S>>> order;
    std::vector<std::pair<std::shared_ptr<Node<S>>, size_t>> stack;
    stack.push_back({node_, 0});
    while (!stack.empty()) {
        auto& [n, idx] = stack.back();
        if (idx == 0) {
            if (n->visit_mark) {
                stack.pop_back();
                continue;
            }
            n->visit_mark = true;
        }
        if (idx < n->parents.size()) {
            std::shared_ptr<Node<S>> p = n->parents[idx];
            ++idx;
            if (p->needs_grad && !p->visit_mark) stack.push_back({std::move(p), 0});
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }

    node_->grad.assign(1, S(1));
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<S>& n = **it;
        if (n.backprop && !n.grad.empty()) n.backprop(n);
        if (!retain_graph) {
            n.backprop = nullptr;
            n.parents.clear();
        }
    }
    for (auto& n : order) n->visit_mark = false;
}

}  // namespace omnirestore
