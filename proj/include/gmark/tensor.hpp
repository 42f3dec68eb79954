#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "gmark/errors.hpp"

namespace gmark {

using Shape = std::vector<int>;

inline long long shape_numel(const Shape& shape) {
    long long n = 1;
    for (int d : shape) {
        if (d < 0) throw ShapeError("negative dimension in shape");
        n *= d;
    }
    return n;
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << "]";
    return os.str();
}

inline bool same_shape(const Shape& a, const Shape& b) { return a == b; }

// One node of the computation graph. Data is materialized eagerly when the
// producing op runs; `backprop` pulls this node's grad into its parents.
template <class S>
struct TensorNode {
    Shape shape;
    std::vector<S> data;
    std::vector<S> grad;  // empty until backward (or accumulation) touches it
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorNode<S>>> parents;
    std::function<void(TensorNode<S>&)> backprop;

    long long numel() const { return static_cast<long long>(data.size()); }

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), S(0));
    }

    void accumulate_grad(const S* src, long long n) {
        ensure_grad();
        for (long long i = 0; i < n; ++i) grad[static_cast<size_t>(i)] += src[static_cast<size_t>(i)];
    }
};

// Value-semantics handle over a shared graph node.
template <class S>
class Tensor {
public:
    using Node = TensorNode<S>;

    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        return filled(std::move(shape), S(0), requires_grad);
    }

    static Tensor filled(Shape shape, S value, bool requires_grad = false) {
        auto n = std::make_shared<Node>();
        long long count = shape_numel(shape);
        n->shape = std::move(shape);
        n->data.assign(static_cast<size_t>(count), value);
        n->requires_grad = requires_grad;
        return Tensor(std::move(n));
    }

    static Tensor from_data(Shape shape, std::vector<S> values, bool requires_grad = false) {
        long long count = shape_numel(shape);
        if (count != static_cast<long long>(values.size()))
            throw ShapeError("data length " + std::to_string(values.size()) +
                             " does not match shape " + shape_str(shape));
        auto n = std::make_shared<Node>();
        n->shape = std::move(shape);
        n->data = std::move(values);
        n->requires_grad = requires_grad;
        return Tensor(std::move(n));
    }

    static Tensor scalar(S value, bool requires_grad = false) {
        return from_data({}, {value}, requires_grad);
    }

    bool defined() const { return node_ != nullptr; }

    const Shape& shape() const { return check()->shape; }
    int dim(int i) const { return check()->shape.at(static_cast<size_t>(i)); }
    long long numel() const { return check()->numel(); }

    std::vector<S>& data() { return check()->data; }
    const std::vector<S>& data() const { return check()->data; }

    bool requires_grad() const { return check()->requires_grad; }
    void set_requires_grad(bool v) { check()->requires_grad = v; }

    bool has_grad() const { return defined() && !node_->grad.empty(); }
    const std::vector<S>& grad() const {
        if (!has_grad()) throw ValueError("tensor has no gradient");
        return node_->grad;
    }
    void zero_grad() {
        if (defined()) node_->grad.assign(node_->data.size(), S(0));
    }

    // Scalar convenience (numel() must be 1).
    S value() const {
        auto& n = *check();
        if (n.numel() != 1) throw ShapeError("value() on tensor of shape " + shape_str(n.shape));
        return n.data[0];
    }

    S at(std::initializer_list<int> idx) const {
        auto& n = *check();
        if (idx.size() != n.shape.size()) throw ShapeError("index rank mismatch");
        long long flat = 0;
        size_t k = 0;
        for (int i : idx) {
            if (i < 0 || i >= n.shape[k]) throw ShapeError("index out of range");
            flat = flat * n.shape[k] + i;
            ++k;
        }
        return n.data[static_cast<size_t>(flat)];
    }

    const std::shared_ptr<Node>& node() const { return node_; }

private:
    std::shared_ptr<Node> node_;

    const std::shared_ptr<Node>& check() const {
        if (!node_) throw ValueError("operation on undefined tensor");
        return node_;
    }
};

namespace detail {

template <class S>
void topo_order(TensorNode<S>* root, std::vector<TensorNode<S>*>& order) {
    // Iterative post-order DFS; parents precede children in `order`.
    std::unordered_set<TensorNode<S>*> visited;
    std::vector<std::pair<TensorNode<S>*, size_t>> stack;
    stack.emplace_back(root, 0);
    visited.insert(root);
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            TensorNode<S>* p = node->parents[next++].get();
            if (visited.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
}

}  // namespace detail

// Reverse-mode sweep from a scalar loss. Populates grad on every
// requires_grad node reachable from the loss; gradients accumulate
// additively across multiple uses of a tensor.
template <class S>
void backward(const Tensor<S>& loss) {
    if (!loss.defined()) throw ValueError("backward on undefined tensor");
    if (loss.numel() != 1)
        throw ShapeError("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
    auto* root = loss.node().get();
    std::vector<TensorNode<S>*> order;
    detail::topo_order(root, order);
    root->ensure_grad();
    root->grad[0] = S(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorNode<S>* node = *it;
        if (node->backprop && !node->grad.empty()) node->backprop(*node);
    }
}

template <class To, class From>
Tensor<To> cast(const Tensor<From>& t) {
    std::vector<To> out(t.data().size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = static_cast<To>(t.data()[i]);
    return Tensor<To>::from_data(t.shape(), std::move(out), t.requires_grad());
}

}  // namespace gmark
