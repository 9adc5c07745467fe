#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <type_traits>
#include <unordered_set>
#include <utility>
#include <vector>

#include "scformer/error.hpp"

namespace scformer {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ", ";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

// One node of the reverse-mode tape. `backprop` scatters this node's grad
// into its parents' grads; it is empty for leaves and for results computed
// outside any gradient path.
template <typename T>
struct TensorNode {
    static_assert(std::is_floating_point_v<T>, "tensors are float or double");

    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<TensorNode<T>>> parents;
    std::function<void(TensorNode<T>&)> backprop;

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    }
};

template <typename T>
inline void check_finite(const char* op, const std::vector<T>& values) {
    for (T v : values) {
        if (!std::isfinite(v)) {
            throw ScfError(errc::non_finite,
                           std::string("non-finite value produced by op '") + op + "'");
        }
    }
}

// Shared-ownership handle over a tape node. Copying a Tensor aliases the
// same node, so parameters can live in a model struct and on the tape at
// the same time.
template <typename T>
class Tensor {
public:
    using Node = TensorNode<T>;

    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        auto node = std::make_shared<Node>();
        node->shape = std::move(shape);
        node->value.assign(shape_numel(node->shape), T(0));
        node->requires_grad = requires_grad;
        return Tensor(std::move(node));
    }

    static Tensor full(Shape shape, T fill, bool requires_grad = false) {
        Tensor t = zeros(std::move(shape), requires_grad);
        for (T& v : t.value()) v = fill;
        return t;
    }

    static Tensor from_data(Shape shape, std::vector<T> data, bool requires_grad = false) {
        if (shape_numel(shape) != data.size()) {
            throw ScfError(errc::shape_mismatch,
                           "from_data: " + std::to_string(data.size()) +
                               " values do not fill shape " + shape_str(shape));
        }
        check_finite("leaf", data);
        auto node = std::make_shared<Node>();
        node->shape = std::move(shape);
        node->value = std::move(data);
        node->requires_grad = requires_grad;
        return Tensor(std::move(node));
    }

    static Tensor scalar(T v, bool requires_grad = false) {
        return from_data({1}, {v}, requires_grad);
    }

    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<T> data,
                         bool requires_grad = false) {
        return from_data({rows, cols}, std::move(data), requires_grad);
    }

    static Tensor vector(std::vector<T> data, bool requires_grad = false) {
        std::size_t n = data.size();
        return from_data({n}, std::move(data), requires_grad);
    }

    bool defined() const { return node_ != nullptr; }

    const Shape& shape() const { return node()->shape; }
    std::size_t rank() const { return node()->shape.size(); }
    std::size_t numel() const { return node()->value.size(); }

    std::size_t rows() const {
        require_rank(2, "rows()");
        return node()->shape[0];
    }
    std::size_t cols() const {
        require_rank(2, "cols()");
        return node()->shape[1];
    }

    std::vector<T>& value() { return node()->value; }
    const std::vector<T>& value() const { return node()->value; }

    T& at(std::size_t i) { return node()->value[i]; }
    T at(std::size_t i) const { return node()->value[i]; }
    T& at(std::size_t i, std::size_t j) { return node()->value[i * cols() + j]; }
    T at(std::size_t i, std::size_t j) const { return node()->value[i * cols() + j]; }

    T item() const {
        if (numel() != 1) {
            throw ScfError(errc::shape_mismatch,
                           "item() on tensor of shape " + shape_str(shape()));
        }
        return node()->value[0];
    }

    bool requires_grad() const { return node()->requires_grad; }

    std::vector<T>& grad() {
        node()->ensure_grad();
        return node()->grad;
    }
    const std::vector<T>& grad() const {
        node()->ensure_grad();
        return node()->grad;
    }

    void zero_grad() { node()->grad.assign(node()->value.size(), T(0)); }

    Node* node() const {
        if (!node_) throw ScfError(errc::internal, "use of an undefined tensor");
        return node_.get();
    }
    const std::shared_ptr<Node>& handle() const {
        node();
        return node_;
    }

    // Deep copy of values only; the copy is a fresh leaf.
    Tensor clone(bool requires_grad = false) const {
        return from_data(shape(), value(), requires_grad);
    }

    static Tensor wrap(std::shared_ptr<Node> node) { return Tensor(std::move(node)); }

private:
    explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    void require_rank(std::size_t r, const char* what) const {
        if (rank() != r) {
            throw ScfError(errc::shape_mismatch,
                           std::string(what) + " on tensor of shape " + shape_str(shape()));
        }
    }

    std::shared_ptr<Node> node_;
};

// Parents-first topological order of the tape reachable from `root`.
template <typename T>
std::vector<TensorNode<T>*> topo_order(TensorNode<T>* root) {
    std::vector<TensorNode<T>*> order;
    std::unordered_set<TensorNode<T>*> seen;
    std::vector<std::pair<TensorNode<T>*, std::size_t>> stack;
    seen.insert(root);
    stack.emplace_back(root, 0);
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next == node->parents.size()) {
            order.push_back(node);
            stack.pop_back();
            continue;
        }
        TensorNode<T>* parent = node->parents[next].get();
        ++next;
        if (seen.insert(parent).second) stack.emplace_back(parent, 0);
    }
    return order;
}

// Reverse-mode sweep from a scalar loss. Gradients accumulate (+=) into
// every reachable node that lies on a gradient path; leaves keep theirs
// until zero_grad.
template <typename T>
void backward(const Tensor<T>& loss) {
    if (loss.numel() != 1) {
        throw ScfError(errc::shape_mismatch,
                       "backward requires a scalar loss, got shape " + shape_str(loss.shape()));
    }
    if (!loss.requires_grad()) {
        throw ScfError(errc::autograd_invalid,
                       "backward on a loss that does not depend on any gradient-requiring tensor");
    }
    auto order = topo_order(loss.node());
    for (TensorNode<T>* n : order)
        if (n->requires_grad) n->ensure_grad();
    loss.node()->grad[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorNode<T>* n = *it;
        if (n->backprop) n->backprop(*n);
    }
}

}  // namespace scformer
