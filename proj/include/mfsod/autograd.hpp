#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "mfsod/tensor.hpp"

namespace mfsod {

/// Node of the dynamically built computation graph. Operations allocate a
/// node per output, remember their inputs and register a closure that
/// scatters the node's gradient back into the inputs' gradients.
template <typename T>
struct Node {
    Tensor<T> value;
    Tensor<T> grad;  // allocated lazily during backward()
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node<T>>> parents;
    std::function<void(Node<T>&)> backward_fn;

    Node() = default;
    explicit Node(Tensor<T> val) : value(std::move(val)) {}

    void ensure_grad() {
        if (grad.empty()) grad = Tensor<T>::zeros_like(value);
    }
    void zero_grad() { grad = Tensor<T>(); }
};

template <typename T>
using VarPtr = std::shared_ptr<Node<T>>;

template <typename T>
VarPtr<T> make_var(Tensor<T> value, bool requires_grad = false) {
    auto node = std::make_shared<Node<T>>(std::move(value));
    node->requires_grad = requires_grad;
    return node;
}

/// Marks op outputs that need a backward visit: anything downstream of a
/// parameter or of an input the caller asked gradients for.
template <typename T>
bool any_requires_grad(const std::vector<VarPtr<T>>& xs) {
    for (const auto& x : xs)
        if (x && x->requires_grad) return true;
    return false;
}

namespace detail {

template <typename T>
void topo_sort(const VarPtr<T>& root, std::vector<Node<T>*>& order) {
    std::unordered_set<Node<T>*> visited;
    // Iterative post-order DFS; graphs here are deep enough that recursion
    // would be risky at large spatial sizes.
    std::vector<std::pair<Node<T>*, size_t>> stack;
    stack.emplace_back(root.get(), 0);
    visited.insert(root.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Node<T>* parent = node->parents[idx++].get();
            if (parent && parent->requires_grad && !visited.count(parent)) {
                visited.insert(parent);
                stack.emplace_back(parent, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
}

}  // namespace detail

/// Reverse-mode sweep from a scalar (1,1,1,1) node.
template <typename T>
void backward(const VarPtr<T>& loss) {
    require(loss->value.size() == 1, "backward() expects a scalar loss node");
    std::vector<Node<T>*> order;
    detail::topo_sort(loss, order);
    loss->ensure_grad();
    loss->grad.v[0] = T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* node = *it;
        if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
    }
}

}  // namespace mfsod
