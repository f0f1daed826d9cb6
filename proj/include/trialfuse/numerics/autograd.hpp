// SPDX-License-Identifier: Apache-2.0
#pragma once

// Reverse-mode differentiation on a dynamic tape. Every forward op allocates a
// node that owns its value and (when any input needs gradients) a closure that
// scatters the node's gradient into its parents. The graph lives exactly as
// long as the Vars that reference it, so a new tape is recorded per forward pass.

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "trialfuse/errors.hpp"
#include "trialfuse/numerics/tensor.hpp"

namespace trialfuse {

namespace detail {
inline bool& grad_enabled_flag() noexcept
{
    thread_local bool enabled = true;
    return enabled;
}
} // namespace detail

[[nodiscard]] inline bool grad_enabled() noexcept { return detail::grad_enabled_flag(); }

/// Disables tape recording on this thread for the guard's lifetime.
class NoGradGuard {
public:
    NoGradGuard() noexcept : previous_(detail::grad_enabled_flag()) { detail::grad_enabled_flag() = false; }
    ~NoGradGuard() { detail::grad_enabled_flag() = previous_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

template <typename T>
struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;
    bool requires_grad = false;
    bool leaf = false;

    Tensor<T>& grad_buffer()
    {
        if (grad.empty()) {
            grad = Tensor<T>(value.shape());
        }
        return grad;
    }
};

template <typename T>
class Var {
public:
    Var() = default;
    explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

    /// A value that never receives gradients.
    static Var constant(Tensor<T> value)
    {
        auto node = std::make_shared<Node<T>>();
        node->value = std::move(value);
        node->leaf = true;
        return Var(std::move(node));
    }

    [[nodiscard]] const Tensor<T>& value() const { return node_->value; }
    [[nodiscard]] const Tensor<T>& grad() const { return node_->grad; }
    [[nodiscard]] const Shape& shape() const { return node_->value.shape(); }
    [[nodiscard]] std::size_t rows() const { return node_->value.rows(); }
    [[nodiscard]] std::size_t cols() const { return node_->value.cols(); }
    [[nodiscard]] bool requires_grad() const { return node_->requires_grad; }
    [[nodiscard]] bool defined() const noexcept { return static_cast<bool>(node_); }
    [[nodiscard]] const std::shared_ptr<Node<T>>& node() const noexcept { return node_; }

    /// Scalar value of a one-element Var.
    [[nodiscard]] T item() const
    {
        if (node_->value.size() != 1) {
            throw DimensionError("item() on non-scalar " + shape_string(shape()));
        }
        return node_->value[0];
    }

private:
    std::shared_ptr<Node<T>> node_;
};

/// Build the result node of an op. `backward` receives the result node; its
/// `grad` is populated and it should accumulate into the parents' grad buffers.
/// Parents that do not require gradients must be skipped by the closure.
template <typename T>
Var<T> make_result(Tensor<T> value, std::vector<Var<T>> inputs, std::function<void(Node<T>&)> backward)
{
    auto node = std::make_shared<Node<T>>();
    node->value = std::move(value);
    if (grad_enabled()) {
        bool any = false;
        for (const auto& in : inputs) {
            any = any || in.requires_grad();
        }
        if (any) {
            node->requires_grad = true;
            node->parents.reserve(inputs.size());
            for (auto& in : inputs) {
                node->parents.push_back(in.node());
            }
            node->backward_fn = std::move(backward);
        }
    }
    return Var<T>(std::move(node));
}

/// Trainable (or frozen) leaf. Copies are deep: a copied Parameter owns a fresh
/// leaf with the same value and gradient.
template <typename T>
class Parameter {
public:
    Parameter() : Parameter(Tensor<T>({1})) {}

    explicit Parameter(Tensor<T> value, bool trainable = true) : node_(std::make_shared<Node<T>>())
    {
        node_->value = std::move(value);
        node_->grad = Tensor<T>(node_->value.shape());
        node_->leaf = true;
        node_->requires_grad = trainable;
    }

    Parameter(const Parameter& other) : Parameter(other.node_->value, other.node_->requires_grad)
    {
        node_->grad = other.node_->grad;
    }

    Parameter& operator=(const Parameter& other)
    {
        if (this != &other) {
            Parameter copy(other);
            node_ = std::move(copy.node_);
        }
        return *this;
    }

    Parameter(Parameter&&) noexcept = default;
    Parameter& operator=(Parameter&&) noexcept = default;

    [[nodiscard]] const Tensor<T>& value() const { return node_->value; }
    /// Direct write access for optimizers and checkpoint loading.
    [[nodiscard]] Tensor<T>& mutable_value() { return node_->value; }
    [[nodiscard]] const Tensor<T>& gradient() const { return node_->grad; }
    [[nodiscard]] Tensor<T>& mutable_gradient() { return node_->grad; }
    [[nodiscard]] const Shape& shape() const { return node_->value.shape(); }

    [[nodiscard]] bool trainable() const noexcept { return node_->requires_grad; }
    void set_trainable(bool trainable) noexcept { node_->requires_grad = trainable; }

    void zero_grad() { node_->grad.fill(T{0}); }

    [[nodiscard]] Var<T> var() const { return Var<T>(node_); }

private:
    std::shared_ptr<Node<T>> node_;
};

template <typename T>
struct NamedParameter {
    std::string name;
    Parameter<T>* param;
};

template <typename T>
using ParameterList = std::vector<NamedParameter<T>>;

template <typename T>
void zero_grads(const ParameterList<T>& params)
{
    for (const auto& p : params) {
        p.param->zero_grad();
    }
}

/// Accumulate d(loss)/d(value) into every reachable leaf that requires gradients.
template <typename T>
void backward(const Var<T>& loss)
{
    if (loss.value().size() != 1) {
        throw DimensionError("backward() requires a scalar loss, got " + shape_string(loss.shape()));
    }
    if (!loss.requires_grad()) {
        return;
    }

    // Iterative post-order DFS gives a topological order (parents before children).
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> visited;
    std::vector<std::pair<Node<T>*, std::size_t>> stack;
    stack.emplace_back(loss.node().get(), 0);
    visited.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node<T>* parent = node->parents[next++].get();
            if (parent->requires_grad && visited.insert(parent).second) {
                stack.emplace_back(parent, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    for (Node<T>* node : order) {
        if (!node->leaf) {
            node->grad = Tensor<T>(node->value.shape());
        }
    }
    loss.node()->grad_buffer()[0] += T{1};
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* node = *it;
        if (node->backward_fn) {
            node->backward_fn(*node);
        }
    }
}

} // namespace trialfuse
