#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "lessnet/tensor.hpp"

namespace lessnet {

template <typename T>
class Tape;

/// Handle to a value recorded on a Tape.
template <typename T>
struct Var {
    Tape<T>* tape = nullptr;
    std::size_t id = 0;

    const Tensor<T>& value() const { return tape->value(*this); }
    const Shape& shape() const { return value().shape(); }
    bool needs_grad() const { return tape->needs_grad(*this); }
};

/// Records executed operations so their adjoints can be replayed in reverse.
/// A tape and its Vars belong to one thread.
template <typename T>
class Tape {
public:
    using Backprop = std::function<void(Tape&, const Tensor<T>& out_grad)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Value that never receives a gradient.
    Var<T> constant(Tensor<T> value) { return push(std::move(value), false, {}); }

    /// Differentiable input (parameter or field under test).
    Var<T> leaf(Tensor<T> value) { return push(std::move(value), true, {}); }

    /// Result of an operation; `backprop` distributes out_grad to the inputs.
    Var<T> record(Tensor<T> value, bool needs_grad, Backprop backprop)
    {
        return push(std::move(value), needs_grad, needs_grad ? std::move(backprop) : Backprop{});
    }

    const Tensor<T>& value(Var<T> v) const { return nodes_.at(v.id).value; }
    bool needs_grad(Var<T> v) const { return nodes_.at(v.id).needs_grad; }
    std::size_t size() const noexcept { return nodes_.size(); }

    /// Gradient accumulated for v; zeros when nothing reached it.
    const Tensor<T>& grad(Var<T> v)
    {
        Node& n = nodes_.at(v.id);
        if (n.grad.empty()) n.grad = Tensor<T>(n.value.shape());
        return n.grad;
    }

    /// Adds g into the gradient slot of v. Used by op adjoints.
    Tensor<T>& grad_slot(Var<T> v)
    {
        Node& n = nodes_.at(v.id);
        if (n.grad.empty()) n.grad = Tensor<T>(n.value.shape());
        return n.grad;
    }

    void accumulate(Var<T> v, const Tensor<T>& g)
    {
        if (!needs_grad(v)) return;
        Tensor<T>& slot = grad_slot(v);
        for (std::size_t i = 0; i < slot.size(); ++i) slot[i] += g[i];
    }

    void backward(Var<T> loss)
    {
        const Tensor<T>& lv = value(loss);
        if (lv.size() != 1)
            throw std::invalid_argument("backward requires a scalar loss, got shape " + shape_string(lv.shape()));
        for (Node& n : nodes_) n.grad = Tensor<T>();
        grad_slot(loss)[0] = T(1);
        for (std::size_t i = loss.id + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (!n.backprop || n.grad.empty()) continue;
            // The callback may grow other nodes' grads but never this node's.
            n.backprop(*this, n.grad);
        }
    }

private:
    struct Node {
        Tensor<T> value;
        Tensor<T> grad;
        bool needs_grad = false;
        Backprop backprop;
    };

    Var<T> push(Tensor<T> value, bool needs_grad, Backprop backprop)
    {
        nodes_.push_back(Node{std::move(value), Tensor<T>(), needs_grad, std::move(backprop)});
        return Var<T>{this, nodes_.size() - 1};
    }

    std::deque<Node> nodes_; // deque: value() references survive later records
};

template <typename T>
bool any_needs_grad(std::initializer_list<Var<T>> vars)
{
    for (const auto& v : vars)
        if (v.needs_grad()) return true;
    return false;
}

} // namespace lessnet
