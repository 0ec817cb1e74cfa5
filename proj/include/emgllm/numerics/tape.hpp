// SPDX-FileCopyrightText: (c) 2026 The emgllm Authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <deque>
#include <functional>
#include <initializer_list>
#include <utility>

#include "emgllm/numerics/parameters.hpp"
#include "emgllm/numerics/tensor.hpp"

namespace emgllm::numerics {

template <typename T>
class Tape;

// Handle to a node recorded on a Tape.
template <typename T>
struct Var {
    Tape<T>* tape = nullptr;
    int id = -1;

    bool valid() const noexcept { return tape != nullptr && id >= 0; }
    const Tensor<T>& value() const { return tape->value(id); }
    const Shape& shape() const { return value().shape(); }
    int rows() const { return value().rows(); }
    int cols() const { return value().cols(); }
};

// Reverse-mode tape. Nodes are appended in evaluation order, so a reverse
// sweep over ids is a valid topological order. One thread writes a tape.
template <typename T>
class Tape {
   public:
    using BackwardFn = std::function<void(Tape&, const Tensor<T>& out_grad)>;

    explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    bool grad_enabled() const noexcept { return grad_enabled_; }

    Var<T> constant(Tensor<T> value) { return push(std::move(value), false, nullptr); }

    Var<T> leaf(Tensor<T> value, bool requires_grad) {
        return push(std::move(value), requires_grad && grad_enabled_, nullptr);
    }

    // The node aliases the parameter: no copy is made and gradients are
    // accumulated straight into Parameter::grad when it is trainable.
    Var<T> param(Parameter<T>& p) {
        Node node;
        node.param = &p;
        node.requires_grad = p.trainable && grad_enabled_;
        nodes_.push_back(std::move(node));
        return Var<T>{this, static_cast<int>(nodes_.size()) - 1};
    }

    Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> parents, BackwardFn fn) {
        bool needs = false;
        if (grad_enabled_) {
            for (const auto& p : parents) {
                needs = needs || requires_grad(p.id);
            }
        }
        return push(std::move(value), needs, needs ? std::move(fn) : BackwardFn{});
    }

    template <typename Range>
    Var<T> record_n(Tensor<T> value, const Range& parents, BackwardFn fn) {
        bool needs = false;
        if (grad_enabled_) {
            for (const auto& p : parents) {
                needs = needs || requires_grad(p.id);
            }
        }
        return push(std::move(value), needs, needs ? std::move(fn) : BackwardFn{});
    }

    const Tensor<T>& value(int id) const {
        const Node& n = nodes_.at(static_cast<std::size_t>(id));
        return n.param ? n.param->value : n.value;
    }

    bool requires_grad(int id) const { return nodes_.at(static_cast<std::size_t>(id)).requires_grad; }

    // Gradient buffer of a node, zero-allocated on first access.
    Tensor<T>& grad(int id) {
        Node& n = nodes_.at(static_cast<std::size_t>(id));
        if (n.param) {
            n.param->accumulate_into_grad();
            return n.param->grad;
        }
        if (n.grad.size() != n.value.size() || n.grad.shape() != n.value.shape()) {
            n.grad = Tensor<T>(n.value.shape());
        }
        n.has_grad = true;
        return n.grad;
    }

    // Gradient of a non-parameter node after backward(), or nullptr.
    const Tensor<T>* grad_if(int id) const {
        const Node& n = nodes_.at(static_cast<std::size_t>(id));
        if (n.param) {
            return n.param->has_grad ? &n.param->grad : nullptr;
        }
        return n.has_grad ? &n.grad : nullptr;
    }

    void backward(Var<T> loss) {
        if (loss.tape != this) {
            throw ContractError("backward: variable belongs to another tape");
        }
        const Tensor<T>& v = value(loss.id);
        if (v.size() != 1) {
            throw ContractError("backward requires a scalar loss, got shape " + shape_str(v.shape()));
        }
        if (!requires_grad(loss.id)) {
            return;
        }
        grad(loss.id)[0] += T(1);
        for (int id = loss.id; id >= 0; --id) {
            Node& n = nodes_[static_cast<std::size_t>(id)];
            if (n.backward && n.has_grad) {
                n.backward(*this, n.grad);
            }
        }
    }

    std::size_t size() const noexcept { return nodes_.size(); }

   private:
    struct Node {
        Tensor<T> value;
        Tensor<T> grad;
        Parameter<T>* param = nullptr;
        BackwardFn backward;
        bool requires_grad = false;
        bool has_grad = false;
    };

    Var<T> push(Tensor<T> value, bool requires_grad, BackwardFn fn) {
        Node node;
        node.value = std::move(value);
        node.requires_grad = requires_grad;
        node.backward = std::move(fn);
        nodes_.push_back(std::move(node));
        return Var<T>{this, static_cast<int>(nodes_.size()) - 1};
    }

    std::deque<Node> nodes_;
    bool grad_enabled_ = true;
};

}  // namespace emgllm::numerics
