#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "vot/tensor.hpp"

namespace vot {

template <typename T>
class Tape;

// Lightweight handle into a tape. Copyable, trivially cheap.
template <typename T>
struct Var {
    Tape<T>* tape = nullptr;
    int id = -1;

    bool valid() const { return tape != nullptr && id >= 0; }
    const Tensor<T>& val() const;
};

// Reverse-mode tape. Nodes are appended in execution order, which is a
// topological order by construction; backward() walks it once in reverse.
// A tape is confined to one logical thread.
template <typename T>
class Tape {
public:
    Var<T> leaf(Tensor<T> value, bool requires_grad = true, const char* name = "leaf") {
        return push(name, std::move(value), {}, nullptr, requires_grad);
    }

    // Records one executed op. `backprop` reads nodes_[id].grad and accumulates
    // into the parents' grad buffers; null for value-only nodes.
    Var<T> push(const char* op, Tensor<T> value, std::vector<int> parents,
                std::function<void(Tape&, int)> backprop, bool needs_grad) {
        if (check_finite_ && !value.all_finite())
            throw NumericsError(std::string("non-finite values produced by op '") + op + "'");
        Node n;
        n.op = op;
        n.value = std::move(value);
        n.parents = std::move(parents);
        n.backprop = std::move(backprop);
        n.needs_grad = needs_grad;
        nodes_.push_back(std::move(n));
        return Var<T>{this, static_cast<int>(nodes_.size()) - 1};
    }

    bool any_needs_grad(std::initializer_list<Var<T>> vars) const {
        for (const Var<T>& v : vars)
            if (v.valid() && nodes_[static_cast<size_t>(v.id)].needs_grad) return true;
        return false;
    }

    void backward(Var<T> root) {
        if (!root.valid() || root.tape != this) throw Error("backward: var not on this tape");
        if (nodes_[static_cast<size_t>(root.id)].value.numel() != 1)
            throw ShapeError("backward: root must be scalar");
        grad_buf(root.id)[0] = T(1);
        for (int id = root.id; id >= 0; --id) {
            Node& n = nodes_[static_cast<size_t>(id)];
            if (n.grad.empty() || !n.backprop) continue;
            n.backprop(*this, id);
        }
    }

    const Tensor<T>& value(Var<T> v) const { return nodes_[static_cast<size_t>(v.id)].value; }
    const Tensor<T>& value(int id) const { return nodes_[static_cast<size_t>(id)].value; }

    // Gradient of the last backward() w.r.t. v; zeros if the node was never
    // reached.
    Tensor<T> grad(Var<T> v) const {
        const Node& n = nodes_[static_cast<size_t>(v.id)];
        if (n.grad.empty()) return Tensor<T>::zeros(n.value.shape());
        return n.grad;
    }

    Tensor<T>& grad_buf(int id) {
        Node& n = nodes_[static_cast<size_t>(id)];
        if (n.grad.empty()) n.grad = Tensor<T>::zeros(n.value.shape());
        return n.grad;
    }

    bool needs_grad(int id) const { return nodes_[static_cast<size_t>(id)].needs_grad; }
    const std::string& op_name(int id) const { return nodes_[static_cast<size_t>(id)].op; }
    size_t size() const { return nodes_.size(); }

    // NaN/Inf guard on every op output. On for training; tests may disable it
    // to probe error paths.
    void set_check_finite(bool on) { check_finite_ = on; }
    bool check_finite() const { return check_finite_; }

private:
    struct Node {
        std::string op;
        Tensor<T> value;
        Tensor<T> grad;
        std::vector<int> parents;
        std::function<void(Tape&, int)> backprop;
        bool needs_grad = false;
    };

    std::vector<Node> nodes_;
    bool check_finite_ = true;
};

template <typename T>
const Tensor<T>& Var<T>::val() const {
    return tape->value(*this);
}

}  // namespace vot
