#pragma once

#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "absa/error.hpp"
#include "absa/tensor.hpp"

namespace absa {

template <class T>
class Tape;

/// Handle to a node recorded on a Tape. Cheap to copy; only valid while the
/// owning tape is alive.
template <class T>
class Var {
public:
    Var() = default;
    Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

    Tape<T>& tape() const { return *tape_; }
    std::size_t id() const { return id_; }
    const Tensor<T>& value() const { return tape_->value(id_); }
    const Shape& shape() const { return value().shape; }
    std::size_t size() const { return value().size(); }
    bool requires_grad() const { return tape_->requires_grad(id_); }
    std::span<const T> grad() const { return tape_->grad_view(id_); }

private:
    Tape<T>* tape_ = nullptr;
    std::size_t id_ = 0;
};

/// Records operations in execution order, so node ids are already a
/// topological order. Backward walks the ids in reverse, visiting each node
/// once; gradients from fan-out accumulate additively.
///
/// Parameters are referenced rather than copied. After backward() their
/// gradient is added into Tensor::grad, so several tapes (or several uses of
/// one parameter inside a tape) accumulate into the same buffer.
template <class T>
class Tape {
public:
    using BackwardFn = std::function<void(Tape&, std::size_t self)>;

    explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    bool grad_enabled() const { return grad_enabled_; }

    Var<T> constant(Tensor<T> value) {
        value.grad.clear();
        Node& n = nodes_.emplace_back();
        n.owned = std::move(value);
        n.op = "constant";
        return Var<T>(this, nodes_.size() - 1);
    }

    /// Leaf bound to an external tensor that must outlive the tape.
    Var<T> parameter(Tensor<T>& param) {
        Node& n = nodes_.emplace_back();
        n.param = &param;
        n.requires_grad = grad_enabled_;
        n.op = "parameter";
        return Var<T>(this, nodes_.size() - 1);
    }

    /// Appends the output of an operation. Throws NumericError if the forward
    /// result contains NaN or Inf.
    Var<T> record(const char* op, Tensor<T> out, std::initializer_list<Var<T>> inputs,
                  BackwardFn backward) {
        return record(op, std::move(out), std::vector<Var<T>>(inputs), std::move(backward));
    }

    Var<T> record(const char* op, Tensor<T> out, const std::vector<Var<T>>& inputs,
                  BackwardFn backward) {
        if (!out.all_finite()) {
            throw NumericError(std::string("non-finite value produced by ") + op);
        }
        bool needs = false;
        for (const auto& in : inputs) {
            if (&in.tape() != this) throw ContractError(std::string(op) + ": input from another tape");
            needs = needs || requires_grad(in.id());
        }
        out.grad.clear();
        Node& n = nodes_.emplace_back();
        n.owned = std::move(out);
        n.op = op;
        n.requires_grad = needs && grad_enabled_;
        if (n.requires_grad) n.backward = std::move(backward);
        return Var<T>(this, nodes_.size() - 1);
    }

    const Tensor<T>& value(std::size_t id) const {
        const Node& n = nodes_.at(id);
        return n.param ? *n.param : n.owned;
    }

    bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }

    /// Mutable gradient buffer of a node, zero-initialised on first access.
    std::span<T> grad(std::size_t id) {
        Node& n = nodes_.at(id);
        if (n.grad.empty()) n.grad.assign(value(id).size(), T{0});
        return n.grad;
    }

    std::span<const T> grad_view(std::size_t id) const { return nodes_.at(id).grad; }

    std::size_t size() const { return nodes_.size(); }
    const char* op_name(std::size_t id) const { return nodes_.at(id).op; }

    void backward(Var<T> loss) {
        if (&loss.tape() != this) throw ContractError("backward: loss belongs to another tape");
        if (loss.size() != 1) {
            throw ContractError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
        }
        if (consumed_) throw ContractError("backward: tape already consumed");
        consumed_ = true;
        if (!requires_grad(loss.id())) return;
        grad(loss.id())[0] = T{1};
        for (std::size_t id = loss.id() + 1; id-- > 0;) {
            Node& n = nodes_[id];
            if (n.grad.empty() || !n.requires_grad) continue;
            if (n.backward) n.backward(*this, id);
            if (n.param) {
                if (n.param->grad.size() != n.grad.size()) n.param->zero_grad();
                for (std::size_t i = 0; i < n.grad.size(); ++i) n.param->grad[i] += n.grad[i];
            }
        }
    }

private:
    struct Node {
        Tensor<T> owned;
        Tensor<T>* param = nullptr;
        std::vector<T> grad;
        bool requires_grad = false;
        BackwardFn backward;
        const char* op = "";
    };

    std::deque<Node> nodes_;
    bool grad_enabled_;
    bool consumed_ = false;
};

}  // namespace absa
