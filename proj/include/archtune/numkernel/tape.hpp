#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "archtune/numkernel/ndarray.hpp"

namespace archtune::nk {

/// A learnable (or buffer) tensor with its accumulated gradient.
///
/// `trainable == false` marks a buffer (e.g. running normalization statistics)
/// that optimizers never touch. `frozen == true` keeps a trainable value
/// bit-identical across optimizer steps and binds as a constant on a tape.
struct Parameter {
    std::string name;
    NdArray value;
    NdArray grad;
    bool trainable = true;
    bool frozen = false;

    Parameter() = default;
    Parameter(std::string n, NdArray v, bool is_trainable = true)
        : name(std::move(n)), value(std::move(v)), grad(value.shape()), trainable(is_trainable) {}

    void zero_grad() { grad = NdArray(value.shape()); }
};

class Tape;

/// Handle to a node recorded on a specific tape.
struct Var {
    std::uint64_t tape_id = 0;
    std::size_t index = 0;
};

struct GradContext {
    const NdArray& out_value;
    const NdArray& out_grad;
    std::span<const NdArray* const> in_values;
    /// Null where the corresponding input does not require a gradient.
    std::span<NdArray* const> in_grads;
};

using BackwardFn = std::function<void(const GradContext&)>;

/// Reverse-mode recording of primitive ops.
///
/// Nodes are appended in execution order, so the record is topologically
/// sorted by construction; every input handle must refer to an earlier node
/// on the same tape. With gradients disabled, ops record values only.
class Tape {
public:
    explicit Tape(bool grad_enabled = true);
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    bool grad_enabled() const noexcept { return grad_enabled_; }

    Var constant(NdArray value);
    /// Leaf bound to a parameter; backward() accumulates into `p.grad` unless
    /// `p` is frozen.
    Var param(Parameter& p);

    Var record(NdArray value, std::initializer_list<Var> inputs, BackwardFn fn);
    Var record(NdArray value, std::span<const Var> inputs, BackwardFn fn);

    const NdArray& value(Var v) const;
    bool requires_grad(Var v) const;
    bool any_requires_grad(std::span<const Var> vs) const;
    /// Gradient of the last backward() with respect to `v` (empty if unreached).
    const NdArray& grad(Var v) const;

    std::size_t size() const noexcept { return nodes_.size(); }

    /// Seeds d(loss)/d(loss) = 1 and propagates in reverse record order.
    void backward(Var loss);

private:
    struct Node {
        NdArray value;
        const NdArray* external = nullptr;
        NdArray grad;
        std::vector<std::size_t> inputs;
        BackwardFn backward;
        Parameter* param = nullptr;
        bool requires_grad = false;

        const NdArray& val() const { return external ? *external : value; }
    };

    const Node& node(Var v) const;
    Node& node(Var v);

    std::uint64_t id_;
    bool grad_enabled_;
    std::deque<Node> nodes_;
};

}  // namespace archtune::nk
