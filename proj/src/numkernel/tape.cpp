#include "archtune/numkernel/tape.hpp"

#include <atomic>
#include <stdexcept>

namespace archtune::nk {

namespace {
std::atomic<std::uint64_t> next_tape_id{1};
}

Tape::Tape(bool grad_enabled) : id_(next_tape_id.fetch_add(1)), grad_enabled_(grad_enabled) {}

Var Tape::constant(NdArray value) {
    Node n;
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return Var{id_, nodes_.size() - 1};
}

Var Tape::param(Parameter& p) {
    Node n;
    n.external = &p.value;
    n.param = &p;
    n.requires_grad = grad_enabled_ && !p.frozen;
    nodes_.push_back(std::move(n));
    return Var{id_, nodes_.size() - 1};
}

Var Tape::record(NdArray value, std::initializer_list<Var> inputs, BackwardFn fn) {
    return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(fn));
}

Var Tape::record(NdArray value, std::span<const Var> inputs, BackwardFn fn) {
    Node n;
    n.value = std::move(value);
    const std::size_t self = nodes_.size();
    for (const Var& in : inputs) {
        if (in.tape_id != id_) throw std::logic_error("tape: input recorded on a different tape");
        if (in.index >= self) throw std::logic_error("tape: input does not precede its consumer (cycle)");
        n.inputs.push_back(in.index);
        n.requires_grad = n.requires_grad || nodes_[in.index].requires_grad;
    }
    n.requires_grad = n.requires_grad && grad_enabled_;
    if (n.requires_grad) n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return Var{id_, self};
}

const Tape::Node& Tape::node(Var v) const {
    if (v.tape_id != id_ || v.index >= nodes_.size()) throw std::logic_error("tape: invalid variable handle");
    return nodes_[v.index];
}

Tape::Node& Tape::node(Var v) {
    if (v.tape_id != id_ || v.index >= nodes_.size()) throw std::logic_error("tape: invalid variable handle");
    return nodes_[v.index];
}

const NdArray& Tape::value(Var v) const { return node(v).val(); }

bool Tape::requires_grad(Var v) const { return node(v).requires_grad; }

bool Tape::any_requires_grad(std::span<const Var> vs) const {
    for (const Var& v : vs) {
        if (requires_grad(v)) return true;
    }
    return false;
}

const NdArray& Tape::grad(Var v) const { return node(v).grad; }

void Tape::backward(Var loss) {
    Node& root = node(loss);
    if (root.val().size() != 1) throw ShapeError("backward: loss must be a scalar");
    if (!root.requires_grad) return;
    for (auto& n : nodes_) n.grad = NdArray();
    root.grad = NdArray(root.val().shape(), 1.0);

    std::vector<const NdArray*> in_values;
    std::vector<NdArray*> in_grads;
    for (std::size_t i = loss.index + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (!n.requires_grad || n.grad.empty()) continue;
        if (n.param) {
            Parameter& p = *n.param;
            if (p.grad.shape() != p.value.shape()) p.grad = NdArray(p.value.shape());
            for (std::size_t k = 0; k < p.grad.size(); ++k) p.grad[k] += n.grad[k];
            continue;
        }
        if (!n.backward) continue;
        in_values.clear();
        in_grads.clear();
        for (std::size_t idx : n.inputs) {
            Node& in = nodes_[idx];
            in_values.push_back(&in.val());
            if (in.requires_grad) {
                if (in.grad.empty()) in.grad = NdArray(in.val().shape());
                in_grads.push_back(&in.grad);
            } else {
                in_grads.push_back(nullptr);
            }
        }
        n.backward(GradContext{n.val(), n.grad, in_values, in_grads});
    }
}

}  // namespace archtune::nk
