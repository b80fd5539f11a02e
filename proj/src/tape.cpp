#include "snowfuse/tape.hpp"

#include <stdexcept>

namespace snowfuse {

const Tensor& Var::value() const {
    if (!tape) throw std::logic_error("Var is not attached to a tape");
    return tape->value(id);
}

Var Tape::leaf(Tensor value) { return record("leaf", {}, std::move(value), nullptr); }

Var Tape::record(std::string op, std::vector<std::size_t> inputs, Tensor value, BackwardFn backward) {
    for (std::size_t in : inputs) {
        if (in >= nodes_.size()) throw std::logic_error("record references unknown tensor id");
    }
    nodes_.push_back(Node{std::move(op), std::move(inputs), std::move(value), std::nullopt, std::move(backward)});
    return Var{this, nodes_.size() - 1};
}

const Tape::Node& Tape::node(std::size_t id) const {
    if (id >= nodes_.size()) throw std::out_of_range("unknown tensor id " + std::to_string(id));
    return nodes_[id];
}

const Tensor& Tape::value(std::size_t id) const { return node(id).value; }
const std::string& Tape::op(std::size_t id) const { return node(id).op; }
const std::vector<std::size_t>& Tape::inputs(std::size_t id) const { return node(id).inputs; }

Tensor& Tape::grad_slot(std::size_t id) {
    Node& n = nodes_.at(id);
    if (!n.grad) n.grad.emplace(n.value.shape(), 0.0);
    return *n.grad;
}

Tensor Tape::grad(std::size_t id) const {
    const Node& n = node(id);
    return n.grad ? *n.grad : Tensor(n.value.shape(), 0.0);
}

bool Tape::has_grad(std::size_t id) const { return node(id).grad.has_value(); }

std::size_t Tape::backward(Var output) {
    if (output.tape != this) throw std::logic_error("backward called with a Var from another tape");
    if (value(output.id).size() != 1) {
        throw ShapeError("backward needs a scalar output, got " + shape_to_string(value(output.id).shape()));
    }
    grad_slot(output.id).fill(1.0);

    std::size_t visited = 0;
    for (std::size_t i = output.id + 1; i-- > 0;) {
        ++visited;
        Node& n = nodes_[i];
        if (!n.backward || !n.grad) continue;
        // copy: the callback may grow other gradient slots
        const Tensor out_grad = *n.grad;
        n.backward(*this, out_grad);
    }
    return visited;
}

}  // namespace snowfuse
