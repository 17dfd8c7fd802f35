#include "tape.hpp"

namespace cfmn {

Var Tape::leaf(Tensor value, bool needs_grad) {
    Node n;
    n.value = std::move(value);
    n.needs = needs_grad;
    n.op = "leaf";
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::param(Parameter& p) {
    Node n;
    n.value = p.value;
    n.needs = true;
    n.bound = &p;
    n.op = "param";
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::emit(Tensor value, const std::vector<Var>& inputs,
               std::function<void(Tape&, const Tensor&)> back, const char* op_name) {
    value.check_finite(op_name);
    Node n;
    n.value = std::move(value);
    n.op = op_name;
    for (Var in : inputs) {
        if (nodes_[static_cast<size_t>(in.id)].needs) {
            n.needs = true;
            break;
        }
    }
    if (n.needs) n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

Tensor& Tape::grad(Var v) {
    Node& n = nodes_[static_cast<size_t>(v.id)];
    if (n.grad.empty()) n.grad = Tensor(n.value.shape);
    return n.grad;
}

const Tensor* Tape::grad_if_any(Var v) const {
    const Node& n = nodes_[static_cast<size_t>(v.id)];
    return n.grad.empty() ? nullptr : &n.grad;
}

void Tape::backward(Var loss) {
    if (!loss.valid() || loss.id >= static_cast<int>(nodes_.size()))
        throw ShapeError("backward: invalid loss var");
    if (nodes_[static_cast<size_t>(loss.id)].value.numel() != 1)
        throw ShapeError("backward: loss must be scalar, got " +
                         nodes_[static_cast<size_t>(loss.id)].value.shape_str());
    grad(loss).data[0] = 1;
    for (int i = loss.id; i >= 0; --i) {
        Node& n = nodes_[static_cast<size_t>(i)];
        if (!n.needs || !n.back) continue;
        if (n.grad.empty()) continue;  // nothing flowed here
        n.back(*this, n.grad);
    }
    for (auto& n : nodes_) {
        if (!n.bound || n.grad.empty()) continue;
        Tensor& g = n.bound->grad;
        for (size_t i = 0; i < g.data.size(); ++i) g.data[i] += n.grad.data[i];
    }
}

}  // namespace cfmn
