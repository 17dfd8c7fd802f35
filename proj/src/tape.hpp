#pragma once

#include <functional>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace cfmn {

// A learnable tensor. Lives in ModelParams; gradients accumulate across
// backward passes until the optimizer clears them.
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;

    Parameter() = default;
    Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)) {
        grad = Tensor(value.shape);
    }

    void zero_grad() { grad.fill(0); }
};

class Tape;

// Handle to a tape node; only meaningful for the tape that produced it.
struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

// Reverse-mode tape. Ops append nodes in execution order; backward()
// walks them in exact reverse order. One tape per episode, then dropped.
class Tape {
public:
    Var leaf(Tensor value, bool needs_grad = false);

    // Leaf bound to a parameter; backward() adds the node gradient into
    // Parameter::grad.
    Var param(Parameter& p);

    // Record an op result. `back` runs during the reverse sweep with the
    // node's own output gradient and accumulates into the inputs' grads.
    Var emit(Tensor value, const std::vector<Var>& inputs,
             std::function<void(Tape&, const Tensor&)> back, const char* op_name);

    const Tensor& val(Var v) const { return nodes_[static_cast<size_t>(v.id)].value; }
    bool needs_grad(Var v) const { return nodes_[static_cast<size_t>(v.id)].needs; }

    // Gradient buffer, allocated (zeroed) on first touch.
    Tensor& grad(Var v);
    // nullptr when no gradient ever reached this node; lets backward
    // closures skip dead branches.
    const Tensor* grad_if_any(Var v) const;

    // Seeds d(loss)/d(loss) = 1 and runs the reverse sweep. `loss` must be
    // scalar. Flushes gradients of bound parameters.
    void backward(Var loss);

    size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        Tensor grad;  // empty until touched
        bool needs = false;
        Parameter* bound = nullptr;
        std::function<void(Tape&, const Tensor&)> back;
        const char* op = "";
    };
    std::vector<Node> nodes_;
};

}  // namespace cfmn
