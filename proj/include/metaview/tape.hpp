#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "metaview/tensor.hpp"

namespace mv {

// Handle into a Tape. Only valid for the tape that created it.
struct Var {
    std::size_t id = 0;
};

using GradMap = std::map<std::string, Tensor>;

// Minimal reverse-mode autodiff over dense tensors. The graph is append-only
// (inputs always precede outputs), gradients accumulate with += so parameters
// shared across unrolled RNN timesteps work, and backward() is a pure replay:
// running it twice yields bit-identical gradients.
class Tape {
  public:
    Tape() { nodes_.reserve(256); }

    // Leaves. Constants take no gradient; params are named gradient roots.
    Var constant(Tensor value);
    Var param(const std::string& name, Tensor value);

    // value is copied out of the graph into a fresh constant leaf.
    Var stop_gradient(Var a) { return constant(value(a)); }

    Var matmul(Var a, Var b);

    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var tanh(Var a);
    Var relu(Var a);
    Var exp(Var a);
    Var scale(Var a, double c);

    // Last-axis concatenation; leading dims must agree.
    Var concat(Var a, Var b);

    // Numerically stable log-softmax over a rank-1 tensor.
    Var log_softmax(Var z);

    // Row lookup into a [V x D] table (one-hot times matrix).
    Var gather_row(Var table, std::size_t index);

    // Scalar element of a rank-1 tensor.
    Var pick(Var v, std::size_t index);

    // Reduce everything to a scalar.
    Var sum(Var a);

    // Reverse accumulation from a scalar loss. Returns the gradient for every
    // named param on the tape (zeros when unreachable from the loss).
    GradMap backward(Var loss);

    const Tensor& value(Var v) const { return nodes_[v.id].value; }

    // Gradient of a node after backward(); zeros if the node was unreachable.
    Tensor grad(Var v) const {
        const Node& n = nodes_[v.id];
        return n.grad_set ? n.grad : Tensor::zeros(n.value.shape);
    }

    std::size_t num_nodes() const { return nodes_.size(); }

  private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool grad_set = false;
        bool requires_grad = false;
        std::function<void(Tape&)> backward;
    };

    Var push(Tensor value, bool requires_grad, std::function<void(Tape&)> backward_fn);
    void accumulate(std::size_t id, const Tensor& delta);
    void accumulate_scaled(std::size_t id, const double* delta, std::size_t n, double s);
    bool wants_grad(Var v) const { return nodes_[v.id].requires_grad; }

    std::vector<Node> nodes_;
    std::vector<std::pair<std::string, std::size_t>> params_;
};

}  // namespace mv
