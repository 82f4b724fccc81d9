#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string_view>
#include <vector>

#include "vidguide/tensor.hpp"

namespace vidguide {

class Var;

// Maps the upstream gradient to one gradient per parent. Parents that do not
// require gradients may receive an empty Tensor.
using BackwardRule = std::function<std::vector<Tensor>(const Tensor& grad_out)>;

struct Node {
    Tensor value;
    std::vector<Var> parents;
    std::string_view rule;  // name of the local-gradient rule, e.g. "matmul"
    BackwardRule backward;
    bool requires_grad = false;
};

// Handle into a dynamically recorded computation graph. Graphs are rebuilt
// for every evaluation; nodes are immutable after creation.
class Var {
   public:
    Var() = default;
    explicit Var(std::shared_ptr<const Node> node) : node_(std::move(node)) {}

    const Tensor& value() const { return node_->value; }
    const Shape& shape() const { return node_->value.shape(); }
    bool requires_grad() const { return node_->requires_grad; }
    std::string_view rule() const { return node_->rule; }
    const Node* node() const { return node_.get(); }
    explicit operator bool() const { return static_cast<bool>(node_); }

   private:
    std::shared_ptr<const Node> node_;
};

Var constant(Tensor value);
Var leaf(Tensor value);  // differentiable input

// Record an op. If no parent requires gradients the rule is dropped and the
// result is a constant.
Var record(Tensor value, std::vector<Var> parents, std::string_view rule, BackwardRule backward);

// Reverse-mode sweep from a scalar loss. Returns d(loss)/d(leaf) for each
// requested leaf, zero-filled when the leaf does not reach the loss.
std::vector<Tensor> backward(const Var& loss, std::span<const Var> leaves);
Tensor backward(const Var& loss, const Var& leaf);

}  // namespace vidguide
