#pragma once

// Reverse-mode tape over dense row-major double tensors.
//
// A Var is a handle to a graph node. Ops build new nodes whose backward
// closure accumulates into the parents' gradients; backward(loss) runs the
// closures in reverse topological order. Nodes that do not depend on any
// trainable leaf carry no closure.

#include <dip/common.hpp>

#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace dip::nn {

using Shape = std::vector<Index>;

Index numel(const Shape& shape);
std::string shape_string(const Shape& shape);

struct Tensor {
  Shape shape;
  VectorXd data;

  Tensor() = default;
  Tensor(Shape s, VectorXd d);
  static Tensor zeros(Shape s);
  Index size() const { return data.size(); }
};

struct Node {
  Shape shape;
  VectorXd value;
  VectorXd grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  VectorXd& grad_buffer() {
    if (grad.size() != value.size()) grad = VectorXd::Zero(value.size());
    return grad;
  }
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  Index dim(std::size_t axis) const { return node_->shape.at(axis); }
  Index size() const { return node_->value.size(); }
  const VectorXd& value() const { return node_->value; }
  VectorXd& mutable_value() { return node_->value; }
  const VectorXd& grad() const { return node_->grad; }
  bool requires_grad() const { return node_->requires_grad; }
  Tensor tensor() const { return {node_->shape, node_->value}; }
  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

Var constant(Tensor t);
Var leaf(Tensor t, bool requires_grad = true);

// Builds an op result. `fn` receives the result node; parents are reachable
// through node.parents in the order given here.
Var make_result(Shape shape, VectorXd value, std::vector<Var> parents, std::function<void(Node&)> fn);

// Seeds d(loss)/d(loss) = 1 and propagates. loss must hold one element.
void backward(const Var& loss);

}  // namespace dip::nn
