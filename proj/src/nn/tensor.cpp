#include <dip/nn/tensor.hpp>

#include <unordered_set>

namespace dip::nn {

Index numel(const Shape& shape) {
  Index n = 1;
  for (Index s : shape) n *= s;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) out += (i ? "," : "") + std::to_string(shape[i]);
  return out + "]";
}

Tensor::Tensor(Shape s, VectorXd d) : shape(std::move(s)), data(std::move(d)) {
  if (numel(shape) != data.size())
    throw ShapeMismatch("tensor: data length " + std::to_string(data.size()) + " does not match shape " +
                        shape_string(shape));
}

Tensor Tensor::zeros(Shape s) {
  const Index n = numel(s);
  return {std::move(s), VectorXd::Zero(n)};
}

Var constant(Tensor t) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(t.shape);
  node->value = std::move(t.data);
  return Var(node);
}

Var leaf(Tensor t, bool requires_grad) {
  Var v = constant(std::move(t));
  v.node()->requires_grad = requires_grad;
  return v;
}

Var make_result(Shape shape, VectorXd value, std::vector<Var> parents, std::function<void(Node&)> fn) {
  auto node = std::make_shared<Node>();
  if (numel(shape) != value.size()) throw ShapeMismatch("op result: value length disagrees with " + shape_string(shape));
  node->shape = std::move(shape);
  node->value = std::move(value);
  for (const auto& p : parents) node->requires_grad = node->requires_grad || p.requires_grad();
  if (node->requires_grad) {
    node->parents.reserve(parents.size());
    for (auto& p : parents) node->parents.push_back(p.node());
    node->backward_fn = std::move(fn);
  }
  return Var(node);
}

void backward(const Var& loss) {
  if (loss.size() != 1) throw ShapeMismatch("backward: loss must be a scalar, got " + shape_string(loss.shape()));
  if (!loss.requires_grad()) return;

  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{loss.node().get(), 0}};
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && seen.insert(parent).second) stack.push_back({parent, 0});
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  loss.node()->grad_buffer()(0) += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward_fn && node->grad.size() == node->value.size()) node->backward_fn(*node);
  }
}

}  // namespace dip::nn
