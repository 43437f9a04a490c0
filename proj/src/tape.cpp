#include "vipt/tape.hpp"

#include <stdexcept>

namespace vipt {

const Tensor& Var::value() const { return tape_->value(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }
const Tensor& Var::grad() const { return tape_->grad(id_); }

Var Tape::leaf(Tensor value, bool requires_grad) {
  nodes_.push_back(Node{std::move(value), Tensor(), requires_grad, nullptr});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
  bool tracked = false;
  for (const Var& in : inputs) {
    if (&in.tape() != this) throw std::logic_error("tape: input recorded on a different tape");
    tracked = tracked || nodes_[in.id()].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), Tensor(), tracked, tracked ? std::move(backward) : nullptr});
  return Var(this, nodes_.size() - 1);
}

Tensor& Tape::grad_buffer(std::size_t id) {
  Node& node = nodes_[id];
  if (node.grad.empty()) node.grad = Tensor::zeros(node.value.shape());
  return node.grad;
}

void Tape::backward(const Var& loss) {
  if (&loss.tape() != this) throw std::logic_error("tape: loss recorded on a different tape");
  if (loss.value().size() != 1) {
    throw DimensionError("backward: loss must be a scalar, got shape " + shape_str(loss.shape()));
  }
  if (!nodes_[loss.id()].requires_grad) {
    throw std::invalid_argument("backward: loss does not depend on any tracked tensor");
  }
  grad_buffer(loss.id())[0] = 1.0;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.requires_grad || !node.backward || node.grad.empty()) continue;
    node.backward(*this, i);
  }
}

}  // namespace vipt
