#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "vipt/tensor.hpp"

namespace vipt {

class Tape;

// Handle to a value recorded on a Tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
  // Gradient written by Tape::backward. Empty tensor if none was produced.
  const Tensor& grad() const;

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Append-only record of a forward computation. Nodes are stored in creation
// order, which is a topological order; backward walks it once in reverse.
// One tape per forward pass; a tape is not thread-safe.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaf value. Gradients are only accumulated for leaves with requires_grad.
  Var leaf(Tensor value, bool requires_grad);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  // Records an op output. `backward` is only kept (and only called) when one
  // of `inputs` requires a gradient.
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward);

  // Seeds d(loss)/d(loss) = 1 and propagates to every tracked node.
  void backward(const Var& loss);

  std::size_t size() const { return nodes_.size(); }
  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  const Tensor& grad(std::size_t id) const { return nodes_[id].grad; }
  // Zero-initialized on first access.
  Tensor& grad_buffer(std::size_t id);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
};

}  // namespace vipt
