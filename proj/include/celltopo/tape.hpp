#pragma once

#include "celltopo/grid.hpp"

#include <functional>
#include <vector>

namespace celltopo {

class Tape;

/// Handle to a value recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Grid& value() const;
  bool valid() const { return tape != nullptr && id >= 0; }
};

/// Reverse-mode automatic differentiation record. Nodes are appended in
/// evaluation order, so replaying them backwards is a topological order and
/// every node is visited exactly once.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf holding a copy of `value`.
  Var input(Grid value, bool requires_grad = false);
  /// Leaf referring to an externally owned parameter; `value` must outlive the tape.
  Var parameter(const Grid& value);
  /// Like parameter() but excluded from differentiation (evaluation passes).
  Var constant(const Grid& value);

  const Grid& value(Var v) const;
  /// Accumulated gradient; all-zero for values the loss does not depend on.
  const Grid& grad(Var v) const;
  bool requires_grad(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id)).requires_grad; }

  /// Runs the backward pass from a one-element loss.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }

  // Used by operation implementations.
  using BackwardFn = std::function<void(Tape&, int self)>;
  Var record(Grid value, std::vector<int> inputs, BackwardFn backward);
  Grid& grad_buffer(int id);
  const Grid& grad_of(int id) const { return nodes_[static_cast<std::size_t>(id)].grad; }
  bool needs_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }
  const Grid& value_of(int id) const;

 private:
  struct Node {
    Grid owned;
    const Grid* external = nullptr;
    Grid grad;
    std::vector<int> inputs;
    BackwardFn backward;
    bool requires_grad = false;
  };
  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

// Differentiable operations. All operands must live on the same tape.
Var conv2d(Var input, Var kernels, Var bias, ConvGeometry geom);
Var conv2d_transpose(Var input, Var kernels, Var bias, ConvGeometry geom);
Var relu(Var x);
Var sigmoid(Var x);
/// Concatenates C x H x W values along the channel axis.
Var concat_channels(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var x, double factor);
Var add_scalar(Var x, double offset);
Var abs(Var x);
/// Natural log of max(x, floor).
Var log(Var x, double floor = 0.0);
Var sum(Var x);
Var mean(Var x);
/// Per-channel spatial mean of a C x H x W value, giving C values.
Var global_avg_pool(Var x);
/// Affine map of a vector: weights (M x N) times x (N) plus bias (M).
Var linear(Var x, Var weights, Var bias);

}  // namespace celltopo
