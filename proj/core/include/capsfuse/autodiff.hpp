#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "capsfuse/tensor.hpp"

namespace capsfuse::ad {

class Tape;

// Handle to a node recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Everything a backward rule sees. input_grads[i] is null when input i does
// not require a gradient; rules must accumulate (+=) into the non-null ones.
struct GradContext {
  std::span<const Tensor* const> inputs;
  const Tensor& output;
  const Tensor& output_grad;
  std::span<Tensor* const> input_grads;
};

using BackwardRule = std::function<void(const GradContext&)>;

// Define-by-run reverse-mode tape. Nodes are appended in construction order,
// so every input id precedes its consumer and backward() walks the list in
// exact reverse.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var variable(Tensor value);
  // Leaf bound to a parameter: backward() adds the leaf gradient into p.grad.
  Var parameter(Parameter& p);

  // Appends an operation node. The node requires a gradient iff any input does.
  Var record(Tensor value, std::vector<Var> inputs, BackwardRule rule);

  const Tensor& value(Var v) const { return nodes_[v.id()].value; }
  bool requires_grad(Var v) const { return nodes_[v.id()].requires_grad; }
  // Gradient of a node after backward(); null for nodes that do not require one.
  const Tensor* grad(Var v) const;

  std::size_t size() const { return nodes_.size(); }

  // Seeds d(loss)/d(loss) = 1 and propagates. Leaf and parameter gradients
  // accumulate across calls; intermediate gradients are recomputed.
  void backward(Var loss);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool is_leaf = true;
    std::vector<std::size_t> inputs;
    BackwardRule rule;
    Parameter* param = nullptr;
  };
  // deque keeps value() references valid while the tape grows.
  std::deque<Node> nodes_;
};

// ---- Core operations ------------------------------------------------------

// [m x k] x [k x n] -> [m x n]
Var matmul(Var a, Var b);
// Same-shape elementwise sum.
Var add(Var a, Var b);
// Sum of several same-shape tensors.
Var add_n(std::span<const Var> terms);
// x[B x n] + bias[n] broadcast over rows.
Var add_bias(Var x, Var bias);
// Same-shape elementwise product.
Var mul(Var a, Var b);
// x * s where s is a single-element tensor (learnable or not).
Var scale(Var x, Var s);
Var scale(Var x, double s);
Var tanh(Var x);
// Softmax over the last axis, computed with max subtraction. Throws
// NumericError on NaN input.
Var softmax(Var x);
Var sum(Var x);
Var reshape(Var x, Shape shape);
// Concatenates along the last axis; all leading dims must agree.
Var concat_last(std::span<const Var> parts);
// Stacks K tensors of shape [B x d] into [B x K x d].
Var stack_rows(std::span<const Var> parts);
// Euclidean norm over the last axis; drops that axis (a rank-1 input yields [1]).
Var norm_last(Var x);

}  // namespace capsfuse::ad
