#pragma once

// Reverse-mode differentiation over a linear tape.
//
// Every op appends one node holding its forward value and, when any input
// needs a gradient, a closure that pushes the node's gradient into its inputs.
// Nodes are appended after their inputs, so walking the tape backwards is a
// valid reverse topological order.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

#include "svq/array.hpp"

namespace svq {

class Tape;

class Var {
 public:
  Var() = default;

  const Array& value() const;
  const Shape& shape() const { return value().shape(); }
  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool requires_grad() const;
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  // Called with the tape and the id of the node whose gradient is being pushed.
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Array value);
  Var parameter(Array value);

  // Appends an op result. The backward closure is dropped when no input
  // requires a gradient.
  Var record(Array value, std::initializer_list<Var> inputs, BackwardFn backward);
  Var record(Array value, std::span<const Var> inputs, BackwardFn backward);

  // Seeds d(loss)/d(loss) = seed and replays the tape in reverse.
  void backward(const Var& loss, double seed = 1.0);

  // Gradient of the last backward() target w.r.t. v; exact zeros if unreachable.
  Array grad(const Var& v) const;

  const Array& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  bool has_grad(std::size_t id) const { return !nodes_[id].grad.empty(); }

  // Gradient buffer of a node, allocated as zeros on first touch. Only valid
  // inside backward().
  std::span<double> grad_slot(std::size_t id);
  std::span<const double> grad_of(std::size_t id) const { return nodes_[id].grad; }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Array value;
    std::vector<double> grad;
    BackwardFn backward;
    bool requires_grad = false;
  };

  std::vector<Node> nodes_;
};

// Shape of the attention pattern: token i may attend to token j iff
// segments[i] == segments[j]. An empty vector means full attention.
using Segments = std::vector<int>;

// -- elementwise and linear algebra --
Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var add_bias(const Var& x, const Var& bias);  // x: n x d, bias: d
Var scale(const Var& x, double c);
Var affine(const Var& x, double a, double b);  // a * x + b
Var powc(const Var& x, double exponent);       // x must be positive unless exponent is an integer
Var clamp(const Var& x, double lo, double hi);

// -- shape --
Var reshape(const Var& x, Shape shape);
Var concat(std::span<const Var> parts, std::size_t axis);
Var concat(std::initializer_list<Var> parts, std::size_t axis);
Var slice_rows(const Var& x, std::size_t begin, std::size_t end);
Var gather_rows(const Var& table, std::span<const std::size_t> ids);
Var pick(const Var& x, std::span<const std::size_t> cols);  // n x m -> n, x[i, cols[i]]

// -- reductions --
Var sum(const Var& x);       // -> scalar
Var mean_all(const Var& x);  // -> scalar
Var mean(const Var& x, std::size_t axis);

// -- nonlinearities --
Var softmax(const Var& x);      // over the last axis
Var log_softmax(const Var& x);  // over the last axis
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);
Var gelu(const Var& x);
Var sigmoid(const Var& x);
Var softplus(const Var& x);
Var log(const Var& x);

// -- geometry --
Var sq_dist(const Var& a, const Var& b);  // n x d, m x d -> n x m
Var normalize_rows(const Var& x, double min_norm = 1e-12);

// Multi-head scaled dot-product attention core: softmax(QK^T / sqrt(d_h)) V per
// head. q, k, v are n x d; projections live outside.
Var attention(const Var& q, const Var& k, const Var& v, std::size_t heads, const Segments& segments = {});

// -- gradient routing --
Var stop_gradient(const Var& x);
// Forward value is q; backward sends the upstream gradient to z unchanged and
// nothing to q.
Var straight_through(const Var& z, const Var& q);

// Mean softmax cross-entropy of logits rows against integer targets.
Var cross_entropy(const Var& logits, std::span<const std::size_t> targets);

}  // namespace svq
