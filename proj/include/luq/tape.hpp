#pragma once

#include <functional>
#include <vector>

#include "luq/tensor.hpp"

namespace luq {

struct NormalizedAdjacency;

// Handle to a value recorded on a Tape.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Reverse-mode autodiff over batched dense tensors.
//
// Every op appends one node whose inputs were recorded earlier, so the node
// list is already in topological order and backward() is one reverse sweep.
// Gradients accumulate in a fixed serial order, which keeps repeated passes
// bit-identical.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var variable(Tensor value);

  const Tensor& value(Var v) const { return nodes_[idx(v)].value; }
  // Zero tensor of the right shape when no gradient reached v.
  Tensor grad(Var v) const;
  bool requires_grad(Var v) const { return nodes_[idx(v)].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  // loss must hold exactly one element.
  void backward(Var loss);

  // Elementwise; shapes must match exactly.
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, float s);
  Var add_scalar(Var a, float s);
  Var relu(Var a);
  Var exp(Var a);
  // Zero gradient where the input lies outside [lo, hi].
  Var clamp(Var a, float lo, float hi);

  Var sum(Var a);
  Var mean(Var a);

  Var reshape(Var a, Shape shape);
  // Concatenate along the last axis; leading extents must agree.
  Var concat(Var a, Var b);

  // [m x k] * [k x n].
  Var matmul(Var a, Var b);
  // x [N x in] * w [in x out] + bias [out].
  Var affine(Var x, Var w, Var bias);
  // x [N x C x H x W] or [C x H x W]; kernel [Co x Ci x k x k], k odd;
  // bias [Co] or invalid Var for none.
  Var conv2d(Var x, Var kernel, Var bias, int stride);
  // fmap [N|1 x C x H x W], coords [N x M x 2] in [0,1] (clamped) -> [N x M x C].
  Var bilinear_sample(Var fmap, Var coords);
  // h [N x M x Fin] or [M x Fin] -> adj * h * w + bias.
  Var graph_conv(Var h, const NormalizedAdjacency& adj, Var w, Var bias);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool has_grad = false;
    std::function<void(Tape&, int)> backward;
  };

  std::size_t idx(Var v) const;
  Var push(Tensor value, bool requires_grad, std::function<void(Tape&, int)> backward);
  bool needs(Var v) const { return nodes_[idx(v)].requires_grad; }
  // Gradient buffer for v, zero-initialised on first use.
  Tensor& grad_buffer(Var v);
  const Tensor& out_grad(int self) const { return nodes_[static_cast<std::size_t>(self)].grad; }

  std::vector<Node> nodes_;
};

}  // namespace luq
