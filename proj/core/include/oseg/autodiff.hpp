#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "oseg/tensor.hpp"

namespace oseg {

// Reverse-mode graph. Ops evaluate eagerly and record a backprop closure;
// backward() replays closures in reverse topological order, visiting each
// node exactly once. Forward evaluation never mutates inputs, so identical
// inputs give bit-identical outputs.
class Node {
 public:
  Tensor value;
  Tensor grad;  // allocated iff needs_grad
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backprop;  // accumulates into inputs' grads
  const char* op = "leaf";
  bool needs_grad = false;
  bool param_leaf = false;  // grads persist across backward() calls
};

using Var = std::shared_ptr<Node>;

/// Leaf that gradients do not flow into (images, targets).
Var constant(Tensor v);

/// Leaf with gradient tracking (used by finite_diff_check and tests).
Var make_input(Tensor v);

/// Trainable tensor; grad has the value's shape and is zero until backward runs.
class Parameter {
 public:
  Parameter() = default;
  explicit Parameter(Tensor init);

  const Tensor& value() const { return node_->value; }
  Tensor& value() { return node_->value; }
  const Tensor& grad() const { return node_->grad; }
  Tensor& grad() { return node_->grad; }
  void zero_grad() { node_->grad.fill(0.0); }
  const Var& var() const { return node_; }
  explicit operator bool() const { return node_ != nullptr; }

 private:
  Var node_;
};

enum class PoolMode { avg, max };

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
/// Elementwise a*m + c with constant coefficients.
Var affine(const Var& a, Tensor m, Tensor c);
Var relu(const Var& a);
Var sigmoid(const Var& a);
Var sum(const Var& a);
Var mean(const Var& a);

/// w:[Out,In] times x:[In] -> [Out]; no bias.
Var dense(const Var& w, const Var& x);

/// Cross-correlation, zero padding. x:[Cin,H,W] w:[Cout,Cin,k,k] b:[Cout] or null.
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad);

Var global_pool(const Var& x, PoolMode mode);   // [C,H,W] -> [C]
Var channel_pool(const Var& x, PoolMode mode);  // [C,H,W] -> [1,H,W]

Var concat_channels(const Var& a, const Var& b);
Var mul_channel(const Var& x, const Var& s);  // [C,H,W] * [C], broadcast
Var mul_spatial(const Var& x, const Var& m);  // [C,H,W] * [1,H,W], broadcast
Var slice_channels(const Var& x, int c0, int c1);
/// Rectangular spatial window: x[:, r0..r1, c0..c1] -> [C, r1-r0, c1-c0].
Var crop_spatial(const Var& x, int r0, int r1, int c0, int c1);
/// Gathers x[c0..c1, i, j] into a vector [c1-c0].
Var cell_vector(const Var& x, int i, int j, int c0, int c1);

/// Numerically stable elementwise BCE between logits and targets in [0,1],
/// reduced by mean or sum.
Var bce_with_logits_mean(const Var& logits, Tensor targets);
Var bce_with_logits_sum(const Var& logits, Tensor targets);
/// Softmax cross-entropy of a logit vector against one label index.
Var softmax_cross_entropy(const Var& logits, int label);
/// Sum of squared differences against a constant target.
Var squared_error_sum(const Var& x, Tensor target);

/// MLP of the channel-attention block: w2 * relu(w1 * x), no biases.
Var mlp_forward(const Var& x, const Parameter& w1, const Parameter& w2);

/// Accumulates d(loss)/d(leaf) into every grad-tracked leaf. Loss must be scalar.
void backward(const Var& loss);

// Tensor-level wrappers for the plain forward operators.
Tensor conv2d_forward(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad);
Tensor global_pool_forward(const Tensor& x, PoolMode mode);
Tensor channel_pool_forward(const Tensor& x, PoolMode mode);
Tensor mlp_forward_values(const Tensor& x, const Tensor& w1, const Tensor& w2);

}  // namespace oseg
