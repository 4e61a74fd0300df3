#pragma once

// Reverse-mode differentiation over rank-4 tensors.
//
// A Var is a shared handle to a graph node. Ops build the graph while
// gradients are enabled and at least one input requires a gradient; under a
// NoGradGuard they only compute values. Gradients accumulate additively across
// fan-out and must be cleared explicitly between steps.

#include <array>
#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "ugdd/tensor.hpp"

namespace ugdd::ag {

struct Node {
  Tensor value;
  Tensor grad;  // allocated on first use, zero-initialized
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  Tensor& ensure_grad();
  bool has_grad() const { return !grad.empty() || value.empty(); }
};

using NodePtr = std::shared_ptr<Node>;

class Var {
 public:
  Var() = default;
  explicit Var(NodePtr node) : node_(std::move(node)) {}

  const Tensor& value() const& { return node_->value; }
  // Copy out of temporaries: the node may die with the handle.
  Tensor value() && { return node_->value; }
  /// d(loss)/d(value) after backward(); zeros when nothing reached this node.
  const Tensor& grad() const { return node_->ensure_grad(); }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_->requires_grad; }
  bool defined() const { return static_cast<bool>(node_); }
  const NodePtr& node() const { return node_; }

  void zero_grad();
  /// Overwrite a leaf's value in place (optimizer updates).
  Tensor& mutable_value() { return node_->value; }

 private:
  NodePtr node_;
};

Var constant(Tensor t);
Var parameter(Tensor t);
/// Cut the graph: same value, no history, no gradient.
Var detach(const Var& v);

bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// ---- elementwise -----------------------------------------------------------

enum class Elementwise { Add, Sub, Mul, Div, Exp, Log, Relu, MaxScalar };

/// Generic entry point. Binary tags need `b`; MaxScalar uses `scalar`.
/// Binary operands broadcast numpy-style: each axis must match or be 1.
Var elementwise(Elementwise op, const Var& a, const Var* b = nullptr, double scalar = 0.0);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var exp(const Var& a);
/// Natural log. With stabilizer == 0 any non-positive entry is a DomainError;
/// otherwise computes log(a + stabilizer).
Var log(const Var& a, double stabilizer = 0.0);
Var relu(const Var& a);
/// max(a, s); the subgradient at a == s is 0.
Var max_scalar(const Var& a, double s);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
/// 1 - a
Var one_minus(const Var& a);
/// Clamp into [lo, hi]; gradient passes where lo <= a <= hi.
Var clamp(const Var& a, double lo, double hi);

// ---- reductions and layout -------------------------------------------------

Var sum(const Var& a);
Var mean(const Var& a);
/// Sum over the axes flagged in `axes`, keeping them as singleton dims.
Var sum_axes(const Var& a, std::array<bool, 4> axes);
Var reshape(const Var& a, Shape s);
/// out.dim[i] = in.dim[perm[i]]
Var permute(const Var& a, std::array<std::size_t, 4> perm);
/// Swap the last two axes.
Var transpose_last(const Var& a);
Var narrow(const Var& a, std::size_t axis, std::size_t start, std::size_t length);
Var concat(std::span<const Var> parts, std::size_t axis);
Var flip(const Var& a, std::size_t axis);

// ---- structured ------------------------------------------------------------

/// Batched matmul over the last two axes; leading axes broadcast.
Var matmul(const Var& a, const Var& b);

struct ConvGeometry {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

/// weight (Cout, Cin, kh, kw); bias (1, Cout, 1, 1) or undefined.
Var conv2d(const Var& x, const Var& weight, const Var& bias, ConvGeometry g = {});
/// weight (Cin, Cout, kh, kw); output size (H-1)*stride - 2*padding + k.
Var conv_transpose2d(const Var& x, const Var& weight, const Var& bias, ConvGeometry g = {1, 0});
/// Non-overlapping k x k max pooling; ties resolve to the first element in raster order.
Var maxpool2d(const Var& x, std::size_t k = 2);
/// Max-subtracted softmax along `axis`.
Var softmax(const Var& x, std::size_t axis);

/// Resample `source` at p + offset(p) with the bilinear kernel. offsets is
/// (n, 2, h, w) holding (dy, dx) in pixels; samples outside the grid read 0.
Var bilinear_sample(const Var& source, const Var& offsets);

/// (1,1,R,C) -> (1,1,N,C) picking rows `index`.
Var gather_rows(const Var& x, std::span<const std::size_t> index);
/// (1,1,N,C) -> (1,1,rows,C); unlisted rows are zero, duplicate targets average.
Var scatter_rows(const Var& x, std::span<const std::size_t> index, std::size_t rows);

/// Expand a (1,1,2r+1,2r+1) table of relative-offset biases to the
/// (1,1,h*w,h*w) matrix over a raster-flattened h x w grid. Pairs further
/// apart than r along either axis get 0.
Var relative_position_bias(const Var& table, std::size_t h, std::size_t w);

void backward(const Var& loss);

/// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h for every coordinate.
Tensor finite_difference_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x,
                                  double h = 1e-4);

}  // namespace ugdd::ag
