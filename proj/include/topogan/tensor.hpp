#pragma once

// Minimal define-by-run reverse-mode automatic differentiation over dense
// row-major float64 tensors.
//
// Every op returns a new Tensor. When any input requires a gradient (and no
// NoGradGuard is active) the result records its inputs and a backward
// closure. Tensor::backward() on a scalar walks the recorded graph in reverse
// topological order. Gradients of leaf tensors accumulate across calls until
// zero_grad(); interior gradients are reset on every backward pass.

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace topogan::ad {

using Shape = std::vector<int>;

std::size_t numel_of(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {
struct Node;
}

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  int dim(int axis) const;
  int ndim() const;
  std::size_t numel() const;

  std::span<const double> data() const;
  /// Writable view of the values; intended for leaves (parameter updates,
  /// finite-difference probes). Mutating an interior value does not re-run
  /// the graph.
  std::span<double> mutable_data();
  /// Empty until a backward pass reaches this tensor.
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  double item() const;

  bool requires_grad() const;
  bool is_leaf() const;
  void zero_grad();

  /// Backpropagates d(this)/d(leaf) into every reachable leaf that requires a
  /// gradient. Throws ContractError unless this tensor holds one element.
  void backward() const;

  /// Copy of the values as a fresh leaf without gradient tracking.
  Tensor detach() const;

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;

  friend struct OpBuilder;
};

/// Disables graph recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_mode_enabled();

// Elementwise; operands must have identical shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& x, double c);
Tensor scale(const Tensor& x, double c);
/// 1 - x
Tensor one_minus(const Tensor& x);

Tensor leaky_relu(const Tensor& x, double slope = 0.2);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor exp(const Tensor& x);
/// log(max(x, floor)); the gradient is zero where the clamp is active.
Tensor log_clamped(const Tensor& x, double floor = 1e-12);
/// Clamps into [lo, hi]; the gradient passes only strictly inside.
Tensor clamp(const Tensor& x, double lo, double hi);

/// (m x k) @ (k x n)
Tensor matmul(const Tensor& a, const Tensor& b);

/// Adds bias[c] along axis 1 of an N x C or N x C x H x W tensor.
Tensor add_bias(const Tensor& x, const Tensor& bias);

Tensor reshape(const Tensor& x, Shape shape);
Tensor concat(const std::vector<Tensor>& parts, int axis);

/// Scalar mean / sum of all elements.
Tensor mean(const Tensor& x);
Tensor sum(const Tensor& x);

/// Cross-correlation. input N x C x H x W, kernel K x C x kh x kw.
/// Output spatial size (H + 2 padding - kh) / stride + 1 must be integral.
Tensor conv2d(const Tensor& input, const Tensor& kernel, int stride, int padding);

/// Gradient of conv2d with respect to its input, used as an upsampler.
/// input N x Cin x H x W, kernel Cin x Cout x kh x kw,
/// output N x Cout x ((H-1) stride - 2 padding + kh) x (...).
Tensor conv_transpose2d(const Tensor& input, const Tensor& kernel, int stride, int padding);

/// Pairwise batch similarity for minibatch discrimination.
/// m is N x B x C; output N x B with
///   out[i][b] = sum_{j != i} exp(-sum_c |m[i][b][c] - m[j][b][c]|).
Tensor minibatch_similarity(const Tensor& m);

}  // namespace topogan::ad
