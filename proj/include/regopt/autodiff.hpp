#pragma once

// Reverse-mode automatic differentiation over dense 64-bit tensors.
//
// A Tape records operations in execution order. References returned by
// value() stay valid for the life of the tape. Every node stores its
// forward value and a backward closure; Tape::backward seeds the scalar
// output with 1 and visits nodes once, in reverse insertion order,
// accumulating gradients by summation at fan-out.
//
// Forward values are bitwise deterministic: every reduction runs in a fixed
// left-to-right order and no floating-point contraction is used, so a
// batched evaluation produces exactly the per-sample values of single runs.

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace regopt::ad {

using Shape = std::vector<int>;

std::size_t num_elements(const Shape& shape);
std::string shape_string(const Shape& shape);

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double value);
  static Tensor vector(std::initializer_list<double> values);
  static Tensor vector(std::vector<double> values);

  const Shape& shape() const noexcept { return shape_; }
  int rank() const noexcept { return static_cast<int>(shape_.size()); }
  int dim(int axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }
  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  std::vector<double>& storage() noexcept { return data_; }
  const std::vector<double>& storage() const noexcept { return data_; }

  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }
  double item() const;

  Tensor reshaped(Shape shape) const;
  void fill(double value);
  /// this += other (same element count).
  void accumulate(const Tensor& other);

 private:
  Shape shape_;
  std::vector<double> data_;
};

enum class OpKind {
  Leaf,
  Add,
  Sub,
  Mul,
  ScalarMul,
  Matmul,
  Conv2d,
  Dense,
  Relu,
  LeakyRelu,
  Sigmoid,
  Square,
  Mean,
  Sum,
  L2SquaredDistance,
  MaxPool2,
  BilinearSample,
  SolveLinear8,
  ConcatChannels,
  Reshape,
  SpectralNorm,
  Custom,
};

std::string_view to_string(OpKind kind);

/// Handle to a node on a particular tape.
struct Var {
  int id = -1;
  bool valid() const noexcept { return id >= 0; }
};

class Tape;

/// grad_in[i] is null when input i does not require a gradient.
using BackwardFn =
    std::function<void(const Tape& tape, const Tensor& grad_out, std::span<Tensor* const> grad_in)>;

class Gradients {
 public:
  Gradients() = default;
  Gradients(std::vector<Tensor> grads, std::vector<Shape> shapes);

  /// Gradient of the output w.r.t. v; zeros when v does not influence it.
  Tensor operator[](Var v) const;
  bool has(Var v) const;

 private:
  std::vector<Tensor> grads_;
  std::vector<Shape> shapes_;
};

class Tape {
 public:
  Var variable(Tensor value);
  Var constant(Tensor value);

  /// Appends a node. Inputs must already be on this tape.
  Var record(OpKind kind, std::vector<Var> inputs, Tensor value, BackwardFn backward);

  const Tensor& value(Var v) const;
  const std::vector<Var>& inputs(Var v) const;
  bool requires_grad(Var v) const;
  OpKind kind(Var v) const;
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Throws NonScalarOutput unless output holds exactly one element.
  Gradients backward(Var output) const;

 private:
  struct Node {
    OpKind kind;
    std::vector<Var> inputs;
    Tensor value;
    bool requires_grad;
    BackwardFn backward;
  };
  const Node& node(Var v) const;

  std::deque<Node> nodes_;  // stable references across record()
};

// ---------------------------------------------------------------------------
// Operations. Shapes are validated; violations throw ShapeMismatch.

/// Elementwise a + b. b may match a's shape or any trailing suffix of it
/// (broadcast over the leading axes).
Var add(Tape& t, Var a, Var b);
Var sub(Tape& t, Var a, Var b);
/// Elementwise product, identical shapes.
Var mul(Tape& t, Var a, Var b);
Var scale(Tape& t, Var a, double s);
/// 2-D matrix product [m,k] x [k,n].
Var matmul(Tape& t, Var a, Var b);
/// x [N,C,H,W], w [Co,C,k,k], bias [Co] (may be invalid Var). Zero padding.
Var conv2d(Tape& t, Var x, Var w, Var bias, int stride, int pad);
/// x [N,I], w [O,I], bias [O] (may be invalid Var).
Var dense(Tape& t, Var x, Var w, Var bias);
/// Gradient at exactly 0 is 0.
Var relu(Tape& t, Var x);
Var leaky_relu(Tape& t, Var x, double slope = 0.01);
Var sigmoid(Tape& t, Var x);
Var square(Tape& t, Var x);
Var mean(Tape& t, Var x);
Var sum(Tape& t, Var x);
/// Scalar sum of squared differences.
Var l2_squared_distance(Tape& t, Var a, Var b);
/// 2x2 max pooling with stride 2 on [N,C,H,W]; ties go to the first element.
Var max_pool2(Tape& t, Var x);
/// img [C,H,W] (shared) or [N,C,H,W]; coords [N,Ho,Wo,2] holding (x, y) in
/// pixel units where integer coordinates are pixel centers. Neighbors outside
/// the image contribute zero. Output [N,C,Ho,Wo].
Var bilinear_sample(Tape& t, Var img, Var coords);
/// Solves A x = b with partial pivoting. A [8,8] or [N,8,8], b [8] or [N,8].
/// Throws DegenerateHomography when a pivot falls below 1e-12.
Var solve_linear8(Tape& t, Var a, Var b);
/// Plain (untaped) solve with the same elimination order; a is row-major 8x8.
void solve8(const double* a, const double* b, double* x);
/// [N,C1,H,W] ++ [N,C2,H,W] -> [N,C1+C2,H,W], first operand first.
Var concat_channels(Tape& t, Var a, Var b);
Var reshape(Tape& t, Var a, Shape shape);
/// w / sigma with sigma = u^T W v, W = w viewed as [rows, rest]; u and v
/// are held fixed (not differentiated), sigma is.
Var spectral_norm(Tape& t, Var w, const Tensor& u, const Tensor& v);

// ---------------------------------------------------------------------------

/// Builds a scalar-or-tensor output from the given input variables.
using OpFn = std::function<Var(Tape&, std::span<const Var>)>;

/// Max over every input entry of |analytic - central difference| /
/// max(1, |central difference|). Non-scalar outputs are reduced with a fixed
/// pseudo-random projection so every output entry is exercised.
double grad_check(const OpFn& fn, const std::vector<Tensor>& inputs, double eps);
/// Same, for a registered op-kind with default attributes
/// (conv2d: stride 1 pad 1, leaky-relu slope 0.01).
double grad_check(OpKind kind, const std::vector<Tensor>& inputs, double eps);

}  // namespace regopt::ad
