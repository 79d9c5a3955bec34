#include <algorithm>
#include <cmath>
#include <sstream>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "regopt/autodiff.hpp"
#include "regopt/errors.hpp"

namespace regopt::ad {
namespace {

// Tape buffers are large and short-lived; returning them to the OS on every
// free makes each step pay for fresh page faults.
[[maybe_unused]] const bool kAllocatorTuned = [] {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
  return true;
}();

}  // namespace

std::size_t num_elements(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d <= 0) fail(ErrorKind::ShapeMismatch, "non-positive dimension in " + shape_string(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(num_elements(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (num_elements(shape_) != data_.size())
    fail(ErrorKind::ShapeMismatch, "shape " + shape_string(shape_) + " does not hold " +
                                       std::to_string(data_.size()) + " values");
}

Tensor Tensor::scalar(double value) { return Tensor({1}, std::vector<double>{value}); }

Tensor Tensor::vector(std::initializer_list<double> values) { return vector(std::vector<double>(values)); }

Tensor Tensor::vector(std::vector<double> values) {
  const int n = static_cast<int>(values.size());
  return Tensor({n}, std::move(values));
}

double Tensor::item() const {
  if (data_.size() != 1) fail(ErrorKind::NonScalarOutput, "item() on tensor " + shape_string(shape_));
  return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const { return Tensor(std::move(shape), data_); }

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

void Tensor::accumulate(const Tensor& other) {
  if (other.size() != size())
    fail(ErrorKind::ShapeMismatch, "accumulate " + shape_string(other.shape()) + " into " + shape_string(shape_));
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
}

std::string_view to_string(OpKind kind) {
  switch (kind) {
    case OpKind::Leaf: return "leaf";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::ScalarMul: return "scalar-mul";
    case OpKind::Matmul: return "matmul";
    case OpKind::Conv2d: return "conv2d";
    case OpKind::Dense: return "dense";
    case OpKind::Relu: return "relu";
    case OpKind::LeakyRelu: return "leaky-relu";
    case OpKind::Sigmoid: return "sigmoid";
    case OpKind::Square: return "square";
    case OpKind::Mean: return "mean";
    case OpKind::Sum: return "sum";
    case OpKind::L2SquaredDistance: return "l2-squared-distance";
    case OpKind::MaxPool2: return "max-pool";
    case OpKind::BilinearSample: return "bilinear-sample";
    case OpKind::SolveLinear8: return "solve-linear-8x8";
    case OpKind::ConcatChannels: return "concat-channels";
    case OpKind::Reshape: return "reshape";
    case OpKind::SpectralNorm: return "spectral-norm";
    case OpKind::Custom: return "custom";
  }
  return "unknown";
}

Gradients::Gradients(std::vector<Tensor> grads, std::vector<Shape> shapes)
    : grads_(std::move(grads)), shapes_(std::move(shapes)) {}

bool Gradients::has(Var v) const {
  return v.valid() && static_cast<std::size_t>(v.id) < grads_.size() && !grads_[v.id].empty();
}

Tensor Gradients::operator[](Var v) const {
  if (!v.valid() || static_cast<std::size_t>(v.id) >= shapes_.size())
    fail(ErrorKind::ShapeMismatch, "gradient requested for a variable not on this tape");
  if (!grads_[v.id].empty()) return grads_[v.id];
  return Tensor(shapes_[v.id], 0.0);
}

Var Tape::variable(Tensor value) {
  nodes_.push_back(Node{OpKind::Leaf, {}, std::move(value), true, nullptr});
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{OpKind::Leaf, {}, std::move(value), false, nullptr});
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::record(OpKind kind, std::vector<Var> inputs, Tensor value, BackwardFn backward) {
  bool rg = false;
  for (Var in : inputs) {
    if (!in.valid() || static_cast<std::size_t>(in.id) >= nodes_.size())
      fail(ErrorKind::ShapeMismatch, "op input does not reference an earlier node");
    rg = rg || nodes_[in.id].requires_grad;
  }
  nodes_.push_back(Node{kind, std::move(inputs), std::move(value), rg && backward != nullptr, std::move(backward)});
  return Var{static_cast<int>(nodes_.size()) - 1};
}

const Tape::Node& Tape::node(Var v) const {
  if (!v.valid() || static_cast<std::size_t>(v.id) >= nodes_.size())
    fail(ErrorKind::ShapeMismatch, "variable not on this tape");
  return nodes_[v.id];
}

const Tensor& Tape::value(Var v) const { return node(v).value; }
const std::vector<Var>& Tape::inputs(Var v) const { return node(v).inputs; }
bool Tape::requires_grad(Var v) const { return node(v).requires_grad; }
OpKind Tape::kind(Var v) const { return node(v).kind; }

Gradients Tape::backward(Var output) const {
  const Node& out = node(output);
  if (out.value.size() != 1)
    fail(ErrorKind::NonScalarOutput, "backward from tensor " + shape_string(out.value.shape()));

  std::vector<Tensor> grads(nodes_.size());
  std::vector<Shape> shapes(nodes_.size());
  for (std::size_t i = 0; i < nodes_.size(); ++i) shapes[i] = nodes_[i].value.shape();
  if (!out.requires_grad) return Gradients(std::move(grads), std::move(shapes));

  grads[output.id] = Tensor(out.value.shape(), 1.0);
  std::vector<Tensor*> gin;
  for (int i = output.id; i >= 0; --i) {
    const Node& n = nodes_[i];
    if (!n.requires_grad || grads[i].empty() || !n.backward) continue;
    gin.assign(n.inputs.size(), nullptr);
    for (std::size_t k = 0; k < n.inputs.size(); ++k) {
      const int id = n.inputs[k].id;
      if (!nodes_[id].requires_grad) continue;
      if (grads[id].empty()) grads[id] = Tensor(nodes_[id].value.shape(), 0.0);
      gin[k] = &grads[id];
    }
    n.backward(*this, grads[i], gin);
  }
  return Gradients(std::move(grads), std::move(shapes));
}

}  // namespace regopt::ad
