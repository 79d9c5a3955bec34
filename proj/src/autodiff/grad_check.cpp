#include <algorithm>
#include <cmath>

#include "regopt/autodiff.hpp"
#include "regopt/errors.hpp"
#include "regopt/rng.hpp"

namespace regopt::ad {
namespace {

struct Eval {
  double value;
  Gradients grads;
  std::vector<Var> vars;
};

// Scalarizes fn's output with fixed weights drawn once per output shape.
Eval evaluate(const OpFn& fn, const std::vector<Tensor>& inputs, bool with_grad) {
  Tape tape;
  std::vector<Var> vars;
  vars.reserve(inputs.size());
  for (const Tensor& in : inputs) vars.push_back(tape.variable(in));
  Var out = fn(tape, vars);
  if (tape.value(out).size() != 1) {
    const Tensor& ov = tape.value(out);
    Rng rng(0x5EEDULL, "grad_check.projection");
    Tensor weights(ov.shape());
    for (std::size_t i = 0; i < weights.size(); ++i) weights[i] = rng.uniform(0.5, 1.5);
    out = sum(tape, mul(tape, out, tape.constant(std::move(weights))));
  }
  Eval e{tape.value(out).item(), {}, vars};
  if (with_grad) e.grads = tape.backward(out);
  return e;
}

}  // namespace

double grad_check(const OpFn& fn, const std::vector<Tensor>& inputs, double eps) {
  const Eval base = evaluate(fn, inputs, true);
  double worst = 0.0;
  std::vector<Tensor> probe = inputs;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Tensor analytic = base.grads[base.vars[k]];
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const double x0 = inputs[k][i];
      probe[k][i] = x0 + eps;
      const double fp = evaluate(fn, probe, false).value;
      probe[k][i] = x0 - eps;
      const double fm = evaluate(fn, probe, false).value;
      probe[k][i] = x0;
      const double fd = (fp - fm) / (2.0 * eps);
      worst = std::max(worst, std::abs(analytic[i] - fd) / std::max(1.0, std::abs(fd)));
    }
  }
  return worst;
}

double grad_check(OpKind kind, const std::vector<Tensor>& inputs, double eps) {
  auto arity = [&](std::size_t n) {
    if (inputs.size() != n)
      fail(ErrorKind::ShapeMismatch, std::string(to_string(kind)) + " expects " + std::to_string(n) + " inputs");
  };
  OpFn fn;
  switch (kind) {
    case OpKind::Add: arity(2); fn = [](Tape& t, std::span<const Var> v) { return add(t, v[0], v[1]); }; break;
    case OpKind::Sub: arity(2); fn = [](Tape& t, std::span<const Var> v) { return sub(t, v[0], v[1]); }; break;
    case OpKind::Mul: arity(2); fn = [](Tape& t, std::span<const Var> v) { return mul(t, v[0], v[1]); }; break;
    case OpKind::ScalarMul: arity(1); fn = [](Tape& t, std::span<const Var> v) { return scale(t, v[0], 1.7); }; break;
    case OpKind::Matmul: arity(2); fn = [](Tape& t, std::span<const Var> v) { return matmul(t, v[0], v[1]); }; break;
    case OpKind::Conv2d:
      arity(3);
      fn = [](Tape& t, std::span<const Var> v) { return conv2d(t, v[0], v[1], v[2], 1, 1); };
      break;
    case OpKind::Dense: arity(3); fn = [](Tape& t, std::span<const Var> v) { return dense(t, v[0], v[1], v[2]); }; break;
    case OpKind::Relu: arity(1); fn = [](Tape& t, std::span<const Var> v) { return relu(t, v[0]); }; break;
    case OpKind::LeakyRelu: arity(1); fn = [](Tape& t, std::span<const Var> v) { return leaky_relu(t, v[0]); }; break;
    case OpKind::Sigmoid: arity(1); fn = [](Tape& t, std::span<const Var> v) { return sigmoid(t, v[0]); }; break;
    case OpKind::Square: arity(1); fn = [](Tape& t, std::span<const Var> v) { return square(t, v[0]); }; break;
    case OpKind::Mean: arity(1); fn = [](Tape& t, std::span<const Var> v) { return mean(t, v[0]); }; break;
    case OpKind::Sum: arity(1); fn = [](Tape& t, std::span<const Var> v) { return sum(t, v[0]); }; break;
    case OpKind::L2SquaredDistance:
      arity(2);
      fn = [](Tape& t, std::span<const Var> v) { return l2_squared_distance(t, v[0], v[1]); };
      break;
    case OpKind::MaxPool2: arity(1); fn = [](Tape& t, std::span<const Var> v) { return max_pool2(t, v[0]); }; break;
    case OpKind::BilinearSample:
      arity(2);
      fn = [](Tape& t, std::span<const Var> v) { return bilinear_sample(t, v[0], v[1]); };
      break;
    case OpKind::SolveLinear8:
      arity(2);
      fn = [](Tape& t, std::span<const Var> v) { return solve_linear8(t, v[0], v[1]); };
      break;
    case OpKind::ConcatChannels:
      arity(2);
      fn = [](Tape& t, std::span<const Var> v) { return concat_channels(t, v[0], v[1]); };
      break;
    case OpKind::Reshape:
      arity(1);
      fn = [](Tape& t, std::span<const Var> v) {
        return reshape(t, v[0], {static_cast<int>(t.value(v[0]).size())});
      };
      break;
    case OpKind::SpectralNorm:
      arity(1);
      fn = [](Tape& t, std::span<const Var> v) {
        const Tensor& w = t.value(v[0]);
        const int rows = w.dim(0);
        const int cols = static_cast<int>(w.size()) / rows;
        Tensor u({rows}, 1.0 / std::sqrt(static_cast<double>(rows)));
        Tensor vv({cols}, 1.0 / std::sqrt(static_cast<double>(cols)));
        return spectral_norm(t, v[0], u, vv);
      };
      break;
    case OpKind::Leaf:
    case OpKind::Custom:
      fail(ErrorKind::InvalidSpec, "grad_check needs a concrete op-kind");
  }
  return grad_check(fn, inputs, eps);
}

}  // namespace regopt::ad
