#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "depthcontrast/random.hpp"
#include "depthcontrast/tensor.hpp"

namespace dc {

enum class Primitive : std::uint8_t {
  leaf,
  matmul,
  conv2d,
  relu,
  dropout,
  batch_norm,
  global_avg_pool,
  add,
  mul,
  scale,
  reshape,
  row_l2_normalize,
  log_softmax,
  reduce_mean,
  reduce_sum,
};

std::string_view primitive_name(Primitive kind);

/// Running statistics owned by a batch-norm layer; updated in training mode.
template <typename Scalar>
struct BatchNormBuffers {
  Tensor<Scalar>* running_mean = nullptr;
  Tensor<Scalar>* running_var = nullptr;
};

/// Attribute bag shared by all primitives; each kind reads only its own fields.
template <typename Scalar>
struct Attrs {
  // matmul
  bool transpose_a = false;
  bool transpose_b = false;
  // conv2d
  int stride = 1;
  int padding = 0;
  // dropout / batch_norm
  bool training = false;
  double rate = 0.0;
  Stream* stream = nullptr;
  double momentum = 0.1;
  double epsilon = 1e-5;
  BatchNormBuffers<Scalar> buffers;
  // scale
  double factor = 1.0;
  // reshape
  Shape shape;
};

template <typename Scalar>
class Tape;

/// Handle to a tensor recorded on a tape.
template <typename Scalar>
struct Var {
  Tape<Scalar>* tape = nullptr;
  int id = -1;

  const Tensor<Scalar>& value() const;
  const Shape& shape() const { return value().shape(); }
};

template <typename Scalar>
using GradientMap = std::unordered_map<int, Tensor<Scalar>>;

/// Records primitive applications and propagates gradients in reverse order.
///
/// Leaves registered with requires_grad keep an accumulator that survives
/// repeated backward() calls until zero_grad(). When recording is disabled the
/// tape still evaluates values but keeps no backward context.
template <typename Scalar>
class Tape {
 public:
  using Backward = std::function<void(const Tensor<Scalar>& grad_out, std::span<Tensor<Scalar>*> grad_in)>;

  struct Record {
    Primitive kind;
    std::vector<int> inputs;
    int output;
    Backward backward;  // empty when no input requires a gradient
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<Scalar> leaf(Tensor<Scalar> value, bool requires_grad = false);
  Var<Scalar> apply(Primitive kind, std::span<const Var<Scalar>> inputs, const Attrs<Scalar>& attrs = {});
  Var<Scalar> apply(Primitive kind, std::initializer_list<Var<Scalar>> inputs, const Attrs<Scalar>& attrs = {}) {
    return apply(kind, std::span<const Var<Scalar>>(inputs.begin(), inputs.size()), attrs);
  }

  /// Accumulates d(loss)/d(leaf) into every requires_grad leaf and returns the
  /// accumulated values keyed by leaf id.
  GradientMap<Scalar> backward(Var<Scalar> loss);
  void zero_grad();

  const Tensor<Scalar>& value(Var<Scalar> v) const { return nodes_.at(checked(v)).value; }
  const Tensor<Scalar>& grad(Var<Scalar> v) const;
  bool requires_grad(Var<Scalar> v) const { return nodes_.at(checked(v)).requires_grad; }

  void set_recording(bool on) { recording_ = on; }
  bool recording() const { return recording_; }

  const std::vector<Record>& records() const { return records_; }
  std::size_t size() const { return nodes_.size(); }

  /// Sign pattern (input > 0) of every relu evaluated on this tape, in order.
  /// grad_check compares patterns to detect kinks crossed by a perturbation.
  const std::vector<std::uint8_t>& relu_signature() const { return relu_signs_; }

  /// Test hook: scales the input gradients produced by one primitive kind.
  void inject_gradient_fault(Primitive kind, double factor) {
    fault_kind_ = kind;
    fault_factor_ = factor;
  }

 private:
  struct Node {
    Tensor<Scalar> value;
    bool requires_grad = false;
    bool is_leaf = false;
    Tensor<Scalar> grad;  // leaf accumulator
  };

  std::size_t checked(Var<Scalar> v) const;

  std::vector<Node> nodes_;
  std::vector<Record> records_;
  std::vector<std::uint8_t> relu_signs_;
  bool recording_ = true;
  Primitive fault_kind_ = Primitive::leaf;
  double fault_factor_ = 1.0;
};

template <typename Scalar>
const Tensor<Scalar>& Var<Scalar>::value() const {
  if (tape == nullptr) throw ValueError("Var is not bound to a tape");
  return tape->value(*this);
}

/// Forward kernel result: output value plus backward closure (may be empty).
template <typename Scalar>
struct KernelResult {
  Tensor<Scalar> output;
  typename Tape<Scalar>::Backward backward;
};

/// Evaluates one primitive on concrete tensors. `want_backward` controls
/// whether a backward closure (and its saved context) is built.
template <typename Scalar>
KernelResult<Scalar> apply_primitive(Primitive kind, std::span<const Tensor<Scalar>* const> inputs,
                                     const Attrs<Scalar>& attrs, bool want_backward,
                                     std::vector<std::uint8_t>* relu_signs = nullptr);

// Expression-style wrappers over Tape::apply.

template <typename Scalar>
Var<Scalar> matmul(Var<Scalar> a, Var<Scalar> b, bool transpose_a = false, bool transpose_b = false) {
  Attrs<Scalar> at;
  at.transpose_a = transpose_a;
  at.transpose_b = transpose_b;
  return a.tape->apply(Primitive::matmul, {a, b}, at);
}

template <typename Scalar>
Var<Scalar> conv2d(Var<Scalar> x, Var<Scalar> weight, int stride, int padding) {
  Attrs<Scalar> at;
  at.stride = stride;
  at.padding = padding;
  return x.tape->apply(Primitive::conv2d, {x, weight}, at);
}

template <typename Scalar>
Var<Scalar> conv2d(Var<Scalar> x, Var<Scalar> weight, Var<Scalar> bias, int stride, int padding) {
  Attrs<Scalar> at;
  at.stride = stride;
  at.padding = padding;
  return x.tape->apply(Primitive::conv2d, {x, weight, bias}, at);
}

template <typename Scalar>
Var<Scalar> relu(Var<Scalar> x) {
  return x.tape->apply(Primitive::relu, {x});
}

template <typename Scalar>
Var<Scalar> dropout(Var<Scalar> x, double rate, bool training, Stream* stream) {
  Attrs<Scalar> at;
  at.rate = rate;
  at.training = training;
  at.stream = stream;
  return x.tape->apply(Primitive::dropout, {x}, at);
}

template <typename Scalar>
Var<Scalar> batch_norm(Var<Scalar> x, Var<Scalar> gamma, Var<Scalar> beta, bool training,
                       BatchNormBuffers<Scalar> buffers, double momentum = 0.1, double epsilon = 1e-5) {
  Attrs<Scalar> at;
  at.training = training;
  at.buffers = buffers;
  at.momentum = momentum;
  at.epsilon = epsilon;
  return x.tape->apply(Primitive::batch_norm, {x, gamma, beta}, at);
}

template <typename Scalar>
Var<Scalar> global_avg_pool(Var<Scalar> x) {
  return x.tape->apply(Primitive::global_avg_pool, {x});
}

template <typename Scalar>
Var<Scalar> add(Var<Scalar> a, Var<Scalar> b) {
  return a.tape->apply(Primitive::add, {a, b});
}

template <typename Scalar>
Var<Scalar> mul(Var<Scalar> a, Var<Scalar> b) {
  return a.tape->apply(Primitive::mul, {a, b});
}

template <typename Scalar>
Var<Scalar> scale(Var<Scalar> x, double factor) {
  Attrs<Scalar> at;
  at.factor = factor;
  return x.tape->apply(Primitive::scale, {x}, at);
}

template <typename Scalar>
Var<Scalar> reshape(Var<Scalar> x, Shape shape) {
  Attrs<Scalar> at;
  at.shape = std::move(shape);
  return x.tape->apply(Primitive::reshape, {x}, at);
}

/// Collapses all but the leading axis.
template <typename Scalar>
Var<Scalar> flatten(Var<Scalar> x) {
  const Index n = x.shape().empty() ? 1 : x.shape()[0];
  return reshape(x, {n, x.value().size() / n});
}

template <typename Scalar>
Var<Scalar> row_l2_normalize(Var<Scalar> x) {
  return x.tape->apply(Primitive::row_l2_normalize, {x});
}

template <typename Scalar>
Var<Scalar> log_softmax(Var<Scalar> x) {
  return x.tape->apply(Primitive::log_softmax, {x});
}

template <typename Scalar>
Var<Scalar> reduce_sum(Var<Scalar> x) {
  return x.tape->apply(Primitive::reduce_sum, {x});
}

template <typename Scalar>
Var<Scalar> reduce_mean(Var<Scalar> x) {
  return x.tape->apply(Primitive::reduce_mean, {x});
}

template <typename Scalar>
Var<Scalar> operator+(Var<Scalar> a, Var<Scalar> b) { return add(a, b); }
template <typename Scalar>
Var<Scalar> operator*(Var<Scalar> a, Var<Scalar> b) { return mul(a, b); }
template <typename Scalar>
Var<Scalar> operator*(double f, Var<Scalar> x) { return scale(x, f); }

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace dc
