#include "depthcontrast/tape.hpp"

#include <optional>

namespace dc {

template <typename Scalar>
std::size_t Tape<Scalar>::checked(Var<Scalar> v) const {
  if (v.tape != this || v.id < 0 || std::size_t(v.id) >= nodes_.size())
    throw ValueError("tensor id " + std::to_string(v.id) + " is not on this tape");
  return std::size_t(v.id);
}

template <typename Scalar>
Var<Scalar> Tape<Scalar>::leaf(Tensor<Scalar> value, bool requires_grad) {
  if (!value.all_finite()) throw NumericalError("leaf tensor contains NaN/Inf");
  Node node;
  node.requires_grad = requires_grad && recording_;
  node.is_leaf = true;
  if (node.requires_grad) node.grad = Tensor<Scalar>::zeros(value.shape());
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return {this, int(nodes_.size() - 1)};
}

template <typename Scalar>
Var<Scalar> Tape<Scalar>::apply(Primitive kind, std::span<const Var<Scalar>> inputs, const Attrs<Scalar>& attrs) {
  std::vector<const Tensor<Scalar>*> values;
  std::vector<int> ids;
  bool needs_grad = false;
  for (const auto& v : inputs) {
    const std::size_t i = checked(v);
    values.push_back(&nodes_[i].value);
    ids.push_back(int(i));
    needs_grad = needs_grad || nodes_[i].requires_grad;
  }
  needs_grad = needs_grad && recording_;
  KernelResult<Scalar> result = apply_primitive<Scalar>(kind, values, attrs, needs_grad, &relu_signs_);
  if (!result.output.all_finite())
    throw NumericalError(std::string(primitive_name(kind)) + " produced NaN/Inf");

  Node node;
  node.value = std::move(result.output);
  node.requires_grad = needs_grad;
  nodes_.push_back(std::move(node));
  const int out = int(nodes_.size() - 1);
  if (recording_) records_.push_back({kind, std::move(ids), out, std::move(result.backward)});
  return {this, out};
}

template <typename Scalar>
GradientMap<Scalar> Tape<Scalar>::backward(Var<Scalar> loss) {
  const std::size_t root = checked(loss);
  if (nodes_[root].value.size() != 1)
    throw ShapeError("backward: loss must be scalar, got shape " + shape_string(nodes_[root].value.shape()));

  std::vector<std::optional<Tensor<Scalar>>> grads(nodes_.size());
  if (nodes_[root].requires_grad) grads[root] = Tensor<Scalar>::ones(nodes_[root].value.shape());

  for (auto rec = records_.rbegin(); rec != records_.rend(); ++rec) {
    if (!grads[rec->output] || !rec->backward) continue;
    const bool faulty = rec->kind == fault_kind_ && fault_factor_ != 1.0;
    std::vector<Tensor<Scalar>> scratch;
    if (faulty) scratch.reserve(rec->inputs.size());
    std::vector<Tensor<Scalar>*> gin(rec->inputs.size(), nullptr);
    for (std::size_t k = 0; k < rec->inputs.size(); ++k) {
      const int in = rec->inputs[k];
      if (!nodes_[in].requires_grad) continue;
      if (faulty) {
        scratch.push_back(Tensor<Scalar>::zeros(nodes_[in].value.shape()));
        gin[k] = &scratch.back();
      } else {
        if (!grads[in]) grads[in] = Tensor<Scalar>::zeros(nodes_[in].value.shape());
        gin[k] = &*grads[in];
      }
    }
    rec->backward(*grads[rec->output], gin);
    if (faulty) {
      for (std::size_t k = 0; k < rec->inputs.size(); ++k) {
        if (!gin[k]) continue;
        const int in = rec->inputs[k];
        if (!grads[in]) grads[in] = Tensor<Scalar>::zeros(nodes_[in].value.shape());
        grads[in]->values() += gin[k]->values() * Scalar(fault_factor_);
      }
    }
  }

  GradientMap<Scalar> out;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    Node& n = nodes_[i];
    if (!n.is_leaf || !n.requires_grad) continue;
    if (grads[i]) n.grad.values() += grads[i]->values();
    if (!n.grad.all_finite()) throw NumericalError("backward produced NaN/Inf gradient for leaf " + std::to_string(i));
    out.emplace(int(i), n.grad);
  }
  return out;
}

template <typename Scalar>
void Tape<Scalar>::zero_grad() {
  for (Node& n : nodes_)
    if (n.is_leaf && n.requires_grad) n.grad.values().setZero();
}

template <typename Scalar>
const Tensor<Scalar>& Tape<Scalar>::grad(Var<Scalar> v) const {
  const Node& n = nodes_.at(checked(v));
  if (!n.is_leaf || !n.requires_grad) throw ValueError("grad: tensor is not a requires_grad leaf");
  return n.grad;
}

template class Tape<float>;
template class Tape<double>;

}  // namespace dc
