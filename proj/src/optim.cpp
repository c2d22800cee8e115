#include "depthcontrast/optim.hpp"

#include <cmath>

namespace dc {

template <typename Scalar>
void adam_step(ModelParams<Scalar>& params, const std::map<std::string, Tensor<Scalar>>& grads,
               AdamState<Scalar>& state, double lr) {
  if (!(lr > 0.0)) throw ValueError("adam_step: learning rate must be > 0");
  for (const auto& [name, g] : grads) {
    if (g.shape() != params.at(name).shape())
      throw ShapeError("adam_step: gradient for " + name + " has shape " + shape_string(g.shape()));
    if (!g.all_finite()) throw NumericalError("adam_step: non-finite gradient for " + name);
  }
  const AdamConfig& c = state.config;
  ++state.step;
  const double correct1 = 1.0 - std::pow(c.beta1, double(state.step));
  const double correct2 = 1.0 - std::pow(c.beta2, double(state.step));
  for (const auto& [name, g] : grads) {
    Tensor<Scalar>& p = params.at(name);
    auto& m = state.first_moment.try_emplace(name, Tensor<Scalar>::zeros(p.shape())).first->second;
    auto& v = state.second_moment.try_emplace(name, Tensor<Scalar>::zeros(p.shape())).first->second;
    m.values() = Scalar(c.beta1) * m.values() + Scalar(1.0 - c.beta1) * g.values();
    v.values() = Scalar(c.beta2) * v.values() + Scalar(1.0 - c.beta2) * g.values().cwiseAbs2();
    auto m_hat = m.values().array() / Scalar(correct1);
    auto v_hat = v.values().array() / Scalar(correct2);
    p.values().array() -= Scalar(lr) * m_hat / (v_hat.sqrt() + Scalar(c.eps));
  }
}

template void adam_step(ModelParams<float>&, const std::map<std::string, Tensor<float>>&, AdamState<float>&, double);
template void adam_step(ModelParams<double>&, const std::map<std::string, Tensor<double>>&, AdamState<double>&,
                        double);

}  // namespace dc
