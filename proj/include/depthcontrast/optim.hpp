#pragma once

#include <map>
#include <string>

#include "depthcontrast/model.hpp"

namespace dc {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename Scalar>
struct AdamState {
  AdamConfig config;
  long step = 0;
  std::map<std::string, Tensor<Scalar>> first_moment;
  std::map<std::string, Tensor<Scalar>> second_moment;
};

/// One bias-corrected Adam update of every parameter named in `grads`:
///   m <- b1 m + (1 - b1) g,  v <- b2 v + (1 - b2) g^2,
///   p <- p - lr * m_hat / (sqrt(v_hat) + eps).
/// A non-finite gradient rejects the whole step (NumericalError) before any
/// parameter or moment is touched.
template <typename Scalar>
void adam_step(ModelParams<Scalar>& params, const std::map<std::string, Tensor<Scalar>>& grads,
               AdamState<Scalar>& state, double lr);

}  // namespace dc
