#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "depthcontrast/tape.hpp"

namespace dc {

/// Builds a scalar loss on `tape` from the registered parameter leaves. Must be
/// a pure function of the parameter values (seed any dropout stream inside).
template <typename Scalar>
using LossBuilder = std::function<Var<Scalar>(Tape<Scalar>& tape, std::span<const Var<Scalar>> params)>;

template <typename Scalar>
using NamedTensors = std::vector<std::pair<std::string, Tensor<Scalar>>>;

struct ParamCheck {
  std::string name;
  double max_rel_error = 0.0;
  double mean_rel_error = 0.0;
  Index worst_index = -1;
  Index checked = 0;
  Index skipped = 0;  // perturbation crossed a relu kink
  bool passed = true;
};

struct GradCheckReport {
  std::vector<ParamCheck> params;
  double tol = 0.0;
  bool passed = true;

  const ParamCheck* worst() const;
  Index total_skipped() const;
};

/// Relative error |a - n| / max(|a|, |n|, floor). The floor keeps
/// near-zero gradients from amplifying round-off of the central difference.
double relative_error(double analytic, double numeric, double floor);

/// Compares reverse-mode gradients with central differences
/// (f(p + eps) - f(p - eps)) / (2 eps), element by element.
template <typename Scalar>
GradCheckReport grad_check(const LossBuilder<Scalar>& fn, const NamedTensors<Scalar>& params, double eps, double tol,
                           double floor = 1e-6);

}  // namespace dc
