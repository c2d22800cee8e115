#include "depthcontrast/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace dc {

const ParamCheck* GradCheckReport::worst() const {
  const ParamCheck* w = nullptr;
  for (const auto& p : params)
    if (!w || p.max_rel_error > w->max_rel_error) w = &p;
  return w;
}

Index GradCheckReport::total_skipped() const {
  Index n = 0;
  for (const auto& p : params) n += p.skipped;
  return n;
}

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

namespace {

template <typename Scalar>
struct Evaluation {
  double loss;
  std::vector<std::uint8_t> kinks;
};

template <typename Scalar>
Evaluation<Scalar> evaluate(const LossBuilder<Scalar>& fn, const NamedTensors<Scalar>& params) {
  Tape<Scalar> tape;
  tape.set_recording(false);
  std::vector<Var<Scalar>> vars;
  for (const auto& [name, value] : params) vars.push_back(tape.leaf(value));
  Var<Scalar> loss = fn(tape, vars);
  if (loss.value().size() != 1)
    throw ShapeError("grad_check: function must return a scalar, got " + shape_string(loss.shape()));
  return {double(loss.value().item()), tape.relu_signature()};
}

}  // namespace

template <typename Scalar>
GradCheckReport grad_check(const LossBuilder<Scalar>& fn, const NamedTensors<Scalar>& params, double eps, double tol,
                           double floor) {
  if (!(eps > 0.0)) throw ValueError("grad_check: eps must be > 0");

  Tape<Scalar> tape;
  std::vector<Var<Scalar>> vars;
  for (const auto& [name, value] : params) vars.push_back(tape.leaf(value, true));
  Var<Scalar> loss = fn(tape, vars);
  if (loss.value().size() != 1)
    throw ShapeError("grad_check: function must return a scalar, got " + shape_string(loss.shape()));
  const std::vector<std::uint8_t> base_kinks = tape.relu_signature();
  tape.backward(loss);

  GradCheckReport report;
  report.tol = tol;
  NamedTensors<Scalar> probe = params;
  for (std::size_t p = 0; p < params.size(); ++p) {
    ParamCheck check;
    check.name = params[p].first;
    const Tensor<Scalar>& analytic = tape.grad(vars[p]);
    double sum = 0.0;
    for (Index i = 0; i < params[p].second.size(); ++i) {
      const Scalar original = params[p].second[i];
      probe[p].second[i] = original + Scalar(eps);
      const auto plus = evaluate(fn, probe);
      probe[p].second[i] = original - Scalar(eps);
      const auto minus = evaluate(fn, probe);
      probe[p].second[i] = original;
      if (plus.kinks != base_kinks || minus.kinks != base_kinks) {
        ++check.skipped;
        continue;
      }
      const double numeric = (plus.loss - minus.loss) / (2.0 * eps);
      const double err = relative_error(double(analytic[i]), numeric, floor);
      sum += err;
      ++check.checked;
      if (err > check.max_rel_error || check.worst_index < 0) {
        check.max_rel_error = err;
        check.worst_index = i;
      }
    }
    check.mean_rel_error = check.checked ? sum / double(check.checked) : 0.0;
    check.passed = check.max_rel_error <= tol;
    report.passed = report.passed && check.passed;
    report.params.push_back(std::move(check));
  }
  return report;
}

template GradCheckReport grad_check(const LossBuilder<float>&, const NamedTensors<float>&, double, double, double);
template GradCheckReport grad_check(const LossBuilder<double>&, const NamedTensors<double>&, double, double, double);

}  // namespace dc
