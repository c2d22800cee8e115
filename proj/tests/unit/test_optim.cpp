#include <doctest.h>

#include <cmath>

#include "depthcontrast/optim.hpp"

using namespace dc;
using T = Tensor<double>;
using Grads = std::map<std::string, T>;

namespace {

ModelParams<double> one_param(double value) {
  ModelParams<double> p;
  p.add("theta", T({1}, {value}), ParamKind::weight);
  return p;
}

}  // namespace

TEST_CASE("first step with unit gradient moves each parameter by about lr") {
  ModelParams<double> p;
  p.add("a", T({2, 2}, {1, 2, 3, 4}), ParamKind::weight);
  AdamState<double> st;
  adam_step(p, Grads{{"a", T::ones({2, 2})}}, st, 0.01);
  const double step = 0.01 / (1.0 + 1e-8);
  for (Index i = 0; i < 4; ++i) CHECK(p.at("a")[i] == doctest::Approx(double(i + 1) - step).epsilon(1e-15));
  CHECK(st.step == 1);
}

TEST_CASE("zero gradient leaves parameters unchanged") {
  ModelParams<double> p = one_param(0.75);
  AdamState<double> st;
  adam_step(p, Grads{{"theta", T({1}, {0.0})}}, st, 0.1);
  CHECK(p.at("theta")[0] == 0.75);
}

TEST_CASE("five steps on theta^2 match a scalar reference") {
  const double lr = 0.1, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  double theta = 1.0, m = 0.0, v = 0.0;
  std::vector<double> expected;
  for (int t = 1; t <= 5; ++t) {
    const double g = 2.0 * theta;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mh = m / (1 - std::pow(b1, t)), vh = v / (1 - std::pow(b2, t));
    theta -= lr * mh / (std::sqrt(vh) + eps);
    expected.push_back(theta);
  }
  ModelParams<double> p = one_param(1.0);
  AdamState<double> st;
  for (int t = 0; t < 5; ++t) {
    adam_step(p, Grads{{"theta", T({1}, {2.0 * p.at("theta")[0]})}}, st, lr);
    CHECK(std::abs(p.at("theta")[0] - expected[std::size_t(t)]) <= 1e-12);
  }
}

TEST_CASE("non-finite gradients reject the whole step") {
  ModelParams<double> p;
  p.add("a", T({1}, {1.0}), ParamKind::weight);
  p.add("b", T({1}, {2.0}), ParamKind::weight);
  AdamState<double> st;
  CHECK_THROWS_AS(adam_step(p, Grads{{"a", T({1}, {1.0})}, {"b", T({1}, {NAN})}}, st, 0.1), NumericalError);
  CHECK(p.at("a")[0] == 1.0);
  CHECK(st.step == 0);
  CHECK(st.first_moment.empty());
  CHECK_THROWS_AS(adam_step(p, Grads{{"a", T({2}, {1.0, 1.0})}}, st, 0.1), ShapeError);
  CHECK_THROWS_AS(adam_step(p, Grads{{"a", T({1}, {1.0})}}, st, 0.0), ValueError);
}

TEST_CASE("default coefficients") {
  const AdamConfig c;
  CHECK(c.beta1 == 0.9);
  CHECK(c.beta2 == 0.999);
  CHECK(c.eps == 1e-8);
}
