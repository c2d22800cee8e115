#include <doctest.h>

#include <random>

#include "depthcontrast/grad_check.hpp"
#include "depthcontrast/tape.hpp"

using namespace dc;
using T = Tensor<double>;
using V = Var<double>;

namespace {

T random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  T t(std::move(shape));
  std::uniform_real_distribution<double> u(lo, hi);
  for (Index i = 0; i < t.size(); ++i) t[i] = u(rng);
  return t;
}

// Weighted sum so every output element carries a distinct upstream gradient.
V weighted_sum(Tape<double>& tape, V y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  V w = tape.leaf(random_tensor(y.shape(), rng));
  return reduce_sum(mul(y, w));
}

}  // namespace

TEST_CASE("relu at sign boundaries") {
  Tape<double> tape;
  V y = relu(tape.leaf(T({3}, {-1.0, 0.0, 2.0})));
  CHECK(y.value() == T({3}, {0.0, 0.0, 2.0}));
}

TEST_CASE("conv2d with a 1x1 unit kernel is the identity") {
  std::mt19937_64 rng(1);
  Tape<double> tape;
  T img = random_tensor({2, 1, 5, 4}, rng);
  V y = conv2d(tape.leaf(img), tape.leaf(T({1, 1, 1, 1}, {1.0})), 1, 0);
  CHECK(bitwise_equal(y.value(), img));
}

TEST_CASE("matmul by identity") {
  Tape<double> tape;
  T a({2, 2}, {1.5, -2.0, 0.25, 7.0});
  V y = matmul(tape.leaf(T({2, 2}, {1.0, 0.0, 0.0, 1.0})), tape.leaf(a));
  CHECK(y.value() == a);
}

TEST_CASE("conv2d matches a direct sliding-window sum") {
  std::mt19937_64 rng(2);
  T x = random_tensor({2, 3, 7, 6}, rng), w = random_tensor({4, 3, 3, 3}, rng), b = random_tensor({4}, rng);
  Tape<double> tape;
  const int stride = 2, pad = 1;
  const T& y = conv2d(tape.leaf(x), tape.leaf(w), tape.leaf(b), stride, pad).value();
  REQUIRE(y.shape() == Shape{2, 4, 4, 3});
  double max_err = 0.0;
  for (Index n = 0; n < 2; ++n)
    for (Index o = 0; o < 4; ++o)
      for (Index oh = 0; oh < 4; ++oh)
        for (Index ow = 0; ow < 3; ++ow) {
          double acc = b[o];
          for (Index c = 0; c < 3; ++c)
            for (Index i = 0; i < 3; ++i)
              for (Index j = 0; j < 3; ++j) {
                const Index ih = oh * stride - pad + i, iw = ow * stride - pad + j;
                if (ih < 0 || ih >= 7 || iw < 0 || iw >= 6) continue;
                acc += w[((o * 3 + c) * 3 + i) * 3 + j] * x[((n * 3 + c) * 7 + ih) * 6 + iw];
              }
          max_err = std::max(max_err, std::abs(acc - y[((n * 4 + o) * 4 + oh) * 3 + ow]));
        }
  CHECK(max_err < 1e-12);
}

TEST_CASE("backward of sum is all ones") {
  Tape<double> tape;
  V x = tape.leaf(T({2, 3}), true);
  tape.backward(reduce_sum(x));
  CHECK(tape.grad(x) == T::ones({2, 3}));
}

TEST_CASE("inactive relu unit receives zero gradient") {
  Tape<double> tape;
  V x = tape.leaf(T({1}, {-3.0}), true);
  tape.backward(reduce_sum(relu(x)));
  CHECK(tape.grad(x)[0] == 0.0);
}

TEST_CASE("relu gradient at exactly zero is zero") {
  Tape<double> tape;
  V x = tape.leaf(T({1}, {0.0}), true);
  tape.backward(reduce_sum(relu(x)));
  CHECK(tape.grad(x)[0] == 0.0);
}

TEST_CASE("matmul gradients match independent central differences") {
  std::mt19937_64 rng(3);
  const T a = random_tensor({3, 3}, rng), b = random_tensor({3, 3}, rng);
  Tape<double> tape;
  V va = tape.leaf(a, true), vb = tape.leaf(b, true);
  tape.backward(reduce_sum(matmul(va, vb)));

  // Oracle: evaluate sum(A*B) with plain Eigen, no tape involved.
  auto f = [](const T& x, const T& y) { return (x.matrix() * y.matrix()).sum(); };
  const double eps = 1e-5;
  for (int which = 0; which < 2; ++which) {
    for (Index i = 0; i < 9; ++i) {
      T p = which == 0 ? a : b, m = p;
      p[i] += eps;
      m[i] -= eps;
      const double fd = which == 0 ? (f(p, b) - f(m, b)) / (2 * eps) : (f(a, p) - f(a, m)) / (2 * eps);
      const double an = tape.grad(which == 0 ? va : vb)[i];
      CHECK(relative_error(an, fd, 1e-12) <= 1e-6);
    }
  }
}

TEST_CASE("repeated backward accumulates until zero_grad") {
  Tape<double> tape;
  V x = tape.leaf(T({2}, {1.0, 2.0}), true);
  V loss = reduce_sum(mul(x, x));
  tape.backward(loss);
  tape.backward(loss);
  CHECK(tape.grad(x) == T({2}, {4.0, 8.0}));
  tape.zero_grad();
  CHECK(tape.grad(x) == T::zeros({2}));
}

TEST_CASE("leaves off the loss path get zero gradient") {
  Tape<double> tape;
  V x = tape.leaf(T({2}, {1.0, 2.0}), true);
  V unused = tape.leaf(T({3}, {1.0, 2.0, 3.0}), true);
  relu(unused);
  auto grads = tape.backward(reduce_sum(x));
  CHECK(grads.at(unused.id) == T::zeros({3}));
}

TEST_CASE("backward rejects non-scalar losses and foreign tensors") {
  Tape<double> tape, other;
  V x = tape.leaf(T({2}, {1.0, 2.0}), true);
  CHECK_THROWS_AS(tape.backward(x), ShapeError);
  V y = other.leaf(T::scalar(1.0), true);
  CHECK_THROWS_AS(tape.backward(y), ValueError);
}

TEST_CASE("primitive argument validation") {
  Tape<double> tape;
  V a = tape.leaf(T({2, 3}));
  V b = tape.leaf(T({2, 3}));
  CHECK_THROWS_AS(matmul(a, b), ShapeError);
  CHECK_NOTHROW(matmul(a, b, false, true));
  Stream s(1);
  CHECK_THROWS_AS(dropout(a, 1.0, true, &s), ValueError);
  CHECK_THROWS_AS(dropout(a, -0.1, true, &s), ValueError);
  V g = tape.leaf(T::ones({3})), be = tape.leaf(T({3}));
  CHECK_THROWS_AS(batch_norm(a, g, be, true, {}, 0.1, 0.0), ValueError);
  CHECK_THROWS_AS(batch_norm(a, g, be, false, {}), ValueError);
  CHECK_THROWS_AS(reshape(a, {4, 2}), ShapeError);
  CHECK_THROWS_AS(conv2d(tape.leaf(T({1, 2, 4, 4})), tape.leaf(T({1, 3, 3, 3})), 1, 1), ShapeError);
  CHECK_THROWS_AS(row_l2_normalize(tape.leaf(T({2, 2}))), NumericalError);
}

TEST_CASE("grad_check on x^2 at 3") {
  LossBuilder<double> f = [](Tape<double>&, std::span<const V> p) { return reduce_sum(mul(p[0], p[0])); };
  Tape<double> tape;
  V x = tape.leaf(T({1}, {3.0}), true);
  tape.backward(reduce_sum(mul(x, x)));
  CHECK(tape.grad(x)[0] == doctest::Approx(6.0).epsilon(1e-15));
  auto report = grad_check<double>(f, {{"x", T({1}, {3.0})}}, 1e-5, 1e-9);
  CHECK(report.passed);
  CHECK(report.params[0].checked == 1);
}

TEST_CASE("grad_check skips a relu probed at its kink") {
  LossBuilder<double> f = [](Tape<double>&, std::span<const V> p) { return reduce_sum(relu(p[0])); };
  auto report = grad_check<double>(f, {{"x", T({1}, {0.0})}}, 1e-5, 1e-6);
  CHECK(report.params[0].skipped == 1);
  CHECK(report.params[0].checked == 0);
  CHECK(report.passed);
}

TEST_CASE("grad_check rejects non-scalar output") {
  LossBuilder<double> f = [](Tape<double>&, std::span<const V> p) { return relu(p[0]); };
  CHECK_THROWS_AS(grad_check<double>(f, {{"x", T({2}, {1.0, 2.0})}}, 1e-5, 1e-6), ShapeError);
}

TEST_CASE("every differentiable primitive matches central differences") {
  std::mt19937_64 rng(11);
  const double eps = 1e-5, tol = 1e-6;
  auto check = [&](const char* name, LossBuilder<double> f, NamedTensors<double> params) {
    CAPTURE(name);
    auto report = grad_check<double>(f, params, eps, tol);
    for (const auto& p : report.params) {
      CAPTURE(p.name);
      CHECK(p.max_rel_error <= tol);
    }
  };
  check("matmul_tt",
        [](Tape<double>& t, std::span<const V> p) { return weighted_sum(t, matmul(p[0], p[1], true, true), 1); },
        {{"a", random_tensor({3, 2}, rng)}, {"b", random_tensor({4, 3}, rng)}});
  check("conv2d",
        [](Tape<double>& t, std::span<const V> p) { return weighted_sum(t, conv2d(p[0], p[1], p[2], 2, 1), 2); },
        {{"x", random_tensor({2, 2, 5, 5}, rng)}, {"w", random_tensor({3, 2, 3, 3}, rng)}, {"b", random_tensor({3}, rng)}});
  check("relu", [](Tape<double>& t, std::span<const V> p) { return weighted_sum(t, relu(p[0]), 3); },
        {{"x", random_tensor({4, 5}, rng)}});
  check("dropout",
        [](Tape<double>& t, std::span<const V> p) {
          Stream s(99);
          return weighted_sum(t, dropout(p[0], 0.3, true, &s), 4);
        },
        {{"x", random_tensor({4, 5}, rng)}});
  check("batch_norm_train_4d",
        [](Tape<double>& t, std::span<const V> p) {
          return weighted_sum(t, batch_norm(p[0], p[1], p[2], true, {}), 5);
        },
        {{"x", random_tensor({3, 2, 2, 2}, rng)}, {"g", random_tensor({2}, rng, 0.5, 1.5)}, {"b", random_tensor({2}, rng)}});
  check("batch_norm_eval_2d",
        [](Tape<double>& t, std::span<const V> p) {
          static T rm = T({3}, {0.1, -0.2, 0.3}), rv = T({3}, {0.5, 1.5, 2.0});
          return weighted_sum(t, batch_norm(p[0], p[1], p[2], false, {&rm, &rv}), 6);
        },
        {{"x", random_tensor({4, 3}, rng)}, {"g", random_tensor({3}, rng)}, {"b", random_tensor({3}, rng)}});
  check("global_avg_pool", [](Tape<double>& t, std::span<const V> p) { return weighted_sum(t, global_avg_pool(p[0]), 7); },
        {{"x", random_tensor({2, 3, 2, 3}, rng)}});
  check("add_broadcast", [](Tape<double>& t, std::span<const V> p) { return weighted_sum(t, add(p[0], p[1]), 8); },
        {{"a", random_tensor({3, 4}, rng)}, {"b", random_tensor({4}, rng)}});
  check("mul", [](Tape<double>& t, std::span<const V> p) { return weighted_sum(t, mul(p[0], p[1]), 9); },
        {{"a", random_tensor({3, 4}, rng)}, {"b", random_tensor({3, 4}, rng)}});
  check("scale", [](Tape<double>& t, std::span<const V> p) { return weighted_sum(t, scale(p[0], -2.5), 10); },
        {{"x", random_tensor({5}, rng)}});
  check("reshape", [](Tape<double>& t, std::span<const V> p) { return weighted_sum(t, flatten(p[0]), 11); },
        {{"x", random_tensor({2, 3, 2}, rng)}});
  check("row_l2_normalize",
        [](Tape<double>& t, std::span<const V> p) { return weighted_sum(t, row_l2_normalize(p[0]), 12); },
        {{"x", random_tensor({3, 4}, rng)}});
  check("log_softmax", [](Tape<double>& t, std::span<const V> p) { return weighted_sum(t, log_softmax(p[0]), 13); },
        {{"x", random_tensor({3, 5}, rng, -3.0, 3.0)}});
  check("reduce_mean", [](Tape<double>&, std::span<const V> p) { return reduce_mean(mul(p[0], p[0])); },
        {{"x", random_tensor({3, 5}, rng)}});
}

TEST_CASE("batch_norm updates running statistics only in training") {
  T rm = T::zeros({2}), rv = T::ones({2});
  Tape<double> tape;
  V x = tape.leaf(T({2, 2}, {1.0, 2.0, 3.0, 6.0}));
  V g = tape.leaf(T::ones({2})), b = tape.leaf(T::zeros({2}));
  batch_norm(x, g, b, false, {&rm, &rv});
  CHECK(rm == T::zeros({2}));
  CHECK(rv == T::ones({2}));
  batch_norm(x, g, b, true, {&rm, &rv}, 0.1);
  CHECK(rm[0] == doctest::Approx(0.2));   // 0.1 * mean(1, 3)
  CHECK(rm[1] == doctest::Approx(0.4));   // 0.1 * mean(2, 6)
  CHECK(rv[0] == doctest::Approx(0.9 + 0.1 * 2.0));  // unbiased var(1, 3) = 2
}

TEST_CASE("dropout is deterministic given a stream state and inverted-scaled") {
  std::mt19937_64 rng(5);
  T x = random_tensor({50, 4}, rng);
  Tape<double> tape;
  V vx = tape.leaf(x);
  Stream s1(42), s2(42), s3(43);
  const T a = dropout(vx, 0.3, true, &s1).value();
  const T b = dropout(vx, 0.3, true, &s2).value();
  const T c = dropout(vx, 0.3, true, &s3).value();
  CHECK(bitwise_equal(a, b));
  CHECK_FALSE(bitwise_equal(a, c));
  for (Index i = 0; i < x.size(); ++i)
    CHECK((a[i] == 0.0 || std::abs(a[i] - x[i] / 0.7) < 1e-15));
  CHECK(bitwise_equal(dropout(vx, 0.3, false, &s1).value(), x));
}

TEST_CASE("replaying an identical op sequence is bitwise identical") {
  std::mt19937_64 rng(6);
  T x = random_tensor({2, 3, 6, 6}, rng), w = random_tensor({4, 3, 3, 3}, rng);
  auto run = [&] {
    Tape<double> tape;
    V h = global_avg_pool(relu(conv2d(tape.leaf(x, true), tape.leaf(w, true), 2, 1)));
    V loss = reduce_mean(log_softmax(h));
    tape.backward(loss);
    return std::pair{loss.value(), tape.grad(V{&tape, 1})};
  };
  auto [l1, g1] = run();
  auto [l2, g2] = run();
  CHECK(bitwise_equal(l1, l2));
  CHECK(bitwise_equal(g1, g2));
}

TEST_CASE("disabled recording keeps values but records nothing") {
  Tape<double> tape;
  tape.set_recording(false);
  V x = tape.leaf(T({2}, {1.0, -1.0}), true);
  V y = relu(x);
  CHECK(y.value() == T({2}, {1.0, 0.0}));
  CHECK(tape.records().empty());
  CHECK_FALSE(tape.requires_grad(x));
}

TEST_CASE("32-bit mode runs the same primitives") {
  Tape<float> tape;
  Var<float> x = tape.leaf(Tensor<float>({2, 2}, {1.f, 2.f, 3.f, 4.f}), true);
  tape.backward(reduce_mean(row_l2_normalize(x)));
  CHECK(tape.grad(x).all_finite());
}
