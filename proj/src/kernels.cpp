// Forward/backward kernels for every tape primitive.

#include <algorithm>
#include <cmath>
#include <limits>

#include "depthcontrast/tape.hpp"

namespace dc {

namespace {

template <typename Scalar>
using ColMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
using Grads = std::span<Tensor<Scalar>*>;

void require(bool ok, Primitive kind, const std::string& what) {
  if (!ok) throw ShapeError(std::string(primitive_name(kind)) + ": " + what);
}

void require_attr(bool ok, Primitive kind, const std::string& what) {
  if (!ok) throw ValueError(std::string(primitive_name(kind)) + ": " + what);
}

void require_arity(std::size_t got, std::size_t lo, std::size_t hi, Primitive kind) {
  if (got < lo || got > hi)
    throw ValueError(std::string(primitive_name(kind)) + ": expected " + std::to_string(lo) +
                     (lo == hi ? "" : ".." + std::to_string(hi)) + " inputs, got " + std::to_string(got));
}

template <typename Scalar>
KernelResult<Scalar> matmul_kernel(const Tensor<Scalar>& a, const Tensor<Scalar>& b, const Attrs<Scalar>& at,
                                   bool want_backward) {
  require(a.rank() == 2 && b.rank() == 2, Primitive::matmul,
          "expects rank-2 inputs, got " + shape_string(a.shape()) + " and " + shape_string(b.shape()));
  RowMatrix<Scalar> lhs = a.matrix();
  RowMatrix<Scalar> rhs = b.matrix();
  if (at.transpose_a) lhs.transposeInPlace();
  if (at.transpose_b) rhs.transposeInPlace();
  require(lhs.cols() == rhs.rows(), Primitive::matmul,
          "inner dimensions differ for " + shape_string(a.shape()) + (at.transpose_a ? "^T" : "") + " and " +
              shape_string(b.shape()) + (at.transpose_b ? "^T" : ""));
  RowMatrix<Scalar> out(lhs.rows(), rhs.cols());
  out.noalias() = lhs * rhs;

  KernelResult<Scalar> r{Tensor<Scalar>::from_matrix(out), {}};
  if (want_backward) {
    const bool ta = at.transpose_a, tb = at.transpose_b;
    r.backward = [lhs = std::move(lhs), rhs = std::move(rhs), ta, tb](const Tensor<Scalar>& g, Grads<Scalar> gin) {
      auto G = g.matrix();
      if (gin[0]) {
        auto dA = gin[0]->matrix();
        if (ta)
          dA.noalias() += rhs * G.transpose();
        else
          dA.noalias() += G * rhs.transpose();
      }
      if (gin[1]) {
        auto dB = gin[1]->matrix();
        if (tb)
          dB.noalias() += G.transpose() * lhs;
        else
          dB.noalias() += lhs.transpose() * G;
      }
    };
  }
  return r;
}

template <typename Scalar>
KernelResult<Scalar> conv2d_kernel(const Tensor<Scalar>& x, const Tensor<Scalar>& w, const Tensor<Scalar>* bias,
                                   const Attrs<Scalar>& at, bool want_backward) {
  constexpr Primitive kind = Primitive::conv2d;
  require(x.rank() == 4, kind, "input must be NxCxHxW, got " + shape_string(x.shape()));
  require(w.rank() == 4, kind, "weight must be OxCxKhxKw, got " + shape_string(w.shape()));
  require(w.dim(1) == x.dim(1), kind,
          "channel mismatch between input " + shape_string(x.shape()) + " and weight " + shape_string(w.shape()));
  require_attr(at.stride >= 1, kind, "stride must be >= 1");
  require_attr(at.padding >= 0, kind, "padding must be >= 0");
  const Index N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const Index O = w.dim(0), KH = w.dim(2), KW = w.dim(3);
  const Index s = at.stride, p = at.padding;
  require(H + 2 * p >= KH && W + 2 * p >= KW, kind,
          "kernel " + shape_string(w.shape()) + " larger than padded input " + shape_string(x.shape()));
  const Index HO = (H + 2 * p - KH) / s + 1, WO = (W + 2 * p - KW) / s + 1;
  if (bias) require(bias->rank() == 1 && bias->dim(0) == O, kind, "bias must have shape [" + std::to_string(O) + "]");

  const Index K = C * KH * KW, HWO = HO * WO, P = N * HWO;
  ColMatrix<Scalar> cols(K, P);
  const Scalar* xs = x.data();
  for (Index n = 0; n < N; ++n)
    for (Index oh = 0; oh < HO; ++oh)
      for (Index ow = 0; ow < WO; ++ow) {
        Scalar* dst = cols.col((n * HO + oh) * WO + ow).data();
        for (Index c = 0; c < C; ++c)
          for (Index i = 0; i < KH; ++i) {
            const Index ih = oh * s - p + i;
            for (Index j = 0; j < KW; ++j) {
              const Index iw = ow * s - p + j;
              *dst++ = (ih >= 0 && ih < H && iw >= 0 && iw < W) ? xs[((n * C + c) * H + ih) * W + iw] : Scalar(0);
            }
          }
      }

  auto wm = w.matrix(O, K);
  ColMatrix<Scalar> y(O, P);
  y.noalias() = wm * cols;
  if (bias) y.colwise() += bias->values();

  Tensor<Scalar> out({N, O, HO, WO});
  for (Index n = 0; n < N; ++n)
    Eigen::Map<RowMatrix<Scalar>>(out.data() + n * O * HWO, O, HWO) = y.middleCols(n * HWO, HWO);

  KernelResult<Scalar> r{std::move(out), {}};
  if (want_backward) {
    r.backward = [cols = std::move(cols), wm = RowMatrix<Scalar>(wm), N, C, H, W, O, KH, KW, HO, WO, s, p,
                  has_bias = bias != nullptr](const Tensor<Scalar>& g, Grads<Scalar> gin) {
      const Index K = C * KH * KW, HWO = HO * WO, P = N * HWO;
      ColMatrix<Scalar> G(O, P);
      for (Index n = 0; n < N; ++n)
        G.middleCols(n * HWO, HWO) = Eigen::Map<const RowMatrix<Scalar>>(g.data() + n * O * HWO, O, HWO);
      if (gin[1]) gin[1]->matrix(O, K).noalias() += G * cols.transpose();
      if (has_bias && gin[2]) gin[2]->values() += G.rowwise().sum();
      if (gin[0]) {
        ColMatrix<Scalar> dcols(K, P);
        dcols.noalias() = wm.transpose() * G;
        Scalar* dx = gin[0]->data();
        for (Index n = 0; n < N; ++n)
          for (Index oh = 0; oh < HO; ++oh)
            for (Index ow = 0; ow < WO; ++ow) {
              const Scalar* src = dcols.col((n * HO + oh) * WO + ow).data();
              for (Index c = 0; c < C; ++c)
                for (Index i = 0; i < KH; ++i) {
                  const Index ih = oh * s - p + i;
                  for (Index j = 0; j < KW; ++j, ++src) {
                    const Index iw = ow * s - p + j;
                    if (ih >= 0 && ih < H && iw >= 0 && iw < W) dx[((n * C + c) * H + ih) * W + iw] += *src;
                  }
                }
            }
      }
    };
  }
  return r;
}

template <typename Scalar>
KernelResult<Scalar> relu_kernel(const Tensor<Scalar>& x, bool want_backward, std::vector<std::uint8_t>* signs) {
  using Vector = typename Tensor<Scalar>::Vector;
  Vector mask = (x.values().array() > Scalar(0)).template cast<Scalar>().matrix();
  if (signs) {
    for (Index i = 0; i < mask.size(); ++i) signs->push_back(mask[i] > Scalar(0) ? 1 : 0);
  }
  KernelResult<Scalar> r{Tensor<Scalar>(x.shape(), x.values().cwiseProduct(mask)), {}};
  if (want_backward)
    r.backward = [mask = std::move(mask)](const Tensor<Scalar>& g, Grads<Scalar> gin) {
      if (gin[0]) gin[0]->values() += g.values().cwiseProduct(mask);
    };
  return r;
}

template <typename Scalar>
KernelResult<Scalar> dropout_kernel(const Tensor<Scalar>& x, const Attrs<Scalar>& at, bool want_backward) {
  require_attr(at.rate >= 0.0 && at.rate < 1.0, Primitive::dropout,
               "rate must lie in [0, 1), got " + std::to_string(at.rate));
  if (!at.training || at.rate == 0.0) {
    KernelResult<Scalar> r{x, {}};
    if (want_backward)
      r.backward = [](const Tensor<Scalar>& g, Grads<Scalar> gin) {
        if (gin[0]) gin[0]->values() += g.values();
      };
    return r;
  }
  require_attr(at.stream != nullptr, Primitive::dropout, "training mode requires a random stream");
  typename Tensor<Scalar>::Vector mask(x.size());
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const Scalar keep = Scalar(1.0 / (1.0 - at.rate));
  for (Index i = 0; i < mask.size(); ++i) mask[i] = u(*at.stream) >= at.rate ? keep : Scalar(0);
  KernelResult<Scalar> r{Tensor<Scalar>(x.shape(), x.values().cwiseProduct(mask)), {}};
  if (want_backward)
    r.backward = [mask = std::move(mask)](const Tensor<Scalar>& g, Grads<Scalar> gin) {
      if (gin[0]) gin[0]->values() += g.values().cwiseProduct(mask);
    };
  return r;
}

template <typename Scalar>
KernelResult<Scalar> batch_norm_kernel(const Tensor<Scalar>& x, const Tensor<Scalar>& gamma,
                                       const Tensor<Scalar>& beta, const Attrs<Scalar>& at, bool want_backward) {
  constexpr Primitive kind = Primitive::batch_norm;
  require(x.rank() == 2 || x.rank() == 4, kind, "input must be NxF or NxCxHxW, got " + shape_string(x.shape()));
  const Index N = x.dim(0), F = x.dim(1), inner = x.size() / (N * F);
  require(gamma.rank() == 1 && gamma.dim(0) == F && beta.rank() == 1 && beta.dim(0) == F, kind,
          "gamma/beta must have shape [" + std::to_string(F) + "], got " + shape_string(gamma.shape()) + " and " +
              shape_string(beta.shape()));
  require_attr(at.epsilon > 0.0, kind, "epsilon must be > 0");
  require_attr(at.momentum >= 0.0 && at.momentum <= 1.0, kind, "momentum must lie in [0, 1]");
  auto* rm = at.buffers.running_mean;
  auto* rv = at.buffers.running_var;
  if (rm || rv)
    require(rm && rv && rm->size() == F && rv->size() == F, kind, "running buffers must both have size F");
  require_attr(at.training || (rm && rv), kind, "inference mode requires running statistics");

  const Index M = N * inner;
  using Vector = typename Tensor<Scalar>::Vector;
  Vector mean = Vector::Zero(F), var = Vector::Zero(F);
  const Scalar* xs = x.data();
  auto at_index = [F, inner](Index n, Index f, Index k) { return (n * F + f) * inner + k; };
  if (at.training) {
    for (Index n = 0; n < N; ++n)
      for (Index f = 0; f < F; ++f)
        for (Index k = 0; k < inner; ++k) mean[f] += xs[at_index(n, f, k)];
    mean /= Scalar(M);
    for (Index n = 0; n < N; ++n)
      for (Index f = 0; f < F; ++f)
        for (Index k = 0; k < inner; ++k) {
          const Scalar d = xs[at_index(n, f, k)] - mean[f];
          var[f] += d * d;
        }
    var /= Scalar(M);
    if (rm) {
      const Scalar mom = Scalar(at.momentum);
      const Scalar unbias = M > 1 ? Scalar(M) / Scalar(M - 1) : Scalar(1);
      rm->values() = (Scalar(1) - mom) * rm->values() + mom * mean;
      rv->values() = (Scalar(1) - mom) * rv->values() + mom * unbias * var;
    }
  } else {
    mean = rm->values();
    var = rv->values();
  }
  Vector inv_std = (var.array() + Scalar(at.epsilon)).rsqrt().matrix();

  Tensor<Scalar> xhat(x.shape());
  Tensor<Scalar> out(x.shape());
  for (Index n = 0; n < N; ++n)
    for (Index f = 0; f < F; ++f)
      for (Index k = 0; k < inner; ++k) {
        const Index i = at_index(n, f, k);
        xhat[i] = (xs[i] - mean[f]) * inv_std[f];
        out[i] = gamma[f] * xhat[i] + beta[f];
      }

  KernelResult<Scalar> r{std::move(out), {}};
  if (want_backward) {
    r.backward = [xhat = std::move(xhat), inv_std = std::move(inv_std), gamma_v = gamma.values(), N, F, inner,
                  training = at.training](const Tensor<Scalar>& g, Grads<Scalar> gin) {
      const Index M = N * inner;
      auto idx = [F, inner](Index n, Index f, Index k) { return (n * F + f) * inner + k; };
      Vector sum_g = Vector::Zero(F), sum_gx = Vector::Zero(F);
      for (Index n = 0; n < N; ++n)
        for (Index f = 0; f < F; ++f)
          for (Index k = 0; k < inner; ++k) {
            const Index i = idx(n, f, k);
            sum_g[f] += g[i];
            sum_gx[f] += g[i] * xhat[i];
          }
      if (gin[1]) gin[1]->values() += sum_gx;
      if (gin[2]) gin[2]->values() += sum_g;
      if (!gin[0]) return;
      Tensor<Scalar>& dx = *gin[0];
      for (Index n = 0; n < N; ++n)
        for (Index f = 0; f < F; ++f) {
          const Scalar scale = gamma_v[f] * inv_std[f];
          for (Index k = 0; k < inner; ++k) {
            const Index i = idx(n, f, k);
            if (training)
              dx[i] += scale * (g[i] - sum_g[f] / Scalar(M) - xhat[i] * sum_gx[f] / Scalar(M));
            else
              dx[i] += scale * g[i];
          }
        }
    };
  }
  return r;
}

template <typename Scalar>
KernelResult<Scalar> global_avg_pool_kernel(const Tensor<Scalar>& x, bool want_backward) {
  require(x.rank() == 4, Primitive::global_avg_pool, "input must be NxCxHxW, got " + shape_string(x.shape()));
  const Index N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  Tensor<Scalar> out({N, C});
  out.values() = x.matrix(N * C, HW).rowwise().mean();
  KernelResult<Scalar> r{std::move(out), {}};
  if (want_backward)
    r.backward = [N, C, HW](const Tensor<Scalar>& g, Grads<Scalar> gin) {
      if (gin[0]) gin[0]->matrix(N * C, HW).colwise() += g.values() / Scalar(HW);
    };
  return r;
}

template <typename Scalar>
KernelResult<Scalar> add_kernel(const Tensor<Scalar>& a, const Tensor<Scalar>& b, bool want_backward) {
  if (a.shape() == b.shape()) {
    KernelResult<Scalar> r{Tensor<Scalar>(a.shape(), a.values() + b.values()), {}};
    if (want_backward)
      r.backward = [](const Tensor<Scalar>& g, Grads<Scalar> gin) {
        if (gin[0]) gin[0]->values() += g.values();
        if (gin[1]) gin[1]->values() += g.values();
      };
    return r;
  }
  // Row broadcast: b is a vector matching a's trailing axis.
  require(a.rank() >= 2 && b.rank() == 1 && b.dim(0) == a.shape().back(), Primitive::add,
          "cannot broadcast " + shape_string(b.shape()) + " onto " + shape_string(a.shape()));
  const Index cols = b.dim(0), rows = a.size() / cols;
  Tensor<Scalar> out = a;
  out.matrix(rows, cols).rowwise() += b.values().transpose();
  KernelResult<Scalar> r{std::move(out), {}};
  if (want_backward)
    r.backward = [rows, cols](const Tensor<Scalar>& g, Grads<Scalar> gin) {
      if (gin[0]) gin[0]->values() += g.values();
      if (gin[1]) gin[1]->values() += g.matrix(rows, cols).colwise().sum().transpose();
    };
  return r;
}

template <typename Scalar>
KernelResult<Scalar> mul_kernel(const Tensor<Scalar>& a, const Tensor<Scalar>& b, bool want_backward) {
  require(a.shape() == b.shape(), Primitive::mul,
          "shapes differ: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  KernelResult<Scalar> r{Tensor<Scalar>(a.shape(), a.values().cwiseProduct(b.values())), {}};
  if (want_backward)
    r.backward = [av = a.values(), bv = b.values()](const Tensor<Scalar>& g, Grads<Scalar> gin) {
      if (gin[0]) gin[0]->values() += g.values().cwiseProduct(bv);
      if (gin[1]) gin[1]->values() += g.values().cwiseProduct(av);
    };
  return r;
}

template <typename Scalar>
KernelResult<Scalar> scale_kernel(const Tensor<Scalar>& x, const Attrs<Scalar>& at, bool want_backward) {
  require_attr(std::isfinite(at.factor), Primitive::scale, "factor must be finite");
  const Scalar f = Scalar(at.factor);
  KernelResult<Scalar> r{Tensor<Scalar>(x.shape(), x.values() * f), {}};
  if (want_backward)
    r.backward = [f](const Tensor<Scalar>& g, Grads<Scalar> gin) {
      if (gin[0]) gin[0]->values() += g.values() * f;
    };
  return r;
}

template <typename Scalar>
KernelResult<Scalar> reshape_kernel(const Tensor<Scalar>& x, const Attrs<Scalar>& at, bool want_backward) {
  for (Index d : at.shape) require_attr(d > 0, Primitive::reshape, "dims must be positive");
  require(shape_size(at.shape) == x.size(), Primitive::reshape,
          "cannot reshape " + shape_string(x.shape()) + " to " + shape_string(at.shape));
  KernelResult<Scalar> r{Tensor<Scalar>(at.shape, x.values()), {}};
  if (want_backward)
    r.backward = [](const Tensor<Scalar>& g, Grads<Scalar> gin) {
      if (gin[0]) gin[0]->values() += g.values();
    };
  return r;
}

template <typename Scalar>
KernelResult<Scalar> row_l2_normalize_kernel(const Tensor<Scalar>& x, bool want_backward) {
  require(x.rank() == 2, Primitive::row_l2_normalize, "input must be rank 2, got " + shape_string(x.shape()));
  auto X = x.matrix();
  typename Tensor<Scalar>::Vector norms = X.rowwise().norm();
  if ((norms.array() <= Scalar(0)).any())
    throw NumericalError("row_l2_normalize: zero-norm row cannot be normalized");
  Tensor<Scalar> out(x.shape());
  out.matrix() = norms.cwiseInverse().asDiagonal() * X;
  KernelResult<Scalar> r{out, {}};
  if (want_backward)
    r.backward = [y = std::move(out), norms = std::move(norms)](const Tensor<Scalar>& g, Grads<Scalar> gin) {
      if (!gin[0]) return;
      auto Y = y.matrix();
      auto G = g.matrix();
      typename Tensor<Scalar>::Vector dots = Y.cwiseProduct(G).rowwise().sum();
      gin[0]->matrix() += norms.cwiseInverse().asDiagonal() * (G - dots.asDiagonal() * Y);
    };
  return r;
}

template <typename Scalar>
KernelResult<Scalar> log_softmax_kernel(const Tensor<Scalar>& x, bool want_backward) {
  require(x.rank() == 2, Primitive::log_softmax, "input must be rank 2, got " + shape_string(x.shape()));
  auto X = x.matrix();
  Tensor<Scalar> out(x.shape());
  auto Y = out.matrix();
  for (Index i = 0; i < X.rows(); ++i) {
    const Scalar m = X.row(i).maxCoeff();
    const Scalar lse = m + std::log((X.row(i).array() - m).exp().sum());
    Y.row(i) = X.row(i).array() - lse;
  }
  KernelResult<Scalar> r{out, {}};
  if (want_backward)
    r.backward = [y = std::move(out)](const Tensor<Scalar>& g, Grads<Scalar> gin) {
      if (!gin[0]) return;
      auto G = g.matrix();
      RowMatrix<Scalar> soft = y.matrix().array().exp();
      typename Tensor<Scalar>::Vector gsum = G.rowwise().sum();
      gin[0]->matrix() += G - gsum.asDiagonal() * soft;
    };
  return r;
}

template <typename Scalar>
KernelResult<Scalar> reduce_kernel(const Tensor<Scalar>& x, bool mean, bool want_backward) {
  const Scalar w = mean ? Scalar(1) / Scalar(x.size()) : Scalar(1);
  KernelResult<Scalar> r{Tensor<Scalar>::scalar(x.values().sum() * w), {}};
  if (want_backward)
    r.backward = [w](const Tensor<Scalar>& g, Grads<Scalar> gin) {
      if (gin[0]) gin[0]->values().array() += g.item() * w;
    };
  return r;
}

}  // namespace

std::string_view primitive_name(Primitive kind) {
  switch (kind) {
    case Primitive::leaf: return "leaf";
    case Primitive::matmul: return "matmul";
    case Primitive::conv2d: return "conv2d";
    case Primitive::relu: return "relu";
    case Primitive::dropout: return "dropout";
    case Primitive::batch_norm: return "batch_norm";
    case Primitive::global_avg_pool: return "global_avg_pool";
    case Primitive::add: return "add";
    case Primitive::mul: return "mul";
    case Primitive::scale: return "scale";
    case Primitive::reshape: return "reshape";
    case Primitive::row_l2_normalize: return "row_l2_normalize";
    case Primitive::log_softmax: return "log_softmax";
    case Primitive::reduce_mean: return "reduce_mean";
    case Primitive::reduce_sum: return "reduce_sum";
  }
  return "unknown";
}

template <typename Scalar>
KernelResult<Scalar> apply_primitive(Primitive kind, std::span<const Tensor<Scalar>* const> in,
                                     const Attrs<Scalar>& at, bool want_backward,
                                     std::vector<std::uint8_t>* relu_signs) {
  switch (kind) {
    case Primitive::matmul:
      require_arity(in.size(), 2, 2, kind);
      return matmul_kernel(*in[0], *in[1], at, want_backward);
    case Primitive::conv2d:
      require_arity(in.size(), 2, 3, kind);
      return conv2d_kernel(*in[0], *in[1], in.size() == 3 ? in[2] : nullptr, at, want_backward);
    case Primitive::relu:
      require_arity(in.size(), 1, 1, kind);
      return relu_kernel(*in[0], want_backward, relu_signs);
    case Primitive::dropout:
      require_arity(in.size(), 1, 1, kind);
      return dropout_kernel(*in[0], at, want_backward);
    case Primitive::batch_norm:
      require_arity(in.size(), 3, 3, kind);
      return batch_norm_kernel(*in[0], *in[1], *in[2], at, want_backward);
    case Primitive::global_avg_pool:
      require_arity(in.size(), 1, 1, kind);
      return global_avg_pool_kernel(*in[0], want_backward);
    case Primitive::add:
      require_arity(in.size(), 2, 2, kind);
      return add_kernel(*in[0], *in[1], want_backward);
    case Primitive::mul:
      require_arity(in.size(), 2, 2, kind);
      return mul_kernel(*in[0], *in[1], want_backward);
    case Primitive::scale:
      require_arity(in.size(), 1, 1, kind);
      return scale_kernel(*in[0], at, want_backward);
    case Primitive::reshape:
      require_arity(in.size(), 1, 1, kind);
      return reshape_kernel(*in[0], at, want_backward);
    case Primitive::row_l2_normalize:
      require_arity(in.size(), 1, 1, kind);
      return row_l2_normalize_kernel(*in[0], want_backward);
    case Primitive::log_softmax:
      require_arity(in.size(), 1, 1, kind);
      return log_softmax_kernel(*in[0], want_backward);
    case Primitive::reduce_mean:
    case Primitive::reduce_sum:
      require_arity(in.size(), 1, 1, kind);
      return reduce_kernel(*in[0], kind == Primitive::reduce_mean, want_backward);
    case Primitive::leaf:
      break;
  }
  throw ValueError("apply_primitive: leaf is not an operation");
}

template KernelResult<float> apply_primitive(Primitive, std::span<const Tensor<float>* const>, const Attrs<float>&,
                                             bool, std::vector<std::uint8_t>*);
template KernelResult<double> apply_primitive(Primitive, std::span<const Tensor<double>* const>,
                                              const Attrs<double>&, bool, std::vector<std::uint8_t>*);

}  // namespace dc
