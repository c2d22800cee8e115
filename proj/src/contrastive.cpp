#include "depthcontrast/contrastive.hpp"

#include <cmath>
#include <iostream>

namespace dc {

namespace {
// Self-similarity mask. exp() of it underflows to exactly zero after the
// log-sum-exp max shift, so the diagonal drops out of every denominator.
constexpr double kExcluded = -1e30;
}  // namespace

void ContrastiveConfig::validate() const {
  if (!(tau > 0.0) || !std::isfinite(tau)) throw ValueError("tau must be > 0, got " + std::to_string(tau));
}

template <typename Scalar>
Tensor<Scalar> EmbeddingBatch<Scalar>::ref_block() const {
  return Tensor<Scalar>::from_matrix(z.matrix().topRows(pairs()));
}

template <typename Scalar>
Tensor<Scalar> EmbeddingBatch<Scalar>::dep_block() const {
  return Tensor<Scalar>::from_matrix(z.matrix().bottomRows(pairs()));
}

template <typename Scalar>
EmbeddingBatch<Scalar> build_embedding_batch(const Tensor<Scalar>& z_ref, const Tensor<Scalar>& z_dep) {
  if (z_ref.rank() != 2 || z_ref.shape() != z_dep.shape())
    throw ShapeError("build_embedding_batch: z_ref " + shape_string(z_ref.shape()) + " and z_dep " +
                     shape_string(z_dep.shape()) + " must be equal-shape matrices");
  const Index n = z_ref.dim(0), d = z_ref.dim(1);
  RowMatrix<Scalar> z(2 * n, d);
  z.topRows(n) = z_ref.matrix();
  z.bottomRows(n) = z_dep.matrix();
  return {Tensor<Scalar>::from_matrix(z)};
}

template <typename Scalar>
Tensor<Scalar> similarity_matrix(const Tensor<Scalar>& zn, double tolerance) {
  if (zn.rank() != 2) throw ShapeError("similarity_matrix: expected a matrix, got " + shape_string(zn.shape()));
  auto Z = zn.matrix();
  const double deviation = double((Z.rowwise().norm().array() - Scalar(1)).abs().maxCoeff());
  if (deviation > tolerance)
    throw ValueError("similarity_matrix: rows are not unit-norm (max deviation " + std::to_string(deviation) + ")");
  RowMatrix<Scalar> s(Z.rows(), Z.rows());
  s.noalias() = Z * Z.transpose();
  return Tensor<Scalar>::from_matrix(s);
}

template <typename Scalar>
NtXentTerms<Scalar> nt_xent_loss(Var<Scalar> stacked, const ContrastiveConfig& cfg) {
  cfg.validate();
  const Shape& shape = stacked.shape();
  if (shape.size() != 2 || shape[0] < 2 || shape[0] % 2 != 0)
    throw ShapeError("nt_xent_loss: expected a 2N x D embedding matrix, got " + shape_string(shape));
  Tape<Scalar>& tape = *stacked.tape;
  const Index rows = shape[0], pairs = rows / 2;

  Tensor<Scalar> mask(Shape{rows, rows}), positives(Shape{rows, rows});
  for (Index i = 0; i < rows; ++i) {
    mask[i * rows + i] = Scalar(kExcluded);
    positives[i * rows + EmbeddingBatch<Scalar>::positive_of(i, pairs)] = Scalar(1);
  }

  Var<Scalar> zn = row_l2_normalize(stacked);
  Var<Scalar> logits = add(scale(matmul(zn, zn, false, true), 1.0 / cfg.tau), tape.leaf(std::move(mask)));
  Var<Scalar> log_prob = log_softmax(logits);
  Var<Scalar> picked = mul(log_prob, tape.leaf(positives));
  Var<Scalar> loss = scale(reduce_sum(picked), -1.0 / double(rows));

  NtXentTerms<Scalar> out{loss, Tensor<Scalar>({rows}), pairs == 1};
  out.per_pair.values() = -picked.value().matrix(rows, rows).rowwise().sum();
  if (out.degenerate) std::clog << "nt_xent_loss: degenerate batch with a single pair (no negatives)\n";
  return out;
}

template <typename Scalar>
NtXentResult<Scalar> nt_xent_loss(const EmbeddingBatch<Scalar>& batch, const ContrastiveConfig& cfg) {
  Tape<Scalar> tape;
  tape.set_recording(false);
  auto terms = nt_xent_loss(tape.leaf(batch.z), cfg);
  return {terms.loss.value().item(), std::move(terms.per_pair), terms.degenerate};
}

#define DC_INSTANTIATE(S)                                                                      \
  template struct EmbeddingBatch<S>;                                                           \
  template EmbeddingBatch<S> build_embedding_batch(const Tensor<S>&, const Tensor<S>&);        \
  template Tensor<S> similarity_matrix(const Tensor<S>&, double);                              \
  template NtXentTerms<S> nt_xent_loss(Var<S>, const ContrastiveConfig&);                      \
  template NtXentResult<S> nt_xent_loss(const EmbeddingBatch<S>&, const ContrastiveConfig&);

DC_INSTANTIATE(float)
DC_INSTANTIATE(double)
#undef DC_INSTANTIATE

}  // namespace dc
