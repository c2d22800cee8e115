#pragma once

#include "depthcontrast/tape.hpp"

namespace dc {

struct ContrastiveConfig {
  double tau = 0.1;
  void validate() const;
};

/// 2N x D embeddings: rows [0, N) from reflectance views, rows [N, 2N) from
/// depth views; row i and row i + N form the positive pair.
template <typename Scalar>
struct EmbeddingBatch {
  Tensor<Scalar> z;

  Index pairs() const { return z.dim(0) / 2; }
  Index width() const { return z.dim(1); }
  static Index positive_of(Index row, Index pairs) { return row < pairs ? row + pairs : row - pairs; }
  Tensor<Scalar> ref_block() const;
  Tensor<Scalar> dep_block() const;
};

template <typename Scalar>
EmbeddingBatch<Scalar> build_embedding_batch(const Tensor<Scalar>& z_ref, const Tensor<Scalar>& z_dep);

/// All-pairs dot products of unit-norm rows. Rejects rows whose norm deviates
/// from 1 by more than `tolerance`.
template <typename Scalar>
Tensor<Scalar> similarity_matrix(const Tensor<Scalar>& z_normalized, double tolerance = 1e-6);

template <typename Scalar>
struct NtXentResult {
  Scalar loss;
  Tensor<Scalar> per_pair;  // 2N directed losses, anchor order
  bool degenerate = false;  // N == 1: no negatives exist
};

/// NT-Xent over both pair directions. Rows are L2-normalized internally; each
/// anchor's denominator runs over every other row (positive included, self
/// excluded); the total is the mean of the 2N directed losses.
template <typename Scalar>
NtXentResult<Scalar> nt_xent_loss(const EmbeddingBatch<Scalar>& batch, const ContrastiveConfig& cfg = {});

template <typename Scalar>
struct NtXentTerms {
  Var<Scalar> loss;
  Tensor<Scalar> per_pair;
  bool degenerate = false;
};

/// Tape form of nt_xent_loss for a stacked 2N x D embedding variable.
template <typename Scalar>
NtXentTerms<Scalar> nt_xent_loss(Var<Scalar> stacked, const ContrastiveConfig& cfg = {});

}  // namespace dc
