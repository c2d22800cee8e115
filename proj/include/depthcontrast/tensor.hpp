#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <initializer_list>
#include <string>
#include <vector>

#include "depthcontrast/errors.hpp"

namespace dc {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

std::string shape_string(const Shape& shape);
Index shape_size(const Shape& shape);

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Dense row-major tensor. A rank-0 tensor (empty shape) holds one value.
template <typename Scalar>
class Tensor {
 public:
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using MatrixMap = Eigen::Map<RowMatrix<Scalar>>;
  using ConstMatrixMap = Eigen::Map<const RowMatrix<Scalar>>;

  Tensor() : values_(Vector::Zero(1)) {}
  explicit Tensor(Shape shape) : shape_(std::move(shape)) {
    check_dims();
    values_ = Vector::Zero(shape_size(shape_));
  }
  Tensor(Shape shape, Vector values) : shape_(std::move(shape)), values_(std::move(values)) {
    check_dims();
    if (values_.size() != shape_size(shape_))
      throw ShapeError("tensor: " + std::to_string(values_.size()) + " values for shape " +
                       shape_string(shape_));
  }
  Tensor(Shape shape, std::initializer_list<Scalar> values)
      : Tensor(std::move(shape), Eigen::Map<const Vector>(values.begin(), Index(values.size()))) {}

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, Scalar value) {
    Tensor t(std::move(shape));
    t.values_.setConstant(value);
    return t;
  }
  static Tensor ones(Shape shape) { return full(std::move(shape), Scalar(1)); }
  static Tensor scalar(Scalar value) { return Tensor(Shape{}, Vector::Constant(1, value)); }
  static Tensor from_matrix(const RowMatrix<Scalar>& m) {
    return Tensor({m.rows(), m.cols()}, Eigen::Map<const Vector>(m.data(), m.size()));
  }

  const Shape& shape() const { return shape_; }
  Index rank() const { return Index(shape_.size()); }
  Index dim(Index axis) const { return shape_.at(std::size_t(axis)); }
  Index size() const { return values_.size(); }

  Vector& values() { return values_; }
  const Vector& values() const { return values_; }
  Scalar* data() { return values_.data(); }
  const Scalar* data() const { return values_.data(); }
  Scalar& operator[](Index i) { return values_[i]; }
  Scalar operator[](Index i) const { return values_[i]; }

  /// Rank-2 view; callers may pass any rows x cols that covers the storage.
  MatrixMap matrix(Index rows, Index cols) {
    require_cover(rows, cols);
    return MatrixMap(values_.data(), rows, cols);
  }
  ConstMatrixMap matrix(Index rows, Index cols) const {
    require_cover(rows, cols);
    return ConstMatrixMap(values_.data(), rows, cols);
  }
  MatrixMap matrix() { return matrix(dim(0), dim(1)); }
  ConstMatrixMap matrix() const { return matrix(dim(0), dim(1)); }

  Scalar item() const {
    if (size() != 1) throw ShapeError("item(): tensor has shape " + shape_string(shape_));
    return values_[0];
  }

  bool all_finite() const { return values_.allFinite(); }

  template <typename Other>
  Tensor<Other> cast() const {
    return Tensor<Other>(shape_, values_.template cast<Other>());
  }

  bool operator==(const Tensor& other) const {
    return shape_ == other.shape_ && values_ == other.values_;
  }

 private:
  void check_dims() const {
    for (Index d : shape_)
      if (d <= 0) throw ShapeError("tensor dims must be positive, got " + shape_string(shape_));
  }
  void require_cover(Index rows, Index cols) const {
    if (rows * cols != size())
      throw ShapeError("cannot view shape " + shape_string(shape_) + " as " + std::to_string(rows) +
                       "x" + std::to_string(cols));
  }

  Shape shape_;
  Vector values_;
};

/// Bitwise equality, including the sign of zero and NaN payloads.
template <typename Scalar>
bool bitwise_equal(const Tensor<Scalar>& a, const Tensor<Scalar>& b);

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace dc
