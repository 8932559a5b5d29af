#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace edd {

/// Base class of every error raised by this library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes are incompatible with the requested operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A NaN or infinity appeared where only finite values are allowed.
class NumericError : public Error {
 public:
  using Error::Error;
};

using Index = Eigen::Index;
using Shape = std::vector<Index>;

inline Index numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1},
                         [](Index a, Index b) { return a * b; });
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

/// Dense row-major tensor with contiguous Eigen storage.
///
/// The invariant `numel(shape) == values.size()` holds for every instance and
/// all values are finite; both are checked on construction.
template <typename Scalar>
class Tensor {
 public:
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MatrixMap = Eigen::Map<RowMatrix>;
  using ConstMatrixMap = Eigen::Map<const RowMatrix>;

  Tensor() : shape_{}, values_(Vector::Zero(1)) {}

  explicit Tensor(Shape shape) : shape_(std::move(shape)), values_(Vector::Zero(numel(shape_))) {
    check_shape();
  }

  Tensor(Shape shape, Vector values) : shape_(std::move(shape)), values_(std::move(values)) {
    if (numel(shape_) != values_.size()) {
      throw ShapeError("tensor: shape " + to_string(shape_) + " does not hold " +
                       std::to_string(values_.size()) + " values");
    }
    check_shape();
    if (!values_.allFinite()) throw NumericError("tensor: non-finite value at creation");
  }

  /// Skips the finiteness check; for primitives whose output the tape
  /// validates with the producing op's name.
  struct Unchecked {};
  Tensor(Shape shape, Vector values, Unchecked) : shape_(std::move(shape)), values_(std::move(values)) {
    if (numel(shape_) != values_.size()) {
      throw ShapeError("tensor: shape " + to_string(shape_) + " does not hold " +
                       std::to_string(values_.size()) + " values");
    }
    check_shape();
  }

  Tensor(Shape shape, std::initializer_list<Scalar> values)
      : Tensor(std::move(shape), from_list(values)) {}

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  static Tensor constant(Shape shape, Scalar value) {
    Tensor t(std::move(shape));
    t.values_.setConstant(value);
    if (!std::isfinite(static_cast<double>(value))) {
      throw NumericError("tensor: non-finite fill value");
    }
    return t;
  }

  static Tensor scalar(Scalar value) { return Tensor(Shape{}, Vector::Constant(1, value)); }

  static Tensor vector(std::initializer_list<Scalar> values) {
    return Tensor(Shape{static_cast<Index>(values.size())}, from_list(values));
  }

  static Tensor vector(const std::vector<Scalar>& values) {
    Vector v(static_cast<Index>(values.size()));
    for (std::size_t i = 0; i < values.size(); ++i) v[static_cast<Index>(i)] = values[i];
    const Index n = v.size();
    return Tensor(Shape{n}, std::move(v));
  }

  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index dim(Index axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
  Index size() const { return values_.size(); }
  bool is_scalar() const { return values_.size() == 1; }

  Vector& values() { return values_; }
  const Vector& values() const { return values_; }

  Scalar operator[](Index i) const { return values_[i]; }
  Scalar& operator[](Index i) { return values_[i]; }

  Scalar item() const {
    if (values_.size() != 1) {
      throw ShapeError("tensor: item() on tensor of shape " + to_string(shape_));
    }
    return values_[0];
  }

  MatrixMap as_matrix(Index rows, Index cols) {
    return MatrixMap(values_.data(), rows, cols);
  }
  ConstMatrixMap as_matrix(Index rows, Index cols) const {
    return ConstMatrixMap(values_.data(), rows, cols);
  }

  Tensor reshaped(Shape shape) const {
    if (numel(shape) != size()) {
      throw ShapeError("reshape: " + to_string(shape_) + " -> " + to_string(shape));
    }
    Tensor out = *this;
    out.shape_ = std::move(shape);
    return out;
  }

  bool all_finite() const { return values_.allFinite(); }

  template <typename Other>
  Tensor<Other> cast() const {
    return Tensor<Other>(shape_, values_.template cast<Other>());
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.values_ == b.values_;
  }

 private:
  static Vector from_list(std::initializer_list<Scalar> values) {
    Vector v(static_cast<Index>(values.size()));
    Index i = 0;
    for (Scalar x : values) v[i++] = x;
    return v;
  }

  void check_shape() const {
    for (Index d : shape_) {
      if (d < 0) throw ShapeError("tensor: negative dimension in " + to_string(shape_));
    }
  }

  Shape shape_;
  Vector values_;
};

}  // namespace edd
