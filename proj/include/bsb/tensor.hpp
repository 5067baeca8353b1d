#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "bsb/error.hpp"

namespace bsb {

using Shape = std::vector<std::size_t>;
using Rng = std::mt19937_64;

template <typename Scalar>
using RowMatrix =
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

// Dense row-major n-dimensional array. The leading dimension is the batch
// dimension wherever a tensor holds several samples.
template <typename Scalar>
class BasicTensor {
 public:
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using VectorMap = Eigen::Map<Vector>;
  using ConstVectorMap = Eigen::Map<const Vector>;
  using MatrixMap = Eigen::Map<RowMatrix<Scalar>>;
  using ConstMatrixMap = Eigen::Map<const RowMatrix<Scalar>>;

  BasicTensor() = default;

  explicit BasicTensor(Shape shape)
      : shape_(std::move(shape)),
        data_(Vector::Zero(static_cast<Eigen::Index>(shape_size(shape_)))) {}

  BasicTensor(Shape shape, Vector data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_size(shape_) != static_cast<std::size_t>(data_.size())) {
      throw DimensionError("tensor shape " + shape_string(shape_) +
                           " does not match " +
                           std::to_string(data_.size()) + " elements");
    }
  }

  static BasicTensor filled(Shape shape, Scalar value) {
    BasicTensor t(std::move(shape));
    t.data_.setConstant(value);
    return t;
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return static_cast<std::size_t>(data_.size()); }
  bool empty() const { return data_.size() == 0; }

  Vector& data() { return data_; }
  const Vector& data() const { return data_; }
  Scalar* raw() { return data_.data(); }
  const Scalar* raw() const { return data_.data(); }

  Scalar& operator[](std::size_t i) { return data_[static_cast<Eigen::Index>(i)]; }
  Scalar operator[](std::size_t i) const { return data_[static_cast<Eigen::Index>(i)]; }

  // Number of samples along the leading dimension.
  std::size_t batch() const { return shape_.empty() ? 0 : shape_[0]; }
  // Elements per sample (product of the trailing dimensions).
  std::size_t sample_size() const {
    return shape_.empty() ? 0 : size() / shape_[0];
  }
  Shape sample_shape() const {
    return shape_.empty() ? Shape{} : Shape(shape_.begin() + 1, shape_.end());
  }

  VectorMap sample(std::size_t i) {
    const auto m = sample_size();
    return VectorMap(raw() + i * m, static_cast<Eigen::Index>(m));
  }
  ConstVectorMap sample(std::size_t i) const {
    const auto m = sample_size();
    return ConstVectorMap(raw() + i * m, static_cast<Eigen::Index>(m));
  }

  // Copy of sample i, shaped [1, ...].
  BasicTensor sample_tensor(std::size_t i) const {
    Shape s = shape_;
    s[0] = 1;
    return BasicTensor(std::move(s), Vector(sample(i)));
  }

  // Views the tensor as a row-major matrix; the leading dimension becomes
  // the rows.
  MatrixMap matrix() {
    return MatrixMap(raw(), static_cast<Eigen::Index>(batch()),
                     static_cast<Eigen::Index>(sample_size()));
  }
  ConstMatrixMap matrix() const {
    return ConstMatrixMap(raw(), static_cast<Eigen::Index>(batch()),
                          static_cast<Eigen::Index>(sample_size()));
  }

  BasicTensor reshaped(Shape shape) const {
    return BasicTensor(std::move(shape), data_);
  }

  bool all_finite() const { return data_.allFinite(); }

  friend bool operator==(const BasicTensor& a, const BasicTensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  Vector data_;
};

using Tensor = BasicTensor<double>;

template <typename Scalar>
Scalar l2_distance(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
  return (a.data() - b.data()).norm();
}

template <typename Scalar>
Scalar linf_distance(const BasicTensor<Scalar>& a,
                     const BasicTensor<Scalar>& b) {
  if (a.size() == 0) return Scalar(0);
  return (a.data() - b.data()).cwiseAbs().maxCoeff();
}

// Stacks equally shaped single-sample tensors ([1, ...] or [...]) into one
// batch tensor.
template <typename Scalar>
BasicTensor<Scalar> stack(const std::vector<BasicTensor<Scalar>>& samples,
                          const Shape& sample_shape) {
  const auto m = shape_size(sample_shape);
  Shape s{samples.size()};
  s.insert(s.end(), sample_shape.begin(), sample_shape.end());
  BasicTensor<Scalar> out(std::move(s));
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].size() != m) {
      throw DimensionError("stack: sample " + std::to_string(i) +
                           " has shape " + shape_string(samples[i].shape()));
    }
    out.sample(i) = samples[i].data();
  }
  return out;
}

// Gaussian tensor with i.i.d. standard-normal entries.
template <typename Scalar = double>
BasicTensor<Scalar> standard_normal(Shape shape, Rng& rng) {
  BasicTensor<Scalar> t(std::move(shape));
  std::normal_distribution<Scalar> dist(Scalar(0), Scalar(1));
  for (auto& v : t.data()) v = dist(rng);
  return t;
}

template <typename Scalar = double>
BasicTensor<Scalar> uniform(Shape shape, Scalar lo, Scalar hi, Rng& rng) {
  BasicTensor<Scalar> t(std::move(shape));
  std::uniform_real_distribution<Scalar> dist(lo, hi);
  for (auto& v : t.data()) v = dist(rng);
  return t;
}

// Row-wise softmax of a [n, k] logit matrix, max-subtracted for stability.
template <typename Derived>
RowMatrix<typename Derived::Scalar> softmax_rows(
    const Eigen::MatrixBase<Derived>& logits) {
  using Scalar = typename Derived::Scalar;
  RowMatrix<Scalar> out = logits;
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    row.array() -= row.maxCoeff();
    row = row.array().exp().matrix();
    row /= row.sum();
  }
  return out;
}

template <typename Scalar>
BasicTensor<Scalar> softmax(const BasicTensor<Scalar>& logits) {
  RowMatrix<Scalar> p = softmax_rows(logits.matrix());
  return BasicTensor<Scalar>(
      logits.shape(),
      Eigen::Map<typename BasicTensor<Scalar>::Vector>(p.data(), p.size()));
}

// Index of the largest entry; ties resolve to the lowest index.
template <typename Derived>
std::size_t argmax(const Eigen::DenseBase<Derived>& v) {
  std::size_t best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i) {
    if (v(i) > v(static_cast<Eigen::Index>(best))) best = static_cast<std::size_t>(i);
  }
  return best;
}

}  // namespace bsb
