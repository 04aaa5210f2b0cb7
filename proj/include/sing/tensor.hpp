#pragma once

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace sing {

/// NCHW extent of a dense tensor. Images carry n == 1.
struct Shape {
  int n = 1;
  int c = 1;
  int h = 1;
  int w = 1;

  [[nodiscard]] Eigen::Index numel() const {
    return static_cast<Eigen::Index>(n) * c * h * w;
  }
  [[nodiscard]] Eigen::Index plane() const { return static_cast<Eigen::Index>(h) * w; }
  [[nodiscard]] Eigen::Index sample() const { return static_cast<Eigen::Index>(c) * h * w; }
  [[nodiscard]] std::string str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
           std::to_string(w) + ")";
  }
  friend bool operator==(const Shape&, const Shape&) = default;
};

/// Raised when shapes or configuration values are incompatible.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

template <typename Scalar>
class Tensor {
 public:
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
  using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MatrixMap = Eigen::Map<RowMatrix>;
  using ConstMatrixMap = Eigen::Map<const RowMatrix>;

  Tensor() = default;
  explicit Tensor(Shape shape) : shape_(shape), data_(Array::Zero(shape.numel())) {}
  Tensor(Shape shape, Array data) : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape_.numel()) {
      throw ConfigError("tensor data size does not match shape " + shape_.str());
    }
  }

  static Tensor zeros(Shape shape) { return Tensor(shape); }
  static Tensor constant(Shape shape, Scalar value) {
    return Tensor(shape, Array::Constant(shape.numel(), value));
  }
  template <typename Rng>
  static Tensor randn(Shape shape, Rng& rng, Scalar stddev = Scalar(1)) {
    std::normal_distribution<Scalar> normal(Scalar(0), stddev);
    Tensor out(shape);
    for (Eigen::Index i = 0; i < out.data_.size(); ++i) out.data_[i] = normal(rng);
    return out;
  }
  template <typename Rng>
  static Tensor uniform(Shape shape, Rng& rng, Scalar lo, Scalar hi) {
    std::uniform_real_distribution<Scalar> dist(lo, hi);
    Tensor out(shape);
    for (Eigen::Index i = 0; i < out.data_.size(); ++i) out.data_[i] = dist(rng);
    return out;
  }

  [[nodiscard]] const Shape& shape() const { return shape_; }
  [[nodiscard]] Eigen::Index size() const { return data_.size(); }
  [[nodiscard]] bool empty() const { return data_.size() == 0; }
  [[nodiscard]] Array& array() { return data_; }
  [[nodiscard]] const Array& array() const { return data_; }
  [[nodiscard]] Scalar* data() { return data_.data(); }
  [[nodiscard]] const Scalar* data() const { return data_.data(); }

  [[nodiscard]] Eigen::Index index(int n, int c, int h, int w) const {
    return ((static_cast<Eigen::Index>(n) * shape_.c + c) * shape_.h + h) * shape_.w + w;
  }
  Scalar& operator()(int n, int c, int h, int w) { return data_[index(n, c, h, w)]; }
  Scalar operator()(int n, int c, int h, int w) const { return data_[index(n, c, h, w)]; }

  /// Sample `n` viewed as a (C, H*W) row-major matrix.
  [[nodiscard]] MatrixMap sample_matrix(int n) {
    return MatrixMap(data_.data() + n * shape_.sample(), shape_.c, shape_.plane());
  }
  [[nodiscard]] ConstMatrixMap sample_matrix(int n) const {
    return ConstMatrixMap(data_.data() + n * shape_.sample(), shape_.c, shape_.plane());
  }

  [[nodiscard]] Tensor reshaped(Shape shape) const {
    if (shape.numel() != shape_.numel()) {
      throw ConfigError("cannot reshape " + shape_.str() + " to " + shape.str());
    }
    return Tensor(shape, data_);
  }

  /// Copies sample `n` out as a single-sample tensor.
  [[nodiscard]] Tensor sample(int n) const {
    Shape s = shape_;
    s.n = 1;
    return Tensor(s, data_.segment(n * shape_.sample(), shape_.sample()));
  }

  template <typename Other>
  [[nodiscard]] Tensor<Other> cast() const {
    return Tensor<Other>(shape_, data_.template cast<Other>());
  }

 private:
  Shape shape_{0, 0, 0, 0};
  Array data_;
};

/// Stacks single-sample tensors of identical shape along the batch axis.
template <typename Scalar>
Tensor<Scalar> stack(const std::vector<Tensor<Scalar>>& items) {
  if (items.empty()) throw ConfigError("cannot stack an empty batch");
  Shape s = items.front().shape();
  s.n = 0;
  for (const auto& t : items) s.n += t.shape().n;
  Tensor<Scalar> out(s);
  Eigen::Index offset = 0;
  for (const auto& t : items) {
    if (t.shape().c != s.c || t.shape().h != s.h || t.shape().w != s.w) {
      throw ConfigError("stack: mismatched shapes " + t.shape().str());
    }
    out.array().segment(offset, t.size()) = t.array();
    offset += t.size();
  }
  return out;
}

template <typename Scalar>
Scalar max_abs_diff(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.shape() != b.shape()) {
    throw ConfigError("shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  }
  if (a.size() == 0) return Scalar(0);
  return (a.array() - b.array()).abs().maxCoeff();
}

}  // namespace sing
