#pragma once

#include "sing/autograd.hpp"

#include <Eigen/Core>

#include <string>

namespace sing {

enum class DegradationKind { identity, mean_pool, decolorize };

/// Matrix-free linear operator A with a right inverse A_dagger (A A_dagger = I).
///
/// Every supported operator averages disjoint groups of input entries:
/// mean_pool averages s x s blocks per channel, decolorize averages the
/// channels of each pixel. A_dagger replicates each measurement over its
/// group, so A_dagger A is the orthogonal projection onto group-constant
/// images.
class LinearDegradation {
 public:
  static LinearDegradation identity();
  static LinearDegradation mean_pool(int scale);
  static LinearDegradation decolorize(int channels = 3);
  /// "identity", "mean_pool" or "decolorize".
  static LinearDegradation parse(const std::string& kind, int scale);

  [[nodiscard]] DegradationKind kind() const { return kind_; }
  [[nodiscard]] int scale() const { return scale_; }
  [[nodiscard]] std::string name() const;

  /// Shape of A x for an input of shape `input`. Throws ConfigError when incompatible.
  [[nodiscard]] Shape measurement_shape(Shape input) const;
  /// Full-resolution shape whose measurement has shape `measurement`.
  [[nodiscard]] Shape input_shape(Shape measurement) const;

  template <typename Scalar>
  [[nodiscard]] Var<Scalar> apply(const Var<Scalar>& x) const {
    static_cast<void>(measurement_shape(x.shape()));
    switch (kind_) {
      case DegradationKind::identity:
        return x;
      case DegradationKind::mean_pool:
        return sing::mean_pool(x, scale_);
      case DegradationKind::decolorize:
        return sing::scale(channel_sum(x), Scalar(1) / static_cast<Scalar>(channels_));
    }
    return x;
  }

  template <typename Scalar>
  [[nodiscard]] Var<Scalar> pinv(const Var<Scalar>& y) const {
    switch (kind_) {
      case DegradationKind::identity:
        return y;
      case DegradationKind::mean_pool:
        return upsample_replicate(y, scale_);
      case DegradationKind::decolorize:
        return replicate_channels(y, channels_);
    }
    return y;
  }

  /// x - A_dagger (A x - y): the closest point to x satisfying A x = y.
  template <typename Scalar>
  [[nodiscard]] Var<Scalar> rectify(const Var<Scalar>& x, const Var<Scalar>& y) const {
    return sub(x, pinv(sub(apply(x), y)));
  }

  template <typename Scalar>
  [[nodiscard]] Tensor<Scalar> apply(const Tensor<Scalar>& x) const {
    return apply(constant(x)).value();
  }
  template <typename Scalar>
  [[nodiscard]] Tensor<Scalar> pinv(const Tensor<Scalar>& y) const {
    return pinv(constant(y)).value();
  }

  /// Dense matrix of A for inputs of shape `input` (oracle scale only).
  [[nodiscard]] Eigen::MatrixXd dense(Shape input) const;
  /// Dense matrix of A_dagger for inputs of shape `input`.
  [[nodiscard]] Eigen::MatrixXd dense_pinv(Shape input) const;

  /// Euclidean projection of x onto {v : A v = y, lo <= v <= hi}, solved
  /// group by group. If y itself lies outside [lo, hi] the group is set to
  /// y, keeping A v = y.
  template <typename Scalar>
  [[nodiscard]] Tensor<Scalar> project_box(const Tensor<Scalar>& x, const Tensor<Scalar>& y,
                                           double lo = 0.0, double hi = 1.0) const;

 private:
  LinearDegradation(DegradationKind kind, int scale, int channels)
      : kind_(kind), scale_(scale), channels_(channels) {}

  DegradationKind kind_;
  int scale_;
  int channels_;
};

/// Block mean per channel. Throws ConfigError when H or W is not divisible by s.
template <typename Scalar>
[[nodiscard]] Tensor<Scalar> mean_pool(const Tensor<Scalar>& x, int s) {
  return mean_pool(constant(x), s).value();
}

/// Replicates each pixel into an s x s block; right inverse of mean_pool.
template <typename Scalar>
[[nodiscard]] Tensor<Scalar> pinv_replicate(const Tensor<Scalar>& y, int s) {
  return upsample_replicate(constant(y), s).value();
}

template <typename Scalar>
struct RangeNullParts {
  Tensor<Scalar> range;  // A_dagger A x
  Tensor<Scalar> null;   // x - A_dagger A x
};

template <typename Scalar>
[[nodiscard]] RangeNullParts<Scalar> range_null_project(const Tensor<Scalar>& x,
                                                        const LinearDegradation& op) {
  Tensor<Scalar> range = op.pinv(op.apply(x));
  Tensor<Scalar> null(x.shape(), x.array() - range.array());
  return {std::move(range), std::move(null)};
}

/// The measurement y = A x_dec anchoring both restoration samplers.
template <typename Scalar>
[[nodiscard]] Tensor<Scalar> measurement_from_decoder(const Tensor<Scalar>& x_dec,
                                                      const LinearDegradation& op) {
  return op.apply(x_dec);
}

}  // namespace sing
