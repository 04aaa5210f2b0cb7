#include "sing/degradation.hpp"

#include <algorithm>
#include <vector>

namespace sing {

LinearDegradation LinearDegradation::identity() {
  return {DegradationKind::identity, 1, 0};
}

LinearDegradation LinearDegradation::mean_pool(int scale) {
  if (scale < 1) throw ConfigError("mean_pool scale must be >= 1");
  return {DegradationKind::mean_pool, scale, 0};
}

LinearDegradation LinearDegradation::decolorize(int channels) {
  if (channels < 1) throw ConfigError("decolorize needs at least one channel");
  return {DegradationKind::decolorize, 1, channels};
}

LinearDegradation LinearDegradation::parse(const std::string& kind, int scale) {
  if (kind == "identity") return identity();
  if (kind == "mean_pool") return mean_pool(scale);
  if (kind == "decolorize") return decolorize();
  throw ConfigError("unknown degradation operator '" + kind + "'");
}

std::string LinearDegradation::name() const {
  switch (kind_) {
    case DegradationKind::identity:
      return "identity";
    case DegradationKind::mean_pool:
      return "mean_pool_" + std::to_string(scale_);
    case DegradationKind::decolorize:
      return "decolorize";
  }
  return "unknown";
}

Shape LinearDegradation::measurement_shape(Shape input) const {
  switch (kind_) {
    case DegradationKind::identity:
      return input;
    case DegradationKind::mean_pool:
      if (input.h % scale_ != 0 || input.w % scale_ != 0) {
        throw ConfigError("mean_pool: " + input.str() + " not divisible by " +
                          std::to_string(scale_));
      }
      return {input.n, input.c, input.h / scale_, input.w / scale_};
    case DegradationKind::decolorize:
      if (input.c != channels_) {
        throw ConfigError("decolorize expects " + std::to_string(channels_) + " channels, got " +
                          input.str());
      }
      return {input.n, 1, input.h, input.w};
  }
  return input;
}

Shape LinearDegradation::input_shape(Shape measurement) const {
  switch (kind_) {
    case DegradationKind::identity:
      return measurement;
    case DegradationKind::mean_pool:
      return {measurement.n, measurement.c, measurement.h * scale_, measurement.w * scale_};
    case DegradationKind::decolorize:
      if (measurement.c != 1) throw ConfigError("decolorize measurement must have one channel");
      return {measurement.n, channels_, measurement.h, measurement.w};
  }
  return measurement;
}

Eigen::MatrixXd LinearDegradation::dense(Shape input) const {
  const Shape out = measurement_shape(input);
  Eigen::MatrixXd a(out.numel(), input.numel());
  for (Eigen::Index j = 0; j < input.numel(); ++j) {
    Tensor<double> basis(input);
    basis.array()[j] = 1.0;
    a.col(j) = apply(basis).array().matrix();
  }
  return a;
}

Eigen::MatrixXd LinearDegradation::dense_pinv(Shape input) const {
  const Shape out = measurement_shape(input);
  Eigen::MatrixXd p(input.numel(), out.numel());
  for (Eigen::Index j = 0; j < out.numel(); ++j) {
    Tensor<double> basis(out);
    basis.array()[j] = 1.0;
    p.col(j) = pinv(basis).array().matrix();
  }
  return p;
}

namespace {

/// Indices of the input entries averaged into each measurement entry.
std::vector<std::vector<Eigen::Index>> groups(const LinearDegradation& op, Shape input) {
  const Shape out = op.measurement_shape(input);
  std::vector<std::vector<Eigen::Index>> result(out.numel());
  auto flat = [](Shape s, int n, int c, int y, int x) {
    return ((static_cast<Eigen::Index>(n) * s.c + c) * s.h + y) * s.w + x;
  };
  for (int n = 0; n < input.n; ++n)
    for (int c = 0; c < input.c; ++c)
      for (int y = 0; y < input.h; ++y)
        for (int x = 0; x < input.w; ++x) {
          Eigen::Index j = 0;
          switch (op.kind()) {
            case DegradationKind::identity:
              j = flat(out, n, c, y, x);
              break;
            case DegradationKind::mean_pool:
              j = flat(out, n, c, y / op.scale(), x / op.scale());
              break;
            case DegradationKind::decolorize:
              j = flat(out, n, 0, y, x);
              break;
          }
          result[j].push_back(flat(input, n, c, y, x));
        }
  return result;
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> LinearDegradation::project_box(const Tensor<Scalar>& x, const Tensor<Scalar>& y,
                                              double lo, double hi) const {
  if (measurement_shape(x.shape()) != y.shape()) {
    throw ConfigError("project_box: measurement " + y.shape().str() + " does not match input " +
                      x.shape().str());
  }
  Tensor<Scalar> out = x;
  const auto all_groups = groups(*this, x.shape());
  for (std::size_t j = 0; j < all_groups.size(); ++j) {
    const auto& members = all_groups[j];
    const double target = static_cast<double>(y.array()[static_cast<Eigen::Index>(j)]);
    if (target <= lo || target >= hi) {
      for (Eigen::Index i : members) out.array()[i] = static_cast<Scalar>(target);
      continue;
    }
    const auto count = static_cast<double>(members.size());
    auto mean_at = [&](double shift) {
      double acc = 0.0;
      for (Eigen::Index i : members) {
        acc += std::clamp(static_cast<double>(x.array()[i]) - shift, lo, hi);
      }
      return acc / count;
    };
    double vmin = static_cast<double>(x.array()[members.front()]);
    double vmax = vmin;
    for (Eigen::Index i : members) {
      vmin = std::min(vmin, static_cast<double>(x.array()[i]));
      vmax = std::max(vmax, static_cast<double>(x.array()[i]));
    }
    double shift_lo = vmin - hi;  // mean_at == hi
    double shift_hi = vmax - lo;  // mean_at == lo
    for (int iter = 0; iter < 100 && shift_hi - shift_lo > 1e-14; ++iter) {
      const double mid = 0.5 * (shift_lo + shift_hi);
      (mean_at(mid) > target ? shift_lo : shift_hi) = mid;
    }
    const double shift = 0.5 * (shift_lo + shift_hi);
    for (Eigen::Index i : members) {
      out.array()[i] =
          static_cast<Scalar>(std::clamp(static_cast<double>(x.array()[i]) - shift, lo, hi));
    }
  }
  return out;
}

template Tensor<float> LinearDegradation::project_box<float>(const Tensor<float>&,
                                                             const Tensor<float>&, double,
                                                             double) const;
template Tensor<double> LinearDegradation::project_box<double>(const Tensor<double>&,
                                                               const Tensor<double>&, double,
                                                               double) const;

}  // namespace sing
