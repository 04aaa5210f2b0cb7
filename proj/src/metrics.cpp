#include "sing/metrics.hpp"

#include <cmath>

namespace sing {

template <typename Scalar>
double mse(const Tensor<Scalar>& x, const Tensor<Scalar>& y) {
  if (x.shape() != y.shape()) {
    throw ConfigError("mse: shape mismatch " + x.shape().str() + " vs " + y.shape().str());
  }
  const auto diff = x.array().template cast<double>() - y.array().template cast<double>();
  return diff.square().mean();
}

template <typename Scalar>
double psnr(const Tensor<Scalar>& x, const Tensor<Scalar>& y, double max_val) {
  if (!(max_val > 0.0)) throw ConfigError("psnr: max_val must be positive");
  const double err = mse(x, y);
  if (err == 0.0) return kInfinitePsnr;
  return 10.0 * std::log10(max_val * max_val / err);
}

template <typename Scalar>
FeatureDistance<Scalar>::FeatureDistance(std::uint64_t seed, int in_channels,
                                         std::vector<Layer> layers)
    : seed_(seed), source_id_("random-features-v1/seed=" + std::to_string(seed)) {
  Rng rng(seed);
  int channels = in_channels;
  for (const auto& layer : layers) {
    convs_.emplace_back(channels, layer.out_channels, 3, layer.stride, 1, true, rng);
    channels = layer.out_channels;
  }
  layer_weights_.assign(convs_.size(), Scalar(1));
  parameters().set_trainable(false);
}

template <typename Scalar>
std::string FeatureDistance<Scalar>::id() const {
  return source_id_;
}

template <typename Scalar>
std::vector<Var<Scalar>> FeatureDistance<Scalar>::features(const Var<Scalar>& x) const {
  std::vector<Var<Scalar>> out;
  Var<Scalar> h = affine(x, Scalar(2), Scalar(-1));
  for (const auto& conv : convs_) {
    h = relu(conv(h));
    const auto inv_norm = rsqrt(affine(channel_sum(square(h)), Scalar(1), Scalar(1e-10)));
    out.push_back(spatial_scale(h, inv_norm));
  }
  return out;
}

template <typename Scalar>
Var<Scalar> FeatureDistance<Scalar>::distance(const Var<Scalar>& x, const Var<Scalar>& y) const {
  if (x.shape() != y.shape()) {
    throw ConfigError("perceptual distance: shape mismatch " + x.shape().str() + " vs " +
                      y.shape().str());
  }
  const auto fx = features(x);
  const auto fy = features(y);
  Var<Scalar> total;
  for (std::size_t l = 0; l < fx.size(); ++l) {
    const Shape s = fx[l].shape();
    const Scalar norm = layer_weights_[l] / static_cast<Scalar>(s.n * s.h * s.w);
    auto term = scale(sum(square(sub(fx[l], fy[l]))), norm);
    total = l == 0 ? term : add(total, term);
  }
  return total;
}

template <typename Scalar>
ParameterList<Scalar> FeatureDistance<Scalar>::parameters() const {
  ParameterList<Scalar> list;
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    convs_[i].collect(list, "features." + std::to_string(i));
  }
  return list;
}

template <typename Scalar>
void FeatureDistance<Scalar>::load(const typename ParameterList<Scalar>::State& state,
                                   std::string source_id) {
  auto list = parameters();
  list.load(state);
  list.set_trainable(false);
  source_id_ = std::move(source_id);
}

template <typename Scalar>
void FeatureDistance<Scalar>::set_layer_weights(std::vector<Scalar> weights) {
  if (weights.size() != convs_.size()) {
    throw ConfigError("expected " + std::to_string(convs_.size()) + " layer weights");
  }
  for (Scalar w : weights) {
    if (w < Scalar(0)) throw ConfigError("layer weights must be non-negative");
  }
  layer_weights_ = std::move(weights);
}

template <typename Scalar>
double perceptual_distance(const PerceptualBackend<Scalar>& backend, const Tensor<Scalar>& x,
                           const Tensor<Scalar>& y) {
  return static_cast<double>(backend.distance(constant(x), constant(y)).item());
}

#define SING_METRICS_INSTANTIATE(S)                                                     \
  template double mse<S>(const Tensor<S>&, const Tensor<S>&);                           \
  template double psnr<S>(const Tensor<S>&, const Tensor<S>&, double);                  \
  template class FeatureDistance<S>;                                                    \
  template double perceptual_distance<S>(const PerceptualBackend<S>&, const Tensor<S>&, \
                                         const Tensor<S>&);

SING_METRICS_INSTANTIATE(float)
SING_METRICS_INSTANTIATE(double)

#undef SING_METRICS_INSTANTIATE

}  // namespace sing
