#pragma once

#include "sing/layers.hpp"

#include <cstdint>
#include <limits>
#include <memory>
#include <string>
#include <vector>

namespace sing {

/// PSNR reported for identical inputs.
inline constexpr double kInfinitePsnr = std::numeric_limits<double>::infinity();

template <typename Scalar>
[[nodiscard]] double mse(const Tensor<Scalar>& x, const Tensor<Scalar>& y);

/// 10 log10(max_val^2 / MSE); kInfinitePsnr when MSE is zero.
template <typename Scalar>
[[nodiscard]] double psnr(const Tensor<Scalar>& x, const Tensor<Scalar>& y, double max_val = 1.0);

/// Deep-feature image distance. Implementations must be non-negative,
/// symmetric and zero on identical inputs. Inputs are images in [0, 1];
/// the result is averaged over the batch.
template <typename Scalar>
class PerceptualBackend {
 public:
  virtual ~PerceptualBackend() = default;
  [[nodiscard]] virtual std::string id() const = 0;
  [[nodiscard]] virtual Var<Scalar> distance(const Var<Scalar>& x, const Var<Scalar>& y) const = 0;
};

/// Multi-scale convolutional feature distance in the style of LPIPS: features
/// are unit-normalized along channels at every location, squared differences
/// are averaged spatially and summed over layers with per-layer weights.
///
/// The default construction draws the extractor from a fixed seed. Pretrained
/// weights (same layer layout) can be installed with load().
template <typename Scalar>
class FeatureDistance final : public PerceptualBackend<Scalar> {
 public:
  struct Layer {
    int out_channels;
    int stride;
  };

  explicit FeatureDistance(std::uint64_t seed = 1234, int in_channels = 3,
                           std::vector<Layer> layers = default_layers());

  [[nodiscard]] static std::vector<Layer> default_layers() { return {{16, 1}, {32, 2}, {64, 2}}; }

  [[nodiscard]] std::string id() const override;
  [[nodiscard]] Var<Scalar> distance(const Var<Scalar>& x, const Var<Scalar>& y) const override;

  /// Channel-normalized feature maps of every layer.
  [[nodiscard]] std::vector<Var<Scalar>> features(const Var<Scalar>& x) const;

  [[nodiscard]] ParameterList<Scalar> parameters() const;
  void load(const typename ParameterList<Scalar>::State& state, std::string source_id);

  void set_layer_weights(std::vector<Scalar> weights);
  [[nodiscard]] const std::vector<Scalar>& layer_weights() const { return layer_weights_; }

 private:
  std::uint64_t seed_;
  std::string source_id_;
  std::vector<Conv2d<Scalar>> convs_;
  std::vector<Scalar> layer_weights_;
};

template <typename Scalar>
[[nodiscard]] double perceptual_distance(const PerceptualBackend<Scalar>& backend,
                                         const Tensor<Scalar>& x, const Tensor<Scalar>& y);

/// One scored reconstruction.
struct MetricsRecord {
  double psnr_db = 0.0;
  double perceptual = 0.0;
  double snr_db = 0.0;
  double bcr = 0.0;
  std::string method;
  std::uint64_t seed = 0;
};

}  // namespace sing
