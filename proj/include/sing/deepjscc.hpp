#pragma once

#include "sing/channel.hpp"
#include "sing/layers.hpp"
#include "sing/metrics.hpp"

#include <cstdint>
#include <functional>
#include <vector>

namespace sing {

struct JsccConfig {
  int height = 64;
  int width = 64;
  int channels = 3;
  /// Channel uses per source sample.
  double bcr = 0.0052;
  /// Feature width of every convolutional stage.
  int filters = 32;
  /// Number of stride-2 stages; H and W must be divisible by 2^stages.
  int stages = 3;
  double lambda_perceptual = 1.0;
  double avg_power = channel::kDefaultAvgPower;
  /// Feed snr_db / 10 to the decoder as an extra input feature.
  bool snr_side_input = false;

  [[nodiscard]] int source_dim() const { return height * width * channels; }
  /// k = floor(bcr * H * W * C).
  [[nodiscard]] int channel_uses() const;
  [[nodiscard]] Shape image_shape(int batch = 1) const { return {batch, channels, height, width}; }
  void validate() const;
};

struct JsccTrainOptions {
  double snr_low_db = -5.0;
  double snr_high_db = 5.0;
  int steps = 1000;
  int batch_size = 32;
  double learning_rate = 1e-4;
  std::uint64_t seed = 0;
};

/// Per-step record of a training run.
struct JsccTrainingLog {
  std::vector<double> loss;
  std::vector<double> snr_db;
  std::vector<double> sigma_sq;
};

/// Strided convolutional encoder with GDN and a final affine projection to 2k
/// reals; mirrored transposed-convolution decoder with inverse GDN.
template <typename Scalar>
class JsccModel {
 public:
  JsccModel(JsccConfig config, std::uint64_t seed);

  [[nodiscard]] const JsccConfig& config() const { return config_; }

  /// Power-normalized channel input as packed reals, shape (N, 2k, 1, 1).
  [[nodiscard]] Var<Scalar> encode_symbols(const Var<Scalar>& images) const;
  /// Reconstruction in (0, 1) from packed noisy symbols. `snr_db` holds one value per sample.
  [[nodiscard]] Var<Scalar> decode_symbols(const Var<Scalar>& symbols,
                                           const std::vector<double>& snr_db) const;

  [[nodiscard]] ParameterList<Scalar> parameters() const;

  JsccTrainingLog log;
  double trained_snr_low_db = 0.0;
  double trained_snr_high_db = 0.0;

 private:
  JsccConfig config_;
  std::vector<Conv2d<Scalar>> enc_convs_;
  std::vector<Gdn<Scalar>> enc_gdn_;
  Linear<Scalar> enc_project_;
  Linear<Scalar> dec_project_;
  std::vector<Gdn<Scalar>> dec_igdn_;
  std::vector<ConvTranspose2d<Scalar>> dec_convs_;
};

template <typename Scalar>
[[nodiscard]] channel::ChannelVector<Scalar> encode(const JsccModel<Scalar>& model,
                                                    const Tensor<Scalar>& image);

template <typename Scalar>
[[nodiscard]] Tensor<Scalar> decode(const JsccModel<Scalar>& model,
                                    const channel::ChannelVector<Scalar>& z_hat, double snr_db);

/// Full chain: encode, AWGN at snr_db with the given seed, decode.
template <typename Scalar>
[[nodiscard]] Tensor<Scalar> transmit(const JsccModel<Scalar>& model, const Tensor<Scalar>& image,
                                      double snr_db, std::uint64_t seed);

/// MSE(x_hat, x) + lambda * perceptual(x_hat, x).
template <typename Scalar>
[[nodiscard]] Var<Scalar> composite_loss(const Var<Scalar>& x_hat, const Var<Scalar>& x,
                                         double lambda, const PerceptualBackend<Scalar>& perceptual);

using JsccStepCallback = std::function<void(int step, double loss, double snr_db)>;

/// Trains a fresh model end-to-end through the simulated channel. Each batch
/// draws its own SNR uniformly from [snr_low, snr_high] and fresh noise.
template <typename Scalar>
[[nodiscard]] JsccModel<Scalar> train(const JsccConfig& config,
                                      const std::vector<Tensor<Scalar>>& dataset,
                                      const JsccTrainOptions& options,
                                      const PerceptualBackend<Scalar>& perceptual,
                                      const JsccStepCallback& on_step = {});

}  // namespace sing
