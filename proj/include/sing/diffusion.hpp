#pragma once

#include "sing/layers.hpp"

#include <cstdint>
#include <vector>

namespace sing {

/// Variance schedule beta_1..beta_T with the derived alpha_t, alpha_bar_t and
/// sigma_t. Indices are 1-based; alpha_bar(0) == 1.
///
/// A respaced schedule runs over a subsequence of the training timesteps; the
/// denoiser is then queried at model_timestep(t) rather than t.
class NoiseSchedule {
 public:
  static constexpr int kDefaultSteps = 1000;

  static NoiseSchedule linear(int steps = kDefaultSteps, double beta_start = 1e-4,
                              double beta_end = 0.02);
  static NoiseSchedule from_betas(std::vector<double> betas, std::vector<int> model_timesteps = {});

  /// Keeps `steps` evenly spaced timesteps of this schedule, recomputing
  /// beta so that alpha_bar is preserved at the kept timesteps.
  [[nodiscard]] NoiseSchedule respaced(int steps) const;

  [[nodiscard]] int steps() const { return static_cast<int>(betas_.size()) - 1; }
  [[nodiscard]] double beta(int t) const { return betas_.at(check(t)); }
  [[nodiscard]] double alpha(int t) const { return 1.0 - betas_.at(check(t)); }
  [[nodiscard]] double alpha_bar(int t) const;
  /// sqrt((1 - alpha_bar_{t-1}) / (1 - alpha_bar_t) * beta_t).
  [[nodiscard]] double sigma(int t) const;
  /// Weight on x_t in the posterior mean.
  [[nodiscard]] double posterior_coef_xt(int t) const;
  /// Weight on the x_0 estimate in the posterior mean.
  [[nodiscard]] double posterior_coef_x0(int t) const;
  [[nodiscard]] int model_timestep(int t) const { return model_steps_.at(check(t)); }
  [[nodiscard]] const std::vector<double>& betas() const { return betas_; }

 private:
  [[nodiscard]] std::size_t check(int t) const;

  std::vector<double> betas_;      // index 0 unused
  std::vector<double> alpha_bar_;  // index 0 == 1
  std::vector<int> model_steps_;
};

/// Images live in [0, 1] outside the diffusion module and in [-1, 1] inside.
template <typename Scalar>
[[nodiscard]] Var<Scalar> to_model_space(const Var<Scalar>& x) {
  return affine(x, Scalar(2), Scalar(-1));
}
template <typename Scalar>
[[nodiscard]] Var<Scalar> to_image_space(const Var<Scalar>& x) {
  return affine(x, Scalar(0.5), Scalar(0.5));
}

struct DenoiserConfig {
  int channels = 3;
  int width = 32;
  int time_dim = 32;
  /// Scale of the output convolution at initialization; 0 gives a model that
  /// predicts zero noise until trained.
  double output_gain = 0.0;
};

/// Residual convolutional noise predictor eps_theta(x_t, t) with a sinusoidal
/// timestep embedding. One stride-2 level; H and W must be even.
template <typename Scalar>
class Denoiser {
 public:
  Denoiser(DenoiserConfig config, std::uint64_t seed);

  [[nodiscard]] Var<Scalar> operator()(const Var<Scalar>& x_t, const std::vector<int>& t) const;

  [[nodiscard]] const DenoiserConfig& config() const { return config_; }
  [[nodiscard]] ParameterList<Scalar> parameters() const;

 private:
  struct ResBlock {
    Conv2d<Scalar> conv1;
    Conv2d<Scalar> conv2;
    Linear<Scalar> time;
  };

  [[nodiscard]] Var<Scalar> residual(const ResBlock& block, const Var<Scalar>& h,
                                     const Var<Scalar>& temb) const;

  DenoiserConfig config_;
  Linear<Scalar> time_in_;
  Conv2d<Scalar> conv_in_;
  ResBlock high_in_;
  Conv2d<Scalar> down_;
  ResBlock low_a_;
  ResBlock low_b_;
  ConvTranspose2d<Scalar> up_;
  ResBlock high_out_;
  Conv2d<Scalar> conv_out_;
};

/// Sinusoidal embedding of integer timesteps, shape (N, dim, 1, 1).
template <typename Scalar>
[[nodiscard]] Tensor<Scalar> timestep_embedding(const std::vector<int>& t, int dim);

/// x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps. Throws std::out_of_range for t outside [1, T].
template <typename Scalar>
[[nodiscard]] Tensor<Scalar> forward_sample(const Tensor<Scalar>& x0, int t,
                                            const Tensor<Scalar>& eps,
                                            const NoiseSchedule& schedule);

/// Inverts the forward marginal at a noise estimate:
/// (x_t - sqrt(1 - alpha_bar_t) eps) / sqrt(alpha_bar_t).
template <typename Scalar>
[[nodiscard]] Var<Scalar> predict_x0_from_eps(const Var<Scalar>& x_t, const Var<Scalar>& eps, int t,
                                              const NoiseSchedule& schedule);

/// predict_x0_from_eps at eps = model(x_t, t).
template <typename Scalar>
[[nodiscard]] Var<Scalar> predict_x0(const Denoiser<Scalar>& model, const Var<Scalar>& x_t, int t,
                                     const NoiseSchedule& schedule);

/// Ancestral step: c_xt x_t + c_x0 x0_hat + sigma_t z.
template <typename Scalar>
[[nodiscard]] Var<Scalar> posterior_step(const Var<Scalar>& x_t, const Var<Scalar>& x0_hat, int t,
                                         const Var<Scalar>& z, const NoiseSchedule& schedule);

/// Trains a denoiser on the noise-prediction objective.
template <typename Scalar>
class DiffusionTrainer {
 public:
  DiffusionTrainer(Denoiser<Scalar>& model, NoiseSchedule schedule, double learning_rate,
                   std::uint64_t seed);

  /// One gradient update on a batch of [0, 1] images. Returns the mean
  /// squared noise-prediction error per element before the update.
  double train_step(const Tensor<Scalar>& batch);

  [[nodiscard]] const NoiseSchedule& schedule() const { return schedule_; }

 private:
  Denoiser<Scalar>& model_;
  NoiseSchedule schedule_;
  Adam<Scalar> optimizer_;
  Rng rng_;
};

/// Unconditional ancestral sampling from x_T ~ N(0, I); returns an image in
/// [0, 1] space (unclamped). `evaluations` receives the denoiser call count.
template <typename Scalar>
[[nodiscard]] Tensor<Scalar> sample(const Denoiser<Scalar>& model, const NoiseSchedule& schedule,
                                    Shape shape, std::uint64_t seed, int* evaluations = nullptr);

}  // namespace sing
