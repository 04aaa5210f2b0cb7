#pragma once

#include "sing/degradation.hpp"
#include "sing/diffusion.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace sing {

/// eps(x_t, t) as called by the samplers; t is the model timestep. The
/// samplers differentiate through it when x_t requires grad.
template <typename Scalar>
using NoisePredictor = std::function<Var<Scalar>(const Var<Scalar>& x_t, int t)>;

template <typename Scalar>
[[nodiscard]] NoisePredictor<Scalar> noise_predictor(const Denoiser<Scalar>& model) {
  return [&model](const Var<Scalar>& x_t, int t) {
    return model(x_t, std::vector<int>(x_t.shape().n, t));
  };
}

struct SingZeroConfig {
  std::uint64_t seed = 0;
  /// Number of sampling steps; 0 means the full schedule.
  int t_effective = 0;
};

struct SamplerStats {
  int steps = 0;
  int denoiser_evals = 0;
  int inn_forward = 0;
  int inn_inverse = 0;
  /// max over steps of ||A x0_hat - y||_inf for the rectified estimate.
  double max_rectified_residual = 0.0;
  /// max over steps of ||forward(x_tilde).coarse - y||_inf (SING-INN, when verified).
  double max_lifting_error = 0.0;
  std::vector<std::string> warnings;
};

template <typename Scalar>
struct Restoration {
  /// Final sample in [0, 1] image space, not clamped.
  Tensor<Scalar> image;
  /// Unrectified denoiser estimate of x_0 at the last step, image space.
  Tensor<Scalar> last_prediction;
  SamplerStats stats;
};

/// Lines 4-6 of one null-space sampling step at sampler index t.
template <typename Scalar>
struct NullSpaceStep {
  Var<Scalar> prediction;  // x_{0,t}
  Var<Scalar> rectified;   // x0_hat: A x0_hat = y
  Var<Scalar> next;        // x_hat_{t-1}
};

/// All quantities in [-1, 1] model space. With `detach_eps` the noise
/// estimate is treated as a constant of x_t.
template <typename Scalar>
[[nodiscard]] NullSpaceStep<Scalar> null_space_step(const NoisePredictor<Scalar>& eps,
                                                    const LinearDegradation& op,
                                                    const NoiseSchedule& schedule,
                                                    const Var<Scalar>& x_t, int t,
                                                    const Var<Scalar>& y_model,
                                                    const Tensor<Scalar>& z,
                                                    bool detach_eps = false);

/// Schedule actually run for a requested number of steps (0 = all).
[[nodiscard]] NoiseSchedule sampling_schedule(const NoiseSchedule& schedule, int t_effective);

/// Zero-shot restoration of a measurement y (in [0, 1], shape A x) by
/// null-space diffusion sampling. The final step uses z = 0 so A(image) = y.
template <typename Scalar>
[[nodiscard]] Restoration<Scalar> restore(const Tensor<Scalar>& y, const NoisePredictor<Scalar>& eps,
                                          const LinearDegradation& op,
                                          const NoiseSchedule& schedule,
                                          const SingZeroConfig& config);

/// Checks the denoiser's channel count against y before sampling.
template <typename Scalar>
[[nodiscard]] Restoration<Scalar> restore(const Tensor<Scalar>& y, const Denoiser<Scalar>& model,
                                          const LinearDegradation& op,
                                          const NoiseSchedule& schedule,
                                          const SingZeroConfig& config);

}  // namespace sing
