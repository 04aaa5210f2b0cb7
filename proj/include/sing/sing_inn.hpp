#pragma once

#include "sing/cond_inn.hpp"
#include "sing/sing_zero.hpp"

#include <cstdint>

namespace sing {

enum class GuidanceMode {
  full,           // differentiate through the denoiser as well
  stop_gradient,  // treat the noise estimate as constant in x_t
};

[[nodiscard]] GuidanceMode parse_guidance_mode(const std::string& name);
[[nodiscard]] std::string to_string(GuidanceMode mode);

enum class GuidanceScaling {
  raw,         // x -= zeta * grad
  normalized,  // x -= zeta * grad / ||x_tilde_0 - x0_hat||
};

[[nodiscard]] GuidanceScaling parse_guidance_scaling(const std::string& name);
[[nodiscard]] std::string to_string(GuidanceScaling scaling);

struct SingInnConfig {
  std::uint64_t seed = 0;
  int t_effective = 0;
  double snr_db = 0.0;
  double zeta = 0.0;
  GuidanceMode mode = GuidanceMode::full;
  GuidanceScaling scaling = GuidanceScaling::raw;
  /// Runs an extra INN forward per step to measure lifting exactness; the
  /// extra call is not counted in the stats.
  bool verify_lifting = false;

  void validate() const;
};

/// Step size used for a channel SNR: 0.3 up to -2 dB, 0.4 up to 2 dB, 0.5 above.
[[nodiscard]] double zeta_schedule(double snr_db);

template <typename Scalar>
struct GuidanceResult {
  NullSpaceStep<Scalar> step;
  Var<Scalar> inn_estimate;  // x_tilde_0 in model space
  double objective = 0.0;    // ||x_tilde_0 - x0_hat||^2
  Tensor<Scalar> gradient;   // d objective / d x_t
};

/// One SING-INN step at sampler index t without the final update; x_t,
/// y_model and the result are in model space. The gradient is computed only
/// when `with_gradient` is set.
template <typename Scalar>
[[nodiscard]] GuidanceResult<Scalar> guidance_step(const NoisePredictor<Scalar>& eps,
                                                   const CondInn<Scalar>& inn,
                                                   const LinearDegradation& op,
                                                   const NoiseSchedule& schedule,
                                                   const Tensor<Scalar>& x_t, int t,
                                                   const Tensor<Scalar>& y, const Tensor<Scalar>& z,
                                                   double snr_db, GuidanceMode mode,
                                                   bool with_gradient);

/// Null-space sampling with INN guidance. With zeta = 0 the result matches
/// restore() bit for bit under the same seed.
template <typename Scalar>
[[nodiscard]] Restoration<Scalar> restore_inn(const Tensor<Scalar>& y,
                                              const NoisePredictor<Scalar>& eps,
                                              const CondInn<Scalar>& inn,
                                              const LinearDegradation& op,
                                              const NoiseSchedule& schedule,
                                              const SingInnConfig& config);

template <typename Scalar>
[[nodiscard]] Restoration<Scalar> restore_inn(const Tensor<Scalar>& y, const Denoiser<Scalar>& model,
                                              const CondInn<Scalar>& inn,
                                              const LinearDegradation& op,
                                              const NoiseSchedule& schedule,
                                              const SingInnConfig& config);

}  // namespace sing
