#include "sing/sing_zero.hpp"

#include <algorithm>

namespace sing {

NoiseSchedule sampling_schedule(const NoiseSchedule& schedule, int t_effective) {
  if (t_effective < 0 || t_effective > schedule.steps()) {
    throw ConfigError("t_effective must be in [1, " + std::to_string(schedule.steps()) + "], got " +
                      std::to_string(t_effective));
  }
  if (t_effective == 0 || t_effective == schedule.steps()) return schedule;
  return schedule.respaced(t_effective);
}

template <typename Scalar>
NullSpaceStep<Scalar> null_space_step(const NoisePredictor<Scalar>& eps_fn, const LinearDegradation& op,
                                      const NoiseSchedule& schedule, const Var<Scalar>& x_t, int t,
                                      const Var<Scalar>& y_model, const Tensor<Scalar>& z,
                                      bool detach_eps) {
  Var<Scalar> eps = eps_fn(x_t, schedule.model_timestep(t));
  if (eps.shape() != x_t.shape()) {
    throw ConfigError("noise predictor returned " + eps.shape().str() + " for input " +
                      x_t.shape().str());
  }
  if (detach_eps) eps = detach(eps);
  Var<Scalar> prediction = predict_x0_from_eps(x_t, eps, t, schedule);
  Var<Scalar> rectified = op.rectify(prediction, y_model);
  Var<Scalar> next = posterior_step(x_t, rectified, t, constant(z), schedule);
  return {std::move(prediction), std::move(rectified), std::move(next)};
}

namespace {

template <typename Scalar>
double max_residual(const LinearDegradation& op, const Var<Scalar>& x_model, const Var<Scalar>& y_model) {
  // Residuals are reported in [0, 1] image units.
  return 0.5 * static_cast<double>((op.apply(x_model).value().array() - y_model.value().array())
                                       .abs()
                                       .maxCoeff());
}

}  // namespace

template <typename Scalar>
Restoration<Scalar> restore(const Tensor<Scalar>& y, const NoisePredictor<Scalar>& eps,
                            const LinearDegradation& op, const NoiseSchedule& schedule,
                            const SingZeroConfig& config) {
  const Shape shape = op.input_shape(y.shape());
  const NoiseSchedule run = sampling_schedule(schedule, config.t_effective);
  Rng rng(config.seed);
  Var<Scalar> x = constant(Tensor<Scalar>::randn(shape, rng));
  const Var<Scalar> y_model = to_model_space(constant(y));

  Restoration<Scalar> result;
  for (int t = run.steps(); t >= 1; --t) {
    const auto z = t > 1 ? Tensor<Scalar>::randn(shape, rng) : Tensor<Scalar>::zeros(shape);
    auto step = null_space_step(eps, op, run, x, t, y_model, z);
    ++result.stats.denoiser_evals;
    ++result.stats.steps;
    result.stats.max_rectified_residual =
        std::max(result.stats.max_rectified_residual, max_residual(op, step.rectified, y_model));
    if (t == 1) result.last_prediction = to_image_space(step.prediction).value();
    x = std::move(step.next);
  }
  result.image = to_image_space(x).value();
  return result;
}

template <typename Scalar>
Restoration<Scalar> restore(const Tensor<Scalar>& y, const Denoiser<Scalar>& model,
                            const LinearDegradation& op, const NoiseSchedule& schedule,
                            const SingZeroConfig& config) {
  const Shape shape = op.input_shape(y.shape());
  if (shape.c != model.config().channels) {
    throw ConfigError("restore: measurement " + y.shape().str() + " implies " + shape.str() +
                      " but the denoiser has " + std::to_string(model.config().channels) +
                      " channels");
  }
  return restore(y, noise_predictor(model), op, schedule, config);
}

#define SING_ZERO_INSTANTIATE(S)                                                                  \
  template NullSpaceStep<S> null_space_step<S>(const NoisePredictor<S>&, const LinearDegradation&, \
                                               const NoiseSchedule&, const Var<S>&, int,          \
                                               const Var<S>&, const Tensor<S>&, bool);            \
  template Restoration<S> restore<S>(const Tensor<S>&, const Denoiser<S>&,                        \
                                     const LinearDegradation&, const NoiseSchedule&,              \
                                     const SingZeroConfig&);                                      \
  template Restoration<S> restore<S>(const Tensor<S>&, const NoisePredictor<S>&,                  \
                                     const LinearDegradation&, const NoiseSchedule&,              \
                                     const SingZeroConfig&);

SING_ZERO_INSTANTIATE(float)
SING_ZERO_INSTANTIATE(double)

#undef SING_ZERO_INSTANTIATE

}  // namespace sing
