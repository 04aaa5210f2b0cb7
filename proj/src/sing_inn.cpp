#include "sing/sing_inn.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace sing {

GuidanceMode parse_guidance_mode(const std::string& name) {
  if (name == "full") return GuidanceMode::full;
  if (name == "stop_gradient") return GuidanceMode::stop_gradient;
  throw ConfigError("unknown guidance mode '" + name + "' (expected full or stop_gradient)");
}

std::string to_string(GuidanceMode mode) {
  return mode == GuidanceMode::full ? "full" : "stop_gradient";
}

GuidanceScaling parse_guidance_scaling(const std::string& name) {
  if (name == "raw") return GuidanceScaling::raw;
  if (name == "normalized") return GuidanceScaling::normalized;
  throw ConfigError("unknown guidance scaling '" + name + "' (expected raw or normalized)");
}

std::string to_string(GuidanceScaling scaling) {
  return scaling == GuidanceScaling::raw ? "raw" : "normalized";
}

void SingInnConfig::validate() const {
  if (!(zeta >= 0.0) || !std::isfinite(zeta)) throw ConfigError("zeta must be finite and >= 0");
  if (!std::isfinite(snr_db)) throw ConfigError("snr_db must be finite");
}

double zeta_schedule(double snr_db) {
  if (snr_db <= -2.0) return 0.3;
  if (snr_db <= 2.0) return 0.4;
  return 0.5;
}

namespace {

template <typename Scalar>
void check_compatible(const CondInn<Scalar>& inn, const LinearDegradation& op) {
  if (op.kind() != DegradationKind::mean_pool || op.scale() != inn.config().scale) {
    throw ConfigError("INN guidance needs a mean_pool operator with scale " +
                      std::to_string(inn.config().scale) + ", got " + op.name());
  }
}

}  // namespace

template <typename Scalar>
GuidanceResult<Scalar> guidance_step(const NoisePredictor<Scalar>& eps, const CondInn<Scalar>& inn,
                                     const LinearDegradation& op, const NoiseSchedule& schedule,
                                     const Tensor<Scalar>& x_t, int t, const Tensor<Scalar>& y,
                                     const Tensor<Scalar>& z, double snr_db, GuidanceMode mode,
                                     bool with_gradient) {
  check_compatible(inn, op);
  const Var<Scalar> x(x_t, with_gradient);
  const Var<Scalar> y_image = constant(y);
  auto step = null_space_step(eps, op, schedule, x, t, to_model_space(y_image), z,
                              mode == GuidanceMode::stop_gradient);
  const std::vector<double> snr(x_t.shape().n, snr_db);
  const auto split = inn.forward(to_image_space(step.rectified), snr);
  Var<Scalar> estimate = to_model_space(inn.inverse(y_image, split.detail, snr));
  const Var<Scalar> objective = sum(square(sub(estimate, step.rectified)));

  GuidanceResult<Scalar> result{std::move(step), std::move(estimate),
                                static_cast<double>(objective.item()), {}};
  if (with_gradient) {
    objective.backward();
    result.gradient = x.grad();
  }
  return result;
}

template <typename Scalar>
Restoration<Scalar> restore_inn(const Tensor<Scalar>& y, const NoisePredictor<Scalar>& eps,
                                const CondInn<Scalar>& inn, const LinearDegradation& op,
                                const NoiseSchedule& schedule, const SingInnConfig& config) {
  config.validate();
  check_compatible(inn, op);
  const Shape shape = op.input_shape(y.shape());
  if (shape.c != inn.config().channels) {
    throw ConfigError("restore_inn: measurement " + y.shape().str() + " does not match the " +
                      std::to_string(inn.config().channels) + "-channel INN");
  }
  const NoiseSchedule run = sampling_schedule(schedule, config.t_effective);

  Restoration<Scalar> result;
  if (config.snr_db < inn.trained_snr_low_db || config.snr_db > inn.trained_snr_high_db) {
    std::ostringstream msg;
    msg << "snr " << config.snr_db << " dB is outside the INN training range ["
        << inn.trained_snr_low_db << ", " << inn.trained_snr_high_db << "] dB";
    result.stats.warnings.push_back(msg.str());
  }

  // Same draw order as restore(): x_T first, then one z per step.
  Rng rng(config.seed);
  Tensor<Scalar> x = Tensor<Scalar>::randn(shape, rng);
  const Var<Scalar> y_model = to_model_space(constant(y));
  const bool guided = config.zeta > 0.0;
  const auto zeta = static_cast<Scalar>(config.zeta);

  for (int t = run.steps(); t >= 1; --t) {
    const auto z = t > 1 ? Tensor<Scalar>::randn(shape, rng) : Tensor<Scalar>::zeros(shape);
    auto g = guidance_step(eps, inn, op, run, x, t, y, z, config.snr_db, config.mode, guided);
    ++result.stats.steps;
    ++result.stats.denoiser_evals;
    ++result.stats.inn_forward;
    ++result.stats.inn_inverse;
    result.stats.max_rectified_residual = std::max(
        result.stats.max_rectified_residual,
        0.5 * static_cast<double>(
                  (op.apply(g.step.rectified).value().array() - y_model.value().array())
                      .abs()
                      .maxCoeff()));
    if (config.verify_lifting) {
      const std::vector<double> snr(shape.n, config.snr_db);
      const auto coarse = inn.forward(to_image_space(g.inn_estimate), snr).coarse.value();
      result.stats.max_lifting_error =
          std::max(result.stats.max_lifting_error,
                   static_cast<double>((coarse.array() - y.array()).abs().maxCoeff()));
    }
    if (t == 1) result.last_prediction = to_image_space(g.step.prediction).value();
    Tensor<Scalar> next = g.step.next.value();
    if (guided) {
      Scalar step = zeta;
      if (config.scaling == GuidanceScaling::normalized && g.objective > 0.0) {
        step = static_cast<Scalar>(config.zeta / std::sqrt(g.objective));
      }
      next.array() -= step * g.gradient.array();
    }
    x = std::move(next);
  }
  result.image = to_image_space(constant(std::move(x))).value();
  return result;
}

template <typename Scalar>
Restoration<Scalar> restore_inn(const Tensor<Scalar>& y, const Denoiser<Scalar>& model,
                                const CondInn<Scalar>& inn, const LinearDegradation& op,
                                const NoiseSchedule& schedule, const SingInnConfig& config) {
  if (op.input_shape(y.shape()).c != model.config().channels) {
    throw ConfigError("restore_inn: measurement " + y.shape().str() + " does not match the " +
                      std::to_string(model.config().channels) + "-channel denoiser");
  }
  return restore_inn(y, noise_predictor(model), inn, op, schedule, config);
}

#define SING_INN_SAMPLER_INSTANTIATE(S)                                                         \
  template GuidanceResult<S> guidance_step<S>(                                                  \
      const NoisePredictor<S>&, const CondInn<S>&, const LinearDegradation&,                   \
      const NoiseSchedule&,                                                                     \
      const Tensor<S>&, int, const Tensor<S>&, const Tensor<S>&, double, GuidanceMode, bool);   \
  template Restoration<S> restore_inn<S>(const Tensor<S>&, const Denoiser<S>&, const CondInn<S>&, \
                                         const LinearDegradation&, const NoiseSchedule&,        \
                                         const SingInnConfig&);                                 \
  template Restoration<S> restore_inn<S>(const Tensor<S>&, const NoisePredictor<S>&,            \
                                         const CondInn<S>&, const LinearDegradation&,           \
                                         const NoiseSchedule&, const SingInnConfig&);

SING_INN_SAMPLER_INSTANTIATE(float)
SING_INN_SAMPLER_INSTANTIATE(double)

#undef SING_INN_SAMPLER_INSTANTIATE

}  // namespace sing
