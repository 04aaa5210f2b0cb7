#include "sing/diffusion.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace sing {

NoiseSchedule NoiseSchedule::linear(int steps, double beta_start, double beta_end) {
  if (steps < 1) throw ConfigError("schedule needs at least one step");
  std::vector<double> betas(steps);
  for (int i = 0; i < steps; ++i) {
    const double frac = steps == 1 ? 0.0 : static_cast<double>(i) / (steps - 1);
    betas[i] = beta_start + frac * (beta_end - beta_start);
  }
  return from_betas(std::move(betas));
}

NoiseSchedule NoiseSchedule::from_betas(std::vector<double> betas, std::vector<int> model_timesteps) {
  if (betas.empty()) throw ConfigError("schedule needs at least one step");
  NoiseSchedule s;
  const std::size_t steps = betas.size();
  s.betas_.assign(1, 0.0);
  s.alpha_bar_.assign(1, 1.0);
  s.model_steps_.assign(1, 0);
  for (std::size_t t = 1; t <= steps; ++t) {
    const double beta = betas[t - 1];
    if (!(beta > 0.0 && beta < 1.0)) {
      throw ConfigError("beta_" + std::to_string(t) + " = " + std::to_string(beta) +
                        " outside (0, 1)");
    }
    s.betas_.push_back(beta);
    s.alpha_bar_.push_back(s.alpha_bar_.back() * (1.0 - beta));
    s.model_steps_.push_back(model_timesteps.empty() ? static_cast<int>(t)
                                                     : model_timesteps.at(t - 1));
  }
  return s;
}

NoiseSchedule NoiseSchedule::respaced(int steps) const {
  const int total = this->steps();
  if (steps < 1 || steps > total) {
    throw ConfigError("respaced step count " + std::to_string(steps) + " outside [1, " +
                      std::to_string(total) + "]");
  }
  if (steps == total) return *this;
  std::vector<double> betas;
  std::vector<int> kept;
  double previous = 1.0;
  for (int i = 1; i <= steps; ++i) {
    const int t = static_cast<int>((2LL * i * total + steps) / (2LL * steps));
    betas.push_back(1.0 - alpha_bar_[t] / previous);
    kept.push_back(model_steps_[t]);
    previous = alpha_bar_[t];
  }
  return from_betas(std::move(betas), std::move(kept));
}

std::size_t NoiseSchedule::check(int t) const {
  if (t < 1 || t > steps()) {
    throw std::out_of_range("timestep " + std::to_string(t) + " outside [1, " +
                            std::to_string(steps()) + "]");
  }
  return static_cast<std::size_t>(t);
}

double NoiseSchedule::alpha_bar(int t) const {
  if (t == 0) return 1.0;
  return alpha_bar_.at(check(t));
}

double NoiseSchedule::sigma(int t) const {
  return std::sqrt((1.0 - alpha_bar(t - 1)) / (1.0 - alpha_bar(t)) * beta(t));
}

double NoiseSchedule::posterior_coef_xt(int t) const {
  return std::sqrt(alpha(t)) * (1.0 - alpha_bar(t - 1)) / (1.0 - alpha_bar(t));
}

double NoiseSchedule::posterior_coef_x0(int t) const {
  return std::sqrt(alpha_bar(t - 1)) * beta(t) / (1.0 - alpha_bar(t));
}

template <typename Scalar>
Tensor<Scalar> timestep_embedding(const std::vector<int>& t, int dim) {
  const int half = dim / 2;
  Tensor<Scalar> out(Shape{static_cast<int>(t.size()), dim, 1, 1});
  for (std::size_t n = 0; n < t.size(); ++n) {
    for (int i = 0; i < half; ++i) {
      const double freq = std::exp(-std::log(10000.0) * i / half);
      out(static_cast<int>(n), i, 0, 0) = static_cast<Scalar>(std::sin(t[n] * freq));
      out(static_cast<int>(n), i + half, 0, 0) = static_cast<Scalar>(std::cos(t[n] * freq));
    }
  }
  return out;
}

template <typename Scalar>
Denoiser<Scalar>::Denoiser(DenoiserConfig config, std::uint64_t seed) : config_(config) {
  if (config_.width < 1 || config_.time_dim < 2 || config_.channels < 1) {
    throw ConfigError("invalid denoiser configuration");
  }
  Rng rng(seed);
  const int w = config_.width;
  const int temb = 2 * w;
  auto block = [&](int ch) {
    return ResBlock{Conv2d<Scalar>(ch, ch, 3, 1, 1, true, rng),
                    Conv2d<Scalar>(ch, ch, 3, 1, 1, true, rng, 0.5),
                    Linear<Scalar>(temb, ch, rng)};
  };
  time_in_ = Linear<Scalar>(config_.time_dim, temb, rng);
  conv_in_ = Conv2d<Scalar>(config_.channels, w, 3, 1, 1, true, rng);
  high_in_ = block(w);
  down_ = Conv2d<Scalar>(w, 2 * w, 3, 2, 1, true, rng);
  low_a_ = block(2 * w);
  low_b_ = block(2 * w);
  up_ = ConvTranspose2d<Scalar>(2 * w, w, 4, 2, 1, 0, rng);
  high_out_ = block(w);
  conv_out_ = Conv2d<Scalar>(w, config_.channels, 3, 1, 1, true, rng, config_.output_gain);
  parameters().set_trainable(false);
}

template <typename Scalar>
Var<Scalar> Denoiser<Scalar>::residual(const ResBlock& block, const Var<Scalar>& h,
                                       const Var<Scalar>& temb) const {
  auto r = channel_bias(block.conv1(silu(h)), block.time(temb));
  return add(h, block.conv2(silu(r)));
}

template <typename Scalar>
Var<Scalar> Denoiser<Scalar>::operator()(const Var<Scalar>& x_t, const std::vector<int>& t) const {
  const Shape in = x_t.shape();
  if (in.c != config_.channels) {
    throw ConfigError("denoiser expects " + std::to_string(config_.channels) + " channels, got " +
                      in.str());
  }
  if (in.h % 2 != 0 || in.w % 2 != 0) throw ConfigError("denoiser needs even H and W: " + in.str());
  if (static_cast<int>(t.size()) != in.n) throw ConfigError("one timestep per sample required");
  const auto temb = silu(time_in_(constant(timestep_embedding<Scalar>(t, config_.time_dim))));
  auto high = residual(high_in_, conv_in_(x_t), temb);
  auto low = residual(low_b_, residual(low_a_, down_(high), temb), temb);
  auto merged = residual(high_out_, add(up_(low), high), temb);
  return conv_out_(silu(merged));
}

template <typename Scalar>
ParameterList<Scalar> Denoiser<Scalar>::parameters() const {
  ParameterList<Scalar> list;
  auto add_block = [&list](const ResBlock& b, const std::string& name) {
    b.conv1.collect(list, name + ".conv1");
    b.conv2.collect(list, name + ".conv2");
    b.time.collect(list, name + ".time");
  };
  time_in_.collect(list, "time_in");
  conv_in_.collect(list, "conv_in");
  add_block(high_in_, "high_in");
  down_.collect(list, "down");
  add_block(low_a_, "low_a");
  add_block(low_b_, "low_b");
  up_.collect(list, "up");
  add_block(high_out_, "high_out");
  conv_out_.collect(list, "conv_out");
  return list;
}

namespace {

double alpha_bar_checked(const NoiseSchedule& schedule, int t) {
  if (t < 1 || t > schedule.steps()) {
    throw std::out_of_range("timestep " + std::to_string(t) + " outside [1, " +
                            std::to_string(schedule.steps()) + "]");
  }
  return schedule.alpha_bar(t);
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> forward_sample(const Tensor<Scalar>& x0, int t, const Tensor<Scalar>& eps,
                              const NoiseSchedule& schedule) {
  if (x0.shape() != eps.shape()) throw ConfigError("forward_sample: noise shape mismatch");
  const double ab = alpha_bar_checked(schedule, t);
  return Tensor<Scalar>(x0.shape(), x0.array() * static_cast<Scalar>(std::sqrt(ab)) +
                                        eps.array() * static_cast<Scalar>(std::sqrt(1.0 - ab)));
}

template <typename Scalar>
Var<Scalar> predict_x0_from_eps(const Var<Scalar>& x_t, const Var<Scalar>& eps, int t,
                                const NoiseSchedule& schedule) {
  const double ab = alpha_bar_checked(schedule, t);
  const auto inv_sqrt_ab = static_cast<Scalar>(1.0 / std::sqrt(ab));
  return scale(sub(x_t, scale(eps, static_cast<Scalar>(std::sqrt(1.0 - ab)))), inv_sqrt_ab);
}

template <typename Scalar>
Var<Scalar> predict_x0(const Denoiser<Scalar>& model, const Var<Scalar>& x_t, int t,
                       const NoiseSchedule& schedule) {
  const auto eps = model(x_t, std::vector<int>(x_t.shape().n, schedule.model_timestep(t)));
  return predict_x0_from_eps(x_t, eps, t, schedule);
}

template <typename Scalar>
Var<Scalar> posterior_step(const Var<Scalar>& x_t, const Var<Scalar>& x0_hat, int t,
                           const Var<Scalar>& z, const NoiseSchedule& schedule) {
  const auto c_xt = static_cast<Scalar>(schedule.posterior_coef_xt(t));
  const auto c_x0 = static_cast<Scalar>(schedule.posterior_coef_x0(t));
  const auto sigma = static_cast<Scalar>(schedule.sigma(t));
  return add(add(scale(x_t, c_xt), scale(x0_hat, c_x0)), scale(z, sigma));
}

template <typename Scalar>
DiffusionTrainer<Scalar>::DiffusionTrainer(Denoiser<Scalar>& model, NoiseSchedule schedule,
                                           double learning_rate, std::uint64_t seed)
    : model_(model),
      schedule_(std::move(schedule)),
      optimizer_(model.parameters(), learning_rate),
      rng_(seed) {}

template <typename Scalar>
double DiffusionTrainer<Scalar>::train_step(const Tensor<Scalar>& batch) {
  const Shape s = batch.shape();
  if (s.n < 1) throw ConfigError("diffusion training batch is empty");
  std::uniform_int_distribution<int> pick_t(1, schedule_.steps());
  std::vector<int> ts(s.n);
  std::vector<int> model_ts(s.n);
  for (int n = 0; n < s.n; ++n) {
    ts[n] = pick_t(rng_);
    model_ts[n] = schedule_.model_timestep(ts[n]);
  }
  const auto eps = Tensor<Scalar>::randn(s, rng_);
  const auto x0 = to_model_space(constant(batch)).value();
  Tensor<Scalar> x_t(s);
  for (int n = 0; n < s.n; ++n) {
    const auto noisy = forward_sample(x0.sample(n), ts[n], eps.sample(n), schedule_);
    x_t.array().segment(n * s.sample(), s.sample()) = noisy.array();
  }
  auto params = model_.parameters();
  params.set_trainable(true);
  const auto loss = mse(model_(constant(std::move(x_t)), model_ts), constant(eps));
  optimizer_.zero_grad();
  loss.backward();
  optimizer_.step();
  params.set_trainable(false);
  return static_cast<double>(loss.item());
}

template <typename Scalar>
Tensor<Scalar> sample(const Denoiser<Scalar>& model, const NoiseSchedule& schedule, Shape shape,
                      std::uint64_t seed, int* evaluations) {
  Rng rng(seed);
  Var<Scalar> x = constant(Tensor<Scalar>::randn(shape, rng));
  int calls = 0;
  for (int t = schedule.steps(); t >= 1; --t) {
    const auto z = t > 1 ? Tensor<Scalar>::randn(shape, rng) : Tensor<Scalar>::zeros(shape);
    const auto x0 = predict_x0(model, x, t, schedule);
    ++calls;
    x = constant(posterior_step(x, x0, t, constant(z), schedule).value());
  }
  if (evaluations) *evaluations = calls;
  return to_image_space(x).value();
}

#define SING_DIFFUSION_INSTANTIATE(S)                                                            \
  template class Denoiser<S>;                                                                    \
  template class DiffusionTrainer<S>;                                                            \
  template Tensor<S> timestep_embedding<S>(const std::vector<int>&, int);                        \
  template Tensor<S> forward_sample<S>(const Tensor<S>&, int, const Tensor<S>&,                  \
                                       const NoiseSchedule&);                                    \
  template Var<S> predict_x0_from_eps<S>(const Var<S>&, const Var<S>&, int, const NoiseSchedule&); \
  template Var<S> predict_x0<S>(const Denoiser<S>&, const Var<S>&, int, const NoiseSchedule&);   \
  template Var<S> posterior_step<S>(const Var<S>&, const Var<S>&, int, const Var<S>&,            \
                                    const NoiseSchedule&);                                       \
  template Tensor<S> sample<S>(const Denoiser<S>&, const NoiseSchedule&, Shape, std::uint64_t,   \
                               int*);

SING_DIFFUSION_INSTANTIATE(float)
SING_DIFFUSION_INSTANTIATE(double)

#undef SING_DIFFUSION_INSTANTIATE

}  // namespace sing
