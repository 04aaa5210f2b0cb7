#include "sing/diffusion.hpp"

#include <doctest.h>

#include <cmath>
#include <stdexcept>

using namespace sing;

TEST_CASE("linear schedule endpoints and cumulative products") {
  const auto s = NoiseSchedule::linear();
  REQUIRE(s.steps() == 1000);
  CHECK(s.beta(1) == doctest::Approx(1e-4));
  CHECK(s.beta(1000) == doctest::Approx(0.02));
  CHECK(s.alpha_bar(0) == 1.0);
  double product = 1.0;
  for (int t = 1; t <= s.steps(); ++t) {
    product *= 1.0 - (1e-4 + (0.02 - 1e-4) * (t - 1) / 999.0);
    CHECK(std::abs(s.alpha_bar(t) - product) <= 1e-10);
    CHECK(s.alpha_bar(t) < s.alpha_bar(t - 1));
    CHECK(s.alpha_bar(t) > 0.0);
    CHECK(std::isfinite(s.sigma(t)));
  }
}

TEST_CASE("constant beta oracle") {
  const auto s = NoiseSchedule::from_betas(std::vector<double>(10, 0.01));
  CHECK(s.alpha_bar(2) == doctest::Approx(0.9801).epsilon(1e-14));
  CHECK(s.sigma(1) == 0.0);
  CHECK(s.posterior_coef_xt(1) == 0.0);
  CHECK(s.posterior_coef_x0(1) == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("posterior weights preserve a constant signal's scaled mean") {
  // For x_t = sqrt(abar_t) c and x0 = c the noiseless step must return
  // sqrt(abar_{t-1}) c, i.e. c_xt sqrt(abar_t) + c_x0 = sqrt(abar_{t-1}).
  const auto s = NoiseSchedule::linear();
  for (int t = 1; t <= s.steps(); ++t) {
    const double lhs = s.posterior_coef_xt(t) * std::sqrt(s.alpha_bar(t)) + s.posterior_coef_x0(t);
    CHECK(std::abs(lhs - std::sqrt(s.alpha_bar(t - 1))) <= 1e-10);
  }
}

TEST_CASE("plain sum of the posterior weights is not one") {
  // Independent hand evaluation for constant beta = 0.01 at t = 2:
  // both weights equal sqrt(0.99) * 0.01 / 0.0199.
  const auto s = NoiseSchedule::from_betas(std::vector<double>(10, 0.01));
  const double oracle = 2.0 * std::sqrt(0.99) * 0.01 / 0.0199;
  CHECK(s.posterior_coef_xt(2) + s.posterior_coef_x0(2) == doctest::Approx(oracle).epsilon(1e-14));
  CHECK(oracle == doctest::Approx(0.9999873740).epsilon(1e-9));
  const auto linear = NoiseSchedule::linear();
  CHECK(1.0 - (linear.posterior_coef_xt(1000) + linear.posterior_coef_x0(1000)) > 5e-3);
}

TEST_CASE("respacing keeps alpha_bar at the kept timesteps") {
  const auto full = NoiseSchedule::linear();
  const auto r = full.respaced(50);
  REQUIRE(r.steps() == 50);
  for (int i = 1; i <= 50; ++i) {
    const int t = r.model_timestep(i);
    CHECK(t == 20 * i);
    CHECK(r.alpha_bar(i) == doctest::Approx(full.alpha_bar(t)).epsilon(1e-12));
  }
  const auto odd = full.respaced(7);
  CHECK(odd.model_timestep(7) == 1000);
  CHECK(odd.model_timestep(1) == 143);
  CHECK(full.respaced(1000).model_timestep(17) == 17);
  CHECK_THROWS_AS((void)full.respaced(0), ConfigError);
  CHECK_THROWS_AS((void)full.respaced(1001), ConfigError);
}

TEST_CASE("schedule rejects invalid betas and timesteps") {
  CHECK_THROWS_AS((void)NoiseSchedule::from_betas({0.1, 1.0}), ConfigError);
  CHECK_THROWS_AS((void)NoiseSchedule::from_betas({}), ConfigError);
  const auto s = NoiseSchedule::linear(10);
  CHECK_THROWS_AS((void)s.beta(0), std::out_of_range);
  CHECK_THROWS_AS((void)s.alpha_bar(11), std::out_of_range);
}

TEST_CASE("forward sample and x0 prediction invert each other") {
  const auto s = NoiseSchedule::linear();
  Rng rng(1);
  const auto x0 = Tensor<float>::uniform({1, 3, 8, 8}, rng, -1.0f, 1.0f);
  const auto eps = Tensor<float>::randn(x0.shape(), rng);
  for (int t : {1, 10, 500, 1000}) {
    const auto clean = forward_sample(x0, t, Tensor<float>(x0.shape()), s);
    CHECK(max_abs_diff(clean, Tensor<float>(x0.shape(), x0.array() *
                                                            static_cast<float>(std::sqrt(s.alpha_bar(t)))))
          < 1e-7f);
    const auto xt = forward_sample(x0, t, eps, s);
    const auto back = predict_x0_from_eps(constant(xt), constant(eps), t, s).value();
    // x0 = (x_t - sqrt(1 - abar) eps) / sqrt(abar) amplifies rounding by 1/sqrt(abar)
    CHECK(max_abs_diff(back, x0) < 1e-5f / static_cast<float>(std::sqrt(s.alpha_bar(t))));
    const auto zero_eps =
        predict_x0_from_eps(constant(xt), constant(Tensor<float>(xt.shape())), t, s).value();
    CHECK(max_abs_diff(zero_eps, Tensor<float>(xt.shape(), xt.array() / static_cast<float>(
                                                                              std::sqrt(s.alpha_bar(t))))) < 1e-4f);
  }
  CHECK_THROWS_AS((void)forward_sample(x0, 0, eps, s), std::out_of_range);
  CHECK_THROWS_AS((void)forward_sample(x0, 1001, eps, s), std::out_of_range);
}

TEST_CASE("forward marginal matches the t-fold single-step chain") {
  const auto s = NoiseSchedule::linear();
  const int trials = 10000;
  const double x0 = 0.7;
  for (int t : {1, 10, 500, 1000}) {
    Rng rng(100 + t);
    std::normal_distribution<double> normal;
    double sum_direct = 0.0, sq_direct = 0.0, sum_chain = 0.0, sq_chain = 0.0;
    for (int i = 0; i < trials; ++i) {
      const double direct =
          forward_sample(Tensor<double>::constant({1, 1, 1, 1}, x0), t,
                         Tensor<double>::constant({1, 1, 1, 1}, normal(rng)), s)
              .array()[0];
      double chain = x0;
      for (int k = 1; k <= t; ++k) {
        chain = std::sqrt(1.0 - s.beta(k)) * chain + std::sqrt(s.beta(k)) * normal(rng);
      }
      sum_direct += direct;
      sq_direct += direct * direct;
      sum_chain += chain;
      sq_chain += chain * chain;
    }
    const double mean_d = sum_direct / trials;
    const double mean_c = sum_chain / trials;
    const double var_d = sq_direct / trials - mean_d * mean_d;
    const double var_c = sq_chain / trials - mean_c * mean_c;
    const double var = 1.0 - s.alpha_bar(t);
    const double se_mean = std::sqrt(2.0 * var / trials);
    const double se_var = var * std::sqrt(2.0 / (trials - 1)) * std::sqrt(2.0);
    CHECK(std::abs(mean_d - mean_c) <= 3.0 * se_mean);
    CHECK(std::abs(var_d - var_c) <= 3.0 * se_var);
    CHECK(std::abs(mean_d - std::sqrt(s.alpha_bar(t)) * x0) <= 3.0 * std::sqrt(var / trials));
  }
}

TEST_CASE("posterior step is linear and deterministic without noise") {
  const auto s = NoiseSchedule::linear(100);
  Rng rng(2);
  const auto xt = constant(Tensor<double>::randn({1, 2, 4, 4}, rng));
  const auto x0 = constant(Tensor<double>::randn({1, 2, 4, 4}, rng));
  const auto zero = constant(Tensor<double>({1, 2, 4, 4}));
  for (int t : {1, 2, 50, 100}) {
    const auto base = posterior_step(xt, x0, t, zero, s).value();
    const auto scaled = posterior_step(scale(xt, 3.0), scale(x0, 3.0), t, zero, s).value();
    CHECK(max_abs_diff(scaled, Tensor<double>(base.shape(), 3.0 * base.array())) < 1e-12);
  }
  CHECK(max_abs_diff(posterior_step(xt, x0, 1, zero, s).value(), x0.value()) < 1e-12);
}

TEST_CASE("timestep embedding") {
  const auto e = timestep_embedding<double>({0, 7}, 8);
  CHECK(e.shape() == Shape{2, 8, 1, 1});
  CHECK(e(0, 0, 0, 0) == 0.0);
  CHECK(e(0, 4, 0, 0) == 1.0);
  CHECK(e(1, 0, 0, 0) == doctest::Approx(std::sin(7.0)));
  CHECK(e(1, 5, 0, 0) == doctest::Approx(std::cos(7.0 * std::exp(-std::log(10000.0) / 4))));
}

TEST_CASE("denoiser preserves shape and starts at zero noise") {
  const Denoiser<float> model({3, 8, 16, 0.0}, 3);
  Rng rng(4);
  const auto x = Tensor<float>::randn({2, 3, 8, 8}, rng);
  const auto eps = model(constant(x), {5, 900}).value();
  CHECK(eps.shape() == x.shape());
  CHECK(eps.array().abs().maxCoeff() == 0.0f);

  const Denoiser<float> live({3, 8, 16, 0.5}, 3);
  const auto a = live(constant(x), {5, 5}).value();
  const auto b = live(constant(x), {5, 900}).value();
  CHECK(max_abs_diff(a, b) > 0.0f);  // timestep reaches the network
  CHECK_THROWS_AS((void)live(constant(Tensor<float>({1, 3, 7, 8})), {1}), ConfigError);
  CHECK_THROWS_AS((void)live(constant(x), {1}), ConfigError);
}

TEST_CASE("untrained zero-output denoiser has unit per-element loss") {
  Denoiser<float> model({3, 8, 16, 0.0}, 5);
  DiffusionTrainer<float> trainer(model, NoiseSchedule::linear(), 1e-4, 6);
  Rng rng(7);
  const auto batch = Tensor<float>::uniform({16, 3, 16, 16}, rng, 0.0f, 1.0f);
  CHECK(trainer.train_step(batch) == doctest::Approx(1.0).epsilon(0.03));
}

TEST_CASE("diffusion training is deterministic and leaves the model frozen") {
  auto run = [] {
    Denoiser<float> model({3, 8, 16, 0.1}, 8);
    DiffusionTrainer<float> trainer(model, NoiseSchedule::linear(), 1e-3, 9);
    Rng rng(10);
    const auto batch = Tensor<float>::uniform({2, 3, 8, 8}, rng, 0.0f, 1.0f);
    std::vector<double> losses;
    for (int i = 0; i < 4; ++i) losses.push_back(trainer.train_step(batch));
    for (const auto& p : model.parameters()) CHECK_FALSE(p.var.requires_grad());
    return losses;
  };
  CHECK(run() == run());
}

TEST_CASE("ancestral sampling runs exactly T steps and stays finite") {
  const Denoiser<float> model({3, 8, 16, 0.3}, 11);
  const auto schedule = NoiseSchedule::linear().respaced(20);
  int evals = 0;
  const auto img = sample(model, schedule, {1, 3, 8, 8}, 12, &evals);
  CHECK(evals == 20);
  CHECK(img.shape() == Shape{1, 3, 8, 8});
  CHECK(img.array().isFinite().all());
  CHECK(max_abs_diff(img, sample(model, schedule, {1, 3, 8, 8}, 12)) == 0.0f);
}
