#include "sing/deepjscc.hpp"
#include "support.hpp"

#include <doctest.h>

#include <cmath>

using namespace sing;

namespace {

JsccConfig small_config() {
  JsccConfig c;
  c.height = 16;
  c.width = 16;
  c.bcr = 1.0 / 12.0;  // k = 64
  c.filters = 8;
  c.stages = 2;
  return c;
}

Tensor<float> image(std::uint64_t seed, Shape s) {
  Rng rng(seed);
  return Tensor<float>::uniform(s, rng, 0.0f, 1.0f);
}

}  // namespace

TEST_CASE("channel uses follow the bandwidth ratio") {
  JsccConfig c;
  CHECK(c.channel_uses() == 63);  // floor(0.0052 * 12288) = floor(63.8976)
  c.bcr = 0.0013;
  CHECK(c.channel_uses() == 15);  // floor(15.9744)
  c.bcr = 1e-6;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = JsccConfig{};
  c.height = 60;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("encoder meets the power constraint on every forward pass") {
  const JsccModel<float> model(JsccConfig{}, 1);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto z = encode(model, image(seed, {1, 3, 64, 64}));
    CHECK(z.size() == 63);
    CHECK(std::abs(channel::mean_power(z) - 1.0) <= 1e-5);
  }
  const auto batch = model.encode_symbols(constant(image(9, {4, 3, 64, 64})));
  CHECK(batch.shape() == Shape{4, 126, 1, 1});
  CHECK_THROWS_AS((void)encode(model, image(1, {1, 3, 32, 32})), ConfigError);
}

TEST_CASE("decoder output shape and range") {
  const JsccModel<float> model(small_config(), 2);
  const auto x = image(3, {1, 3, 16, 16});
  for (double snr : {-5.0, 0.0, 5.0, 20.0}) {
    const auto out = transmit(model, x, snr, 4);
    CHECK(out.shape() == x.shape());
    CHECK(out.array().minCoeff() >= 0.0f);
    CHECK(out.array().maxCoeff() <= 1.0f);
  }
  const channel::ChannelVector<float> short_z = channel::ChannelVector<float>::Zero(5);
  CHECK_THROWS_AS((void)decode(model, short_z, 0.0), ConfigError);
  CHECK(max_abs_diff(transmit(model, x, 0.0, 4), transmit(model, x, 0.0, 4)) == 0.0f);
}

TEST_CASE("snr side input changes the reconstruction") {
  auto config = small_config();
  config.snr_side_input = true;
  const JsccModel<float> model(config, 5);
  const auto z = encode(model, image(6, {1, 3, 16, 16}));
  CHECK(max_abs_diff(decode(model, z, -5.0), decode(model, z, 5.0)) > 0.0f);
}

TEST_CASE("composite loss examples") {
  const FeatureDistance<float> perceptual;
  const auto x = constant(image(7, {1, 3, 16, 16}));
  CHECK(composite_loss(x, x, 1.0, perceptual).item() == 0.0f);
  const auto y = constant(image(8, {1, 3, 16, 16}));
  CHECK(composite_loss(x, y, 0.0, perceptual).item() == doctest::Approx(mse(x, y).item()));
  CHECK(composite_loss(x, y, 1.0, perceptual).item() > composite_loss(x, y, 0.0, perceptual).item());

  const auto a = constant(Tensor<float>::constant({1, 3, 8, 8}, 0.3f));
  const auto b = constant(Tensor<float>::constant({1, 3, 8, 8}, 0.4f));
  CHECK(composite_loss(a, b, 0.0, perceptual).item() == doctest::Approx(0.01).epsilon(1e-5));
}

TEST_CASE("composite loss gradient matches finite differences") {
  const FeatureDistance<double> perceptual(3, 3, {{4, 1}, {8, 2}});
  Rng rng(9);
  const auto target = constant(Tensor<double>::uniform({1, 3, 8, 8}, rng, 0.0, 1.0));
  const auto x_hat = Tensor<double>::uniform({1, 3, 8, 8}, rng, 0.0, 1.0);
  CHECK(sing::testing::gradient_check(
            [&](const Var<double>& v) { return composite_loss(v, target, 1.0, perceptual); },
            x_hat) < 1e-3);
}

TEST_CASE("end-to-end gradient through the encoder and decoder") {
  auto config = small_config();
  config.height = 8;
  config.width = 8;
  config.filters = 3;
  config.bcr = 1.0 / 24.0;  // k = 8
  const JsccModel<double> model(config, 10);
  const FeatureDistance<double> perceptual(3, 3, {{4, 1}});
  Rng rng(11);
  const auto x = Tensor<double>::uniform({1, 3, 8, 8}, rng, 0.0, 1.0);
  auto loss = [&](const Var<double>& v) {
    return composite_loss(model.decode_symbols(model.encode_symbols(v), {0.0}), constant(x), 1.0,
                          perceptual);
  };
  CHECK(sing::testing::gradient_check(loss, x) < 1e-3);
}

TEST_CASE("training records one snr and noise level per batch") {
  const FeatureDistance<float> perceptual;
  const std::vector<Tensor<float>> data{image(12, {1, 3, 16, 16}), image(13, {1, 3, 16, 16})};
  JsccTrainOptions options;
  options.steps = 3;
  options.batch_size = 2;
  options.snr_low_db = 0.0;
  options.snr_high_db = 0.0;
  const auto model = train(small_config(), data, options, perceptual);
  REQUIRE(model.log.sigma_sq.size() == 3);
  for (double s : model.log.sigma_sq) CHECK(s == 1.0);
  for (const auto& p : model.parameters()) CHECK_FALSE(p.var.requires_grad());

  options.snr_low_db = -5.0;
  options.snr_high_db = 5.0;
  const auto ranged = train(small_config(), data, options, perceptual);
  for (double snr : ranged.log.snr_db) {
    CHECK(snr >= -5.0);
    CHECK(snr <= 5.0);
  }
  CHECK(ranged.trained_snr_low_db == -5.0);
}

TEST_CASE("training is deterministic and validates inputs") {
  const FeatureDistance<float> perceptual;
  const std::vector<Tensor<float>> data{image(14, {1, 3, 16, 16})};
  JsccTrainOptions options;
  options.steps = 4;
  options.batch_size = 2;
  options.seed = 3;
  const auto a = train(small_config(), data, options, perceptual);
  const auto b = train(small_config(), data, options, perceptual);
  CHECK(a.log.loss == b.log.loss);
  CHECK_THROWS_AS((void)train(small_config(), std::vector<Tensor<float>>{}, options, perceptual),
                  ConfigError);
  options.snr_low_db = 3.0;
  options.snr_high_db = 1.0;
  CHECK_THROWS_AS((void)train(small_config(), data, options, perceptual), ConfigError);
}

TEST_CASE("noiseless reconstruction beats the mean-image baseline after brief training") {
  const FeatureDistance<float> perceptual;
  std::vector<Tensor<float>> data;
  for (std::uint64_t i = 0; i < 4; ++i) {
    // smooth images with distinct colour gradients
    Tensor<float> img({1, 3, 16, 16});
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) {
          img(0, c, y, x) = 0.5f + 0.4f * std::sin(0.3f * (i + 1) * (c + 1) + 0.2f * x - 0.1f * i * y);
        }
    data.push_back(img);
  }
  JsccTrainOptions options;
  options.steps = 150;
  options.batch_size = 4;
  options.learning_rate = 3e-3;
  options.snr_low_db = 20.0;
  options.snr_high_db = 20.0;
  auto config = small_config();
  config.lambda_perceptual = 0.0;
  const auto model = train(config, data, options, perceptual);

  Tensor<float> mean_image({1, 3, 16, 16});
  for (const auto& d : data) mean_image.array() += d.array() / 4.0f;
  double model_err = 0.0;
  double baseline_err = 0.0;
  for (const auto& d : data) {
    const auto z = encode(model, d);
    model_err += mse(decode(model, z, 100.0), d);  // sigma^2 = 0: decode the clean symbols
    baseline_err += mse(mean_image, d);
  }
  CHECK(model_err < baseline_err);
}
