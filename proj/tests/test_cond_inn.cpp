#include "sing/cond_inn.hpp"
#include "sing/degradation.hpp"
#include "support.hpp"

#include <doctest.h>

using namespace sing;

namespace {

CondInnConfig small_inn(int channels = 3, int hidden = 8) {
  CondInnConfig c;
  c.channels = channels;
  c.hidden = hidden;
  return c;
}

template <typename Scalar>
void zero_couplings(CondInn<Scalar>& inn) {
  for (int k = 0; k < inn.config().pairs; ++k) {
    inn.predict_net(k).conv_out().weight().mutable_value().array().setZero();
    inn.update_net(k).conv_out().weight().mutable_value().array().setZero();
  }
}

template <typename Scalar>
void randomize_alpha(CondInn<Scalar>& inn, std::uint64_t seed) {
  Rng rng(seed);
  auto params = inn.parameters();
  for (const auto& p : params) {
    if (p.name.find(".alpha.weight") != std::string::npos) {
      Var<Scalar> v = p.var;
      v.mutable_value() = Tensor<Scalar>::randn(v.shape(), rng);
    }
  }
}

}  // namespace

TEST_CASE("cond block is residual") {
  Rng rng(1);
  CondBlock<float> block(4, rng);
  Rng data(2);
  const auto x = constant(Tensor<float>::randn({2, 4, 5, 5}, data));
  const auto snr = constant(Tensor<float>::constant({2, 1, 1, 1}, 0.3f));
  CHECK(max_abs_diff(block(x, snr).value(), x.value()) > 0.0f);
  // alpha starts at one for every snr
  CHECK((block.gain(snr).value().array() == 1.0f).all());

  CondBlock<float> gated = block;
  auto params = ParameterList<float>();
  gated.collect(params, "b");
  params.at("b.alpha.bias").mutable_value().array().setZero();
  CHECK(max_abs_diff(gated(x, snr).value(), x.value()) == 0.0f);

  Rng rng2(1);
  CondBlock<float> silent(4, rng2);
  silent.conv2().weight().mutable_value().array().setZero();
  CHECK(max_abs_diff(silent(x, snr).value(), x.value()) == 0.0f);
}

TEST_CASE("cond block gradient matches finite differences") {
  Rng rng(3);
  CondBlock<double> block(2, rng);
  auto params = ParameterList<double>();
  block.collect(params, "b");
  params.at("b.alpha.weight").mutable_value().array() = 0.7;
  const auto snr = constant(Tensor<double>::constant({1, 1, 1, 1}, -0.4));
  Rng data(4);
  const auto x = Tensor<double>::randn({1, 2, 4, 4}, data);
  CHECK(sing::testing::gradient_check(
            [&](const Var<double>& v) { return sing::testing::project(block(v, snr)); }, x) <
        1e-3);
  // and with respect to the normalized snr feeding the gains
  const auto x_const = constant(x);
  CHECK(sing::testing::gradient_check(
            [&](const Var<double>& v) { return sing::testing::project(block(x_const, v)); },
            snr.value()) < 1e-3);
}

TEST_CASE("split gives measurement-shaped coarse part") {
  const CondInn<float> inn(small_inn(), 5);
  Rng rng(6);
  const auto x = constant(Tensor<float>::uniform({2, 3, 8, 8}, rng, 0.0f, 1.0f));
  const auto [c, d] = inn.forward(x, {1.0, -3.0});
  CHECK(c.shape() == LinearDegradation::mean_pool(2).measurement_shape(x.shape()));
  CHECK(d.shape() == Shape{2, 9, 4, 4});
  CHECK(c.value().size() + d.value().size() == x.value().size());

  auto four = small_inn();
  four.scale = 4;
  const CondInn<float> wide(four, 5);
  const auto split4 = wide.forward(x, {0.0});
  CHECK(split4.coarse.shape() == Shape{2, 3, 2, 2});
  CHECK(split4.detail.shape() == Shape{2, 45, 2, 2});

  CHECK_THROWS_AS((void)inn.forward(constant(Tensor<float>({1, 3, 7, 8})), {0.0}), ConfigError);
  CHECK_THROWS_AS((void)inn.forward(x, {0.0, 1.0, 2.0}), ConfigError);
  auto bad = small_inn();
  bad.scale = 1;
  CHECK_THROWS_AS(CondInn<float>(bad, 1), ConfigError);
}

TEST_CASE("inverse undoes forward for random parameters") {
  Rng rng(7);
  std::uniform_real_distribution<double> snr_dist(-5.0, 5.0);
  for (std::uint64_t trial = 0; trial < 20; ++trial) {
    // far from identity: intermediate values reach ~1e4, so check in double
    auto config = small_inn();
    config.output_gain = 1.0;
    CondInn<double> inn(config, 100 + trial);
    randomize_alpha(inn, trial);
    const auto x = constant(Tensor<double>::uniform({1, 3, 8, 8}, rng, 0.0, 1.0));
    const std::vector<double> snr{snr_dist(rng)};
    const auto [c, d] = inn.forward(x, snr);
    CHECK(max_abs_diff(inn.inverse(c, d, snr).value(), x.value()) <= 1e-4);
  }
  for (std::uint64_t trial = 0; trial < 5; ++trial) {
    CondInn<float> inn(small_inn(), 200 + trial);
    const auto x = constant(Tensor<float>::uniform({2, 3, 16, 16}, rng, 0.0f, 1.0f));
    const std::vector<double> snr{snr_dist(rng), snr_dist(rng)};
    const auto [c, d] = inn.forward(x, snr);
    CHECK(max_abs_diff(inn.inverse(c, d, snr).value(), x.value()) <= 1e-4f);
  }
}

TEST_CASE("zeroed couplings reduce to the raw split") {
  CondInn<float> inn(small_inn(), 8);
  zero_couplings(inn);
  Rng rng(9);
  const auto x = constant(Tensor<float>::uniform({1, 3, 8, 8}, rng, 0.0f, 1.0f));
  const auto raw = inn.split(x);
  const auto [c, d] = inn.forward(x, {2.0});
  CHECK(max_abs_diff(c.value(), raw.coarse.value()) == 0.0f);
  CHECK(max_abs_diff(d.value(), raw.detail.value()) == 0.0f);
  CHECK(max_abs_diff(inn.inverse(c, d, {2.0}).value(), x.value()) == 0.0f);
  CHECK(max_abs_diff(inn.inverse(c, d, {2.0}).value(), inn.merge(c, d).value()) == 0.0f);
}

TEST_CASE("snr conditioning is live in every block once alpha depends on snr") {
  CondInn<float> inn(small_inn(), 10);
  Rng rng(11);
  const auto x = constant(Tensor<float>::uniform({1, 3, 8, 8}, rng, 0.0f, 1.0f));
  {
    // at initialization alpha == 1 regardless of snr
    const auto a = inn.forward(x, {-4.0});
    const auto b = inn.forward(x, {4.0});
    CHECK(max_abs_diff(a.coarse.value(), b.coarse.value()) == 0.0f);
  }
  randomize_alpha(inn, 12);
  const auto a = inn.forward(x, {-4.0});
  const auto c = inn.inverse(a.coarse, a.detail, {-4.0});
  const auto d = inn.inverse(a.coarse, a.detail, {4.0});
  CHECK(max_abs_diff(c.value(), d.value()) > 1e-4f);

  Rng block_rng(13);
  const auto h = constant(Tensor<float>::randn({1, inn.config().hidden, 4, 4}, block_rng));
  const auto lo = constant(Tensor<float>::constant({1, 1, 1, 1}, -0.4f));
  const auto hi = constant(Tensor<float>::constant({1, 1, 1, 1}, 0.4f));
  int checked = 0;
  for (int k = 0; k < inn.config().pairs; ++k) {
    for (auto* net : {&inn.predict_net(k), &inn.update_net(k)}) {
      for (int j = 0; j < net->block_count(); ++j) {
        const auto& block = net->block(j);
        CHECK(max_abs_diff(block(h, lo).value(), block(h, hi).value()) > 0.0f);
        ++checked;
      }
    }
  }
  CHECK(checked == 2 * inn.config().pairs * inn.config().blocks);
}

TEST_CASE("inn loss ignores the detail part") {
  CondInn<double> inn(small_inn(3, 4), 14);
  Rng rng(15);
  const auto x = constant(Tensor<double>::uniform({1, 3, 8, 8}, rng, 0.0, 1.0));
  const auto y = constant(Tensor<double>::uniform({1, 3, 4, 4}, rng, 0.0, 1.0));
  const auto [c, d] = inn.forward(x, {0.0});
  // a different image with the same coarse part but another detail part
  const auto shifted = constant(Tensor<double>(d.shape(), d.value().array() + 0.3));
  const auto other = inn.inverse(c, shifted, {0.0});
  CHECK(max_abs_diff(other.value(), x.value()) > 0.1);
  CHECK(inn_loss(inn, other, y, {0.0}).item() ==
        doctest::Approx(inn_loss(inn, x, y, {0.0}).item()).epsilon(1e-10));
}

TEST_CASE("inn training reduces the coarse loss and keeps invertibility") {
  Rng rng(16);
  std::vector<InnSample<float>> samples;
  for (int i = 0; i < 10; ++i) {
    auto x = Tensor<float>::uniform({1, 3, 8, 8}, rng, 0.0f, 1.0f);
    samples.push_back({x, mean_pool(x, 2), 0.0});
  }
  CondInn<float> inn(small_inn(3, 16), 17);
  InnTrainOptions options;
  options.steps = 300;
  options.batch_size = 10;
  options.learning_rate = 1e-3;
  options.seed = 18;
  const auto losses = train_inn(inn, samples, options);
  REQUIRE(losses.size() == 300);
  CHECK(losses.back() < 0.5 * losses.front());
  for (const auto& p : inn.parameters()) CHECK_FALSE(p.var.requires_grad());

  const auto x = constant(samples[3].image);
  const auto [c, d] = inn.forward(x, {0.0});
  CHECK(max_abs_diff(inn.inverse(c, d, {0.0}).value(), x.value()) <= 1e-4f);
  CHECK(inn.trained_snr_low_db == 0.0);
  CHECK(inn.trained_snr_high_db == 0.0);
}

TEST_CASE("inn training is deterministic and uses fresh samples per epoch") {
  Rng rng(19);
  std::vector<Tensor<float>> images;
  for (int i = 0; i < 4; ++i) images.push_back(Tensor<float>::uniform({1, 3, 8, 8}, rng, 0.0f, 1.0f));
  std::vector<int> epochs_seen;
  auto source = [&](std::size_t i, int epoch) {
    epochs_seen.push_back(epoch);
    return InnSample<float>{images[i], mean_pool(images[i], 2), -1.0 + epoch};
  };
  auto run = [&] {
    epochs_seen.clear();
    CondInn<float> inn(small_inn(), 20);
    InnTrainOptions options;
    options.steps = 6;
    options.batch_size = 2;
    options.seed = 21;
    return std::make_pair(train_inn<float>(inn, images.size(), source, options), inn.trained_snr_high_db);
  };
  const auto first = run();
  CHECK(epochs_seen.back() == 2);
  CHECK(first.second == 1.0);
  CHECK(run() == first);

  CondInn<float> inn(small_inn(), 22);
  CHECK_THROWS_AS((void)train_inn(inn, std::vector<InnSample<float>>{}, InnTrainOptions{}),
                  ConfigError);
}
