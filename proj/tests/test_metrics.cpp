#include "sing/metrics.hpp"
#include "support.hpp"

#include <doctest.h>

#include <cmath>

using namespace sing;

namespace {

Tensor<float> image(std::uint64_t seed, Shape s = {1, 3, 16, 16}) {
  Rng rng(seed);
  return Tensor<float>::uniform(s, rng, 0.0f, 1.0f);
}

}  // namespace

TEST_CASE("psnr examples") {
  const auto a = Tensor<float>::constant({1, 3, 8, 8}, 0.5f);
  const auto b = Tensor<float>::constant({1, 3, 8, 8}, 0.6f);
  CHECK(std::isinf(psnr(a, a)));
  CHECK(mse(a, b) == doctest::Approx(0.01).epsilon(1e-5));
  CHECK(psnr(a, b) == doctest::Approx(20.0).epsilon(1e-5));
  CHECK(psnr(a, b, 255.0) == doctest::Approx(20.0 + 20.0 * std::log10(255.0)).epsilon(1e-5));
  CHECK_THROWS_AS((void)psnr(a, b, 0.0), ConfigError);
  CHECK_THROWS_AS((void)mse(a, Tensor<float>({1, 3, 8, 4})), ConfigError);
}

TEST_CASE("feature distance is a symmetric, non-negative dissimilarity") {
  const FeatureDistance<float> backend;
  const auto x = image(1);
  const auto y = image(2);
  CHECK(perceptual_distance(backend, x, x) == 0.0);
  const double xy = perceptual_distance(backend, x, y);
  CHECK(xy > 0.0);
  CHECK(perceptual_distance(backend, y, x) == doctest::Approx(xy).epsilon(1e-6));
}

TEST_CASE("feature distance grows with distortion") {
  const FeatureDistance<float> backend;
  const auto x = image(3);
  Rng rng(4);
  const auto noise = Tensor<float>::randn(x.shape(), rng);
  double previous = 0.0;
  for (float level : {0.02f, 0.1f, 0.3f}) {
    Tensor<float> noisy(x.shape(), x.array() + level * noise.array());
    const double d = perceptual_distance(backend, x, noisy);
    CHECK(d > previous);
    previous = d;
  }
}

TEST_CASE("feature distance is deterministic per seed and reports its source") {
  const FeatureDistance<float> a(7);
  const FeatureDistance<float> b(7);
  const FeatureDistance<float> c(8);
  const auto x = image(5);
  const auto y = image(6);
  CHECK(perceptual_distance(a, x, y) == perceptual_distance(b, x, y));
  CHECK(perceptual_distance(a, x, y) != perceptual_distance(c, x, y));
  CHECK(a.id() != c.id());

  FeatureDistance<float> loaded(9);
  loaded.load(a.parameters().state(), "copied");
  CHECK(loaded.id() == "copied");
  CHECK(perceptual_distance(loaded, x, y) == perceptual_distance(a, x, y));
}

TEST_CASE("feature distance layer weights") {
  FeatureDistance<float> backend;
  const auto x = image(10);
  const auto y = image(11);
  const double all = perceptual_distance(backend, x, y);
  backend.set_layer_weights({1.0f, 0.0f, 0.0f});
  const double first = perceptual_distance(backend, x, y);
  CHECK(first > 0.0);
  CHECK(first < all);
  CHECK_THROWS_AS(backend.set_layer_weights({1.0f}), ConfigError);
  CHECK_THROWS_AS(backend.set_layer_weights({1.0f, -1.0f, 0.0f}), ConfigError);
}

TEST_CASE("feature distance gradient matches finite differences") {
  const FeatureDistance<double> backend(12, 3, {{4, 1}, {6, 2}});
  Rng rng(13);
  const auto target = constant(Tensor<double>::uniform({1, 3, 6, 6}, rng, 0.0, 1.0));
  const auto x = Tensor<double>::uniform({1, 3, 6, 6}, rng, 0.0, 1.0);
  CHECK(sing::testing::gradient_check(
            [&](const Var<double>& v) { return backend.distance(v, target); }, x) < 1e-4);
}
