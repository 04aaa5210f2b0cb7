#include "sing/layers.hpp"
#include "support.hpp"

#include <doctest.h>

using namespace sing;
using sing::testing::gradient_check;
using sing::testing::project;

namespace {

Tensor<double> random(Shape s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  return Tensor<double>::uniform(s, rng, lo, hi);
}

}  // namespace

TEST_CASE("elementwise ops match finite differences") {
  const auto x = random({2, 3, 4, 4}, 1);
  const auto other = constant(random({2, 3, 4, 4}, 2));
  CHECK(gradient_check([&](const Var<double>& v) { return project(add(v, other)); }, x) < 1e-6);
  CHECK(gradient_check([&](const Var<double>& v) { return project(sub(other, v)); }, x) < 1e-6);
  CHECK(gradient_check([&](const Var<double>& v) { return project(mul(v, v)); }, x) < 1e-6);
  CHECK(gradient_check([](const Var<double>& v) { return project(silu(v)); }, x) < 1e-6);
  CHECK(gradient_check([](const Var<double>& v) { return project(sigmoid(v)); }, x) < 1e-6);
  CHECK(gradient_check([](const Var<double>& v) { return project(affine(v, 0.5, 0.5)); }, x) < 1e-6);

  const auto positive = random({1, 2, 3, 3}, 3, 0.5, 2.0);
  CHECK(gradient_check([](const Var<double>& v) { return project(sqrt(v)); }, positive) < 1e-6);
  CHECK(gradient_check([](const Var<double>& v) { return project(rsqrt(v)); }, positive) < 1e-6);
}

TEST_CASE("relu gradient away from the kink") {
  auto x = random({1, 2, 4, 4}, 4);
  for (auto& v : x.array()) v += v > 0 ? 0.1 : -0.1;
  CHECK(gradient_check([](const Var<double>& v) { return project(relu(v)); }, x) < 1e-6);
}

TEST_CASE("reductions and broadcasts match finite differences") {
  const auto x = random({2, 3, 4, 4}, 5);
  const auto gain = constant(random({2, 3, 1, 1}, 6));
  const auto map = constant(random({2, 1, 4, 4}, 7));
  const auto target = constant(random({2, 3, 4, 4}, 8));
  CHECK(gradient_check([](const Var<double>& v) { return mean(square(v)); }, x) < 1e-6);
  CHECK(gradient_check([&](const Var<double>& v) { return mse(v, target); }, x) < 1e-6);
  CHECK(gradient_check([](const Var<double>& v) { return project(channel_sum(v)); }, x) < 1e-6);
  CHECK(gradient_check([&](const Var<double>& v) { return project(channel_scale(v, gain)); }, x) <
        1e-6);
  CHECK(gradient_check([&](const Var<double>& g) { return project(channel_scale(target, g)); },
                       gain.value()) < 1e-6);
  CHECK(gradient_check([&](const Var<double>& b) { return project(channel_bias(target, b)); },
                       gain.value()) < 1e-6);
  CHECK(gradient_check([&](const Var<double>& v) { return project(spatial_scale(v, map)); }, x) <
        1e-6);
  CHECK(gradient_check([&](const Var<double>& m) { return project(spatial_scale(target, m)); },
                       map.value()) < 1e-6);
  CHECK(gradient_check([](const Var<double>& v) { return project(replicate_channels(v, 3)); },
                       map.value()) < 1e-6);
}

TEST_CASE("layout ops are exact permutations with matching adjoints") {
  const auto x = random({2, 3, 4, 6}, 9);
  const auto packed = space_to_depth(constant(x), 2);
  CHECK(packed.shape() == Shape{2, 12, 2, 3});
  CHECK(max_abs_diff(depth_to_space(packed, 2).value(), x) == 0.0);
  // first C channels hold the top-left pixel of each block
  CHECK(packed.value()(1, 2, 1, 2) == x(1, 2, 2, 4));
  CHECK(packed.value()(0, 3 + 1, 0, 0) == x(0, 1, 0, 1));

  CHECK(gradient_check([](const Var<double>& v) { return project(space_to_depth(v, 2)); }, x) <
        1e-6);
  CHECK(gradient_check([](const Var<double>& v) { return project(slice_channels(v, 1, 2)); }, x) <
        1e-6);
  CHECK(gradient_check([&](const Var<double>& v) { return project(concat_channels(v, v)); }, x) <
        1e-6);
  CHECK(gradient_check([](const Var<double>& v) { return project(mean_pool(v, 2)); }, x) < 1e-6);
  CHECK(gradient_check([](const Var<double>& v) { return project(upsample_replicate(v, 2)); },
                       x) < 1e-6);
  CHECK(gradient_check(
            [](const Var<double>& v) { return project(reshape(v, Shape{2, 72, 1, 1})); }, x) <
        1e-6);
}

TEST_CASE("layout ops reject incompatible shapes") {
  const auto x = constant(random({1, 3, 5, 4}, 10));
  CHECK_THROWS_AS((void)space_to_depth(x, 2), ConfigError);
  CHECK_THROWS_AS((void)mean_pool(x, 2), ConfigError);
  CHECK_THROWS_AS((void)slice_channels(x, 2, 2), ConfigError);
  CHECK_THROWS_AS((void)reshape(x, Shape{1, 1, 1, 7}), ConfigError);
}

TEST_CASE("convolutions match finite differences in input, weight and bias") {
  Rng rng(11);
  const auto x = random({2, 3, 6, 6}, 12);
  for (int stride : {1, 2}) {
    const auto w = constant(Tensor<double>::randn({4, 3, 3, 3}, rng));
    const auto b = constant(Tensor<double>::randn({1, 4, 1, 1}, rng));
    CHECK(gradient_check([&](const Var<double>& v) { return project(conv2d(v, w, &b, stride, 1)); },
                         x) < 1e-6);
    CHECK(gradient_check(
              [&](const Var<double>& k) { return project(conv2d(constant(x), k, &b, stride, 1)); },
              w.value()) < 1e-6);
    CHECK(gradient_check(
              [&](const Var<double>& c) { return project(conv2d(constant(x), w, &c, stride, 1)); },
              b.value()) < 1e-6);
  }
  const auto w1 = constant(Tensor<double>::randn({5, 3, 1, 1}, rng));
  CHECK(gradient_check(
            [&](const Var<double>& v) { return project(conv2d<double>(v, w1, nullptr, 1, 0)); },
            x) < 1e-6);

  const auto wt = constant(Tensor<double>::randn({3, 2, 5, 5}, rng));
  const auto bt = constant(Tensor<double>::randn({1, 2, 1, 1}, rng));
  auto up = [&](const Var<double>& v, const Var<double>& k, const Var<double>& c) {
    return conv_transpose2d(v, k, &c, 2, 2, 1);
  };
  CHECK(up(constant(x), wt, bt).shape() == Shape{2, 2, 12, 12});
  CHECK(gradient_check([&](const Var<double>& v) { return project(up(v, wt, bt)); }, x) < 1e-6);
  CHECK(gradient_check([&](const Var<double>& k) { return project(up(constant(x), k, bt)); },
                       wt.value()) < 1e-6);
  CHECK(gradient_check([&](const Var<double>& c) { return project(up(constant(x), wt, c)); },
                       bt.value()) < 1e-6);
}

TEST_CASE("conv2d agrees with a direct loop") {
  const auto x = random({1, 2, 5, 5}, 13);
  Rng rng(14);
  const auto w = Tensor<double>::randn({3, 2, 3, 3}, rng);
  const auto out = conv2d<double>(constant(x), constant(w), nullptr, 2, 1).value();
  REQUIRE(out.shape() == Shape{1, 3, 3, 3});
  for (int o = 0; o < 3; ++o)
    for (int oy = 0; oy < 3; ++oy)
      for (int ox = 0; ox < 3; ++ox) {
        double acc = 0.0;
        for (int c = 0; c < 2; ++c)
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
              const int iy = oy * 2 - 1 + ky;
              const int ix = ox * 2 - 1 + kx;
              if (iy >= 0 && iy < 5 && ix >= 0 && ix < 5) acc += w(o, c, ky, kx) * x(0, c, iy, ix);
            }
        CHECK(out(0, o, oy, ox) == doctest::Approx(acc).epsilon(1e-12));
      }
}

TEST_CASE("linear, gdn and sample normalization match finite differences") {
  Rng rng(15);
  const auto x = random({3, 5, 1, 1}, 16);
  const auto w = constant(Tensor<double>::randn({4, 5, 1, 1}, rng));
  const auto b = constant(Tensor<double>::randn({1, 4, 1, 1}, rng));
  CHECK(gradient_check([&](const Var<double>& v) { return project(linear(v, w, b)); }, x) < 1e-6);
  CHECK(gradient_check([&](const Var<double>& k) { return project(linear(constant(x), k, b)); },
                       w.value()) < 1e-6);
  CHECK(gradient_check([](const Var<double>& v) { return project(normalize_samples(v, 2.0)); },
                       x) < 1e-6);

  const auto img = random({2, 4, 3, 3}, 17);
  for (bool inverse : {false, true}) {
    Gdn<double> gdn(4, inverse);
    CHECK(gradient_check([&](const Var<double>& v) { return project(gdn(v)); }, img) < 1e-6);
  }
}

TEST_CASE("normalize_samples fixes every sample norm and rejects zero") {
  const auto x = random({4, 10, 1, 1}, 18);
  const auto y = normalize_samples(constant(x), 3.0).value();
  for (int n = 0; n < 4; ++n) CHECK(y.sample(n).array().matrix().norm() == doctest::Approx(3.0));
  CHECK_THROWS_AS((void)normalize_samples(constant(Tensor<double>({1, 4, 1, 1})), 1.0),
                  std::domain_error);
}

TEST_CASE("frozen inputs record no graph") {
  const auto a = constant(random({1, 2, 2, 2}, 19));
  const auto y = relu(add(a, a));
  CHECK_FALSE(y.requires_grad());
  CHECK(y.ptr()->parents.empty());
}

TEST_CASE("gradients accumulate across shared uses") {
  const Var<double> x(Tensor<double>::constant({1, 1, 1, 1}, 3.0), true);
  const auto y = add(mul(x, x), scale(x, 2.0));  // x^2 + 2x
  y.backward();
  CHECK(x.grad().array()[0] == doctest::Approx(8.0));
}

TEST_CASE("adam moves a quadratic toward its minimum") {
  ParameterList<double> params;
  auto p = parameter(Tensor<double>::constant({1, 3, 1, 1}, 5.0));
  params.add("p", p);
  Adam<double> opt(params, 0.1);
  for (int i = 0; i < 300; ++i) {
    opt.zero_grad();
    sum(square(p)).backward();
    opt.step();
  }
  CHECK(p.value().array().abs().maxCoeff() < 0.05);
  CHECK(opt.steps() == 300);
}

TEST_CASE("parameter list state round-trips and validates shapes") {
  Rng rng(20);
  Conv2d<float> conv(2, 3, 3, 1, 1, true, rng);
  ParameterList<float> list;
  conv.collect(list, "conv");
  CHECK(list.size() == 2);
  CHECK(list.scalar_count() == 3 * 2 * 9 + 3);
  auto state = list.state();
  Conv2d<float> other(2, 3, 3, 1, 1, true, rng);
  ParameterList<float> other_list;
  other.collect(other_list, "conv");
  other_list.load(state);
  CHECK(max_abs_diff(other_list.at("conv.weight").value(), state.at("conv.weight")) == 0.0f);

  state.at("conv.bias") = Tensor<float>({1, 4, 1, 1});
  CHECK_THROWS_AS(other_list.load(state), ConfigError);
  state.erase("conv.bias");
  CHECK_THROWS_AS(other_list.load(state), ConfigError);
}
