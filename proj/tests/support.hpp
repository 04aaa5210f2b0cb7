#pragma once

#include "sing/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

namespace sing::testing {

using Objective = std::function<double(const Tensor<double>&)>;

/// Central-difference gradient of f at x.
inline Tensor<double> numeric_gradient(const Objective& f, const Tensor<double>& x,
                                       double h = 1e-5) {
  Tensor<double> g(x.shape());
  Tensor<double> probe = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double keep = probe.array()[i];
    probe.array()[i] = keep + h;
    const double up = f(probe);
    probe.array()[i] = keep - h;
    const double down = f(probe);
    probe.array()[i] = keep;
    g.array()[i] = (up - down) / (2.0 * h);
  }
  return g;
}

/// ||a - b|| / max(||a||, ||b||).
inline double relative_error(const Tensor<double>& a, const Tensor<double>& b) {
  const double scale = std::max({a.array().matrix().norm(), b.array().matrix().norm(), 1e-12});
  return (a.array() - b.array()).matrix().norm() / scale;
}

/// Relative error between the tape gradient of a scalar graph and central differences.
inline double gradient_check(const std::function<Var<double>(const Var<double>&)>& graph,
                             const Tensor<double>& x, double h = 1e-5) {
  const Var<double> input(x, true);
  const Var<double> out = graph(input);
  out.backward();
  const Tensor<double> analytic = input.grad();
  const auto numeric = numeric_gradient(
      [&](const Tensor<double>& p) { return graph(constant(p)).item(); }, x, h);
  return relative_error(analytic, numeric);
}

/// Fixed random projection turning a tensor-valued graph into a scalar one.
inline Var<double> project(const Var<double>& y, std::uint64_t seed = 99) {
  std::mt19937_64 rng(seed);
  return sum(mul(y, constant(Tensor<double>::randn(y.shape(), rng))));
}

}  // namespace sing::testing
