#pragma once

#include "sing/autograd.hpp"

#include <cmath>
#include <map>
#include <random>
#include <string>
#include <vector>

namespace sing {

using Rng = std::mt19937_64;

template <typename Scalar>
struct NamedParameter {
  std::string name;
  Var<Scalar> var;
};

/// Ordered, named view over the trainable tensors of a model.
template <typename Scalar>
class ParameterList {
 public:
  using State = std::map<std::string, Tensor<Scalar>>;

  void add(std::string name, Var<Scalar> var) {
    items_.push_back({std::move(name), std::move(var)});
  }

  [[nodiscard]] auto begin() const { return items_.begin(); }
  [[nodiscard]] auto end() const { return items_.end(); }
  [[nodiscard]] std::size_t size() const { return items_.size(); }

  [[nodiscard]] Eigen::Index scalar_count() const {
    Eigen::Index total = 0;
    for (const auto& p : items_) total += p.var.value().size();
    return total;
  }

  void zero_grad() {
    for (auto& p : items_) p.var.zero_grad();
  }

  void set_trainable(bool trainable) {
    for (auto& p : items_) p.var.set_requires_grad(trainable);
  }

  [[nodiscard]] State state() const {
    State out;
    for (const auto& p : items_) out.emplace(p.name, p.var.value());
    return out;
  }

  template <typename Other>
  void load(const std::map<std::string, Tensor<Other>>& state) {
    for (auto& p : items_) {
      auto it = state.find(p.name);
      if (it == state.end()) throw ConfigError("missing parameter '" + p.name + "'");
      if (it->second.shape() != p.var.shape()) {
        throw ConfigError("parameter '" + p.name + "' has shape " + it->second.shape().str() +
                          ", expected " + p.var.shape().str());
      }
      p.var.mutable_value() = it->second.template cast<Scalar>();
    }
  }

  [[nodiscard]] Var<Scalar>& at(const std::string& name) {
    for (auto& p : items_) {
      if (p.name == name) return p.var;
    }
    throw ConfigError("no parameter named '" + name + "'");
  }

 private:
  std::vector<NamedParameter<Scalar>> items_;
};

namespace init {

template <typename Scalar>
Tensor<Scalar> he_normal(Shape shape, Eigen::Index fan_in, Rng& rng, double gain = 1.0) {
  Tensor<Scalar> out(shape);
  if (gain == 0.0) return out;
  const double stddev = gain * std::sqrt(2.0 / static_cast<double>(fan_in));
  std::normal_distribution<double> normal(0.0, stddev);
  for (Eigen::Index i = 0; i < out.size(); ++i) out.array()[i] = static_cast<Scalar>(normal(rng));
  return out;
}

}  // namespace init

template <typename Scalar>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(int in_channels, int out_channels, int kernel, int stride, int pad, bool with_bias,
         Rng& rng, double gain = 1.0)
      : stride_(stride), pad_(pad), has_bias_(with_bias) {
    weight_ = parameter(init::he_normal<Scalar>(Shape{out_channels, in_channels, kernel, kernel},
                                                in_channels * kernel * kernel, rng, gain));
    if (with_bias) bias_ = parameter(Tensor<Scalar>::zeros(Shape{1, out_channels, 1, 1}));
  }

  [[nodiscard]] Var<Scalar> operator()(const Var<Scalar>& x) const {
    return conv2d(x, weight_, has_bias_ ? &bias_ : nullptr, stride_, pad_);
  }

  void collect(ParameterList<Scalar>& list, const std::string& prefix) const {
    list.add(prefix + ".weight", weight_);
    if (has_bias_) list.add(prefix + ".bias", bias_);
  }

  [[nodiscard]] Var<Scalar>& weight() { return weight_; }
  [[nodiscard]] Var<Scalar>& bias() { return bias_; }

 private:
  Var<Scalar> weight_;
  Var<Scalar> bias_;
  int stride_ = 1;
  int pad_ = 0;
  bool has_bias_ = false;
};

template <typename Scalar>
class ConvTranspose2d {
 public:
  ConvTranspose2d() = default;
  ConvTranspose2d(int in_channels, int out_channels, int kernel, int stride, int pad,
                  int output_pad, Rng& rng, double gain = 1.0)
      : stride_(stride), pad_(pad), output_pad_(output_pad) {
    // Fan-in of a transposed conv is Cin * K^2 / stride^2 per output pixel.
    const Eigen::Index fan_in =
        std::max<Eigen::Index>(1, in_channels * kernel * kernel / (stride * stride));
    weight_ = parameter(
        init::he_normal<Scalar>(Shape{in_channels, out_channels, kernel, kernel}, fan_in, rng, gain));
    bias_ = parameter(Tensor<Scalar>::zeros(Shape{1, out_channels, 1, 1}));
  }

  [[nodiscard]] Var<Scalar> operator()(const Var<Scalar>& x) const {
    return conv_transpose2d(x, weight_, &bias_, stride_, pad_, output_pad_);
  }

  void collect(ParameterList<Scalar>& list, const std::string& prefix) const {
    list.add(prefix + ".weight", weight_);
    list.add(prefix + ".bias", bias_);
  }

 private:
  Var<Scalar> weight_;
  Var<Scalar> bias_;
  int stride_ = 1;
  int pad_ = 0;
  int output_pad_ = 0;
};

template <typename Scalar>
class Linear {
 public:
  Linear() = default;
  Linear(int in_features, int out_features, Rng& rng, double gain = 1.0) {
    weight_ = parameter(
        init::he_normal<Scalar>(Shape{out_features, in_features, 1, 1}, in_features, rng, gain));
    bias_ = parameter(Tensor<Scalar>::zeros(Shape{1, out_features, 1, 1}));
  }

  [[nodiscard]] Var<Scalar> operator()(const Var<Scalar>& x) const {
    return linear(x, weight_, bias_);
  }

  void collect(ParameterList<Scalar>& list, const std::string& prefix) const {
    list.add(prefix + ".weight", weight_);
    list.add(prefix + ".bias", bias_);
  }

  [[nodiscard]] Var<Scalar>& weight() { return weight_; }
  [[nodiscard]] Var<Scalar>& bias() { return bias_; }

 private:
  Var<Scalar> weight_;
  Var<Scalar> bias_;
};

/// Generalized divisive normalization: y_i = x_i / sqrt(beta_i + sum_j gamma_ij x_j^2).
/// The inverse variant multiplies instead. beta and gamma are stored as square
/// roots so the effective values stay non-negative under gradient updates.
template <typename Scalar>
class Gdn {
 public:
  Gdn() = default;
  Gdn(int channels, bool inverse) : inverse_(inverse) {
    beta_ = parameter(Tensor<Scalar>::constant(Shape{1, channels, 1, 1}, Scalar(1)));
    Tensor<Scalar> gamma(Shape{channels, channels, 1, 1});
    for (int c = 0; c < channels; ++c) gamma(c, c, 0, 0) = static_cast<Scalar>(std::sqrt(0.1));
    gamma_ = parameter(std::move(gamma));
  }

  [[nodiscard]] Var<Scalar> operator()(const Var<Scalar>& x) const {
    auto beta = affine(square(beta_), Scalar(1), Scalar(1e-6));
    auto norm = channel_bias(conv2d<Scalar>(square(x), square(gamma_), nullptr, 1, 0), beta);
    return mul(x, inverse_ ? sqrt(norm) : rsqrt(norm));
  }

  void collect(ParameterList<Scalar>& list, const std::string& prefix) const {
    list.add(prefix + ".beta", beta_);
    list.add(prefix + ".gamma", gamma_);
  }

 private:
  Var<Scalar> beta_;
  Var<Scalar> gamma_;
  bool inverse_ = false;
};

/// Adaptive-moment first-order optimizer with bias correction.
template <typename Scalar>
class Adam {
 public:
  Adam(ParameterList<Scalar> params, double lr, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8)
      : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& p : params_) {
      first_.push_back(Tensor<Scalar>::Array::Zero(p.var.value().size()));
      second_.push_back(Tensor<Scalar>::Array::Zero(p.var.value().size()));
    }
  }

  void zero_grad() { params_.zero_grad(); }

  void step() {
    ++steps_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(steps_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(steps_));
    const auto step_size = static_cast<Scalar>(lr_ * std::sqrt(c2) / c1);
    const auto b1 = static_cast<Scalar>(beta1_);
    const auto b2 = static_cast<Scalar>(beta2_);
    const auto eps = static_cast<Scalar>(eps_ * std::sqrt(c2));
    std::size_t i = 0;
    for (const auto& p : params_) {
      Var<Scalar> var = p.var;
      const auto& g = var.grad().array();
      first_[i] = b1 * first_[i] + (Scalar(1) - b1) * g;
      second_[i] = b2 * second_[i] + (Scalar(1) - b2) * g.square();
      var.mutable_value().array() -= step_size * first_[i] / (second_[i].sqrt() + eps);
      ++i;
    }
  }

  [[nodiscard]] long steps() const { return steps_; }
  void set_learning_rate(double lr) { lr_ = lr; }

 private:
  ParameterList<Scalar> params_;
  double lr_;
  double beta1_;
  double beta2_;
  double eps_;
  long steps_ = 0;
  std::vector<typename Tensor<Scalar>::Array> first_;
  std::vector<typename Tensor<Scalar>::Array> second_;
};

}  // namespace sing
