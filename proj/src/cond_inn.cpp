#include "sing/cond_inn.hpp"

#include <algorithm>
#include <numeric>

namespace sing {

void CondInnConfig::validate() const {
  if (channels < 1) throw ConfigError("inn channels must be positive");
  if (scale < 2) throw ConfigError("inn scale must be >= 2 so the detail part is non-empty");
  if (hidden < 1 || pairs < 1 || blocks < 0) throw ConfigError("invalid inn architecture");
}

template <typename Scalar>
CondBlock<Scalar>::CondBlock(int channels, Rng& rng)
    : conv1_(channels, channels, 3, 1, 1, true, rng),
      conv2_(channels, channels, 3, 1, 1, false, rng),
      alpha_(1, channels, rng, 0.0) {
  alpha_.bias().mutable_value().array().setOnes();
}

template <typename Scalar>
Var<Scalar> CondBlock<Scalar>::operator()(const Var<Scalar>& x, const Var<Scalar>& snr) const {
  return add(x, channel_scale(conv2_(relu(conv1_(x))), gain(snr)));
}

template <typename Scalar>
void CondBlock<Scalar>::collect(ParameterList<Scalar>& list, const std::string& prefix) const {
  conv1_.collect(list, prefix + ".conv1");
  conv2_.collect(list, prefix + ".conv2");
  alpha_.collect(list, prefix + ".alpha");
}

template <typename Scalar>
CouplingNet<Scalar>::CouplingNet(int in_channels, int out_channels, int hidden, int blocks,
                                 double output_gain, Rng& rng)
    : conv_in_(in_channels, hidden, 3, 1, 1, true, rng) {
  for (int j = 0; j < blocks; ++j) blocks_.emplace_back(hidden, rng);
  conv_out_ = Conv2d<Scalar>(hidden, out_channels, 3, 1, 1, false, rng, output_gain);
}

template <typename Scalar>
Var<Scalar> CouplingNet<Scalar>::operator()(const Var<Scalar>& x, const Var<Scalar>& snr) const {
  Var<Scalar> h = conv_in_(x);
  for (const auto& block : blocks_) h = block(h, snr);
  return conv_out_(h);
}

template <typename Scalar>
void CouplingNet<Scalar>::collect(ParameterList<Scalar>& list, const std::string& prefix) const {
  conv_in_.collect(list, prefix + ".conv_in");
  for (std::size_t j = 0; j < blocks_.size(); ++j) {
    blocks_[j].collect(list, prefix + ".block" + std::to_string(j));
  }
  conv_out_.collect(list, prefix + ".conv_out");
}

template <typename Scalar>
CondInn<Scalar>::CondInn(CondInnConfig config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng(seed);
  const int c = config_.channels;
  const int d = c * (config_.scale * config_.scale - 1);
  for (int k = 0; k < config_.pairs; ++k) {
    predict_.emplace_back(c, d, config_.hidden, config_.blocks, config_.output_gain, rng);
    update_.emplace_back(d, c, config_.hidden, config_.blocks, config_.output_gain, rng);
  }
  parameters().set_trainable(false);
}

template <typename Scalar>
Var<Scalar> CondInn<Scalar>::condition(const std::vector<double>& snr_db, int batch) const {
  if (static_cast<int>(snr_db.size()) != batch && snr_db.size() != 1) {
    throw ConfigError("inn: expected " + std::to_string(batch) + " snr values, got " +
                      std::to_string(snr_db.size()));
  }
  Tensor<Scalar> out(Shape{batch, 1, 1, 1});
  for (int n = 0; n < batch; ++n) {
    out.array()[n] = static_cast<Scalar>(snr_db[snr_db.size() == 1 ? 0 : n] / 10.0);
  }
  return constant(std::move(out));
}

template <typename Scalar>
InnSplit<Scalar> CondInn<Scalar>::split(const Var<Scalar>& x) const {
  if (x.shape().c != config_.channels) {
    throw ConfigError("inn expects " + std::to_string(config_.channels) + " channels, got " +
                      x.shape().str());
  }
  const Var<Scalar> packed = space_to_depth(x, config_.scale);
  const int c = config_.channels;
  return {slice_channels(packed, 0, c), slice_channels(packed, c, packed.shape().c - c)};
}

template <typename Scalar>
Var<Scalar> CondInn<Scalar>::merge(const Var<Scalar>& coarse, const Var<Scalar>& detail) const {
  return depth_to_space(concat_channels(coarse, detail), config_.scale);
}

template <typename Scalar>
InnSplit<Scalar> CondInn<Scalar>::forward(const Var<Scalar>& x,
                                          const std::vector<double>& snr_db) const {
  auto [c, d] = split(x);
  const Var<Scalar> snr = condition(snr_db, x.shape().n);
  for (int k = 0; k < config_.pairs; ++k) {
    d = sub(d, predict_[k](c, snr));
    c = add(c, update_[k](d, snr));
  }
  return {c, d};
}

template <typename Scalar>
Var<Scalar> CondInn<Scalar>::inverse(const Var<Scalar>& coarse, const Var<Scalar>& detail,
                                     const std::vector<double>& snr_db) const {
  Var<Scalar> c = coarse;
  Var<Scalar> d = detail;
  const Var<Scalar> snr = condition(snr_db, coarse.shape().n);
  for (int k = config_.pairs - 1; k >= 0; --k) {
    c = sub(c, update_[k](d, snr));
    d = add(d, predict_[k](c, snr));
  }
  return merge(c, d);
}

template <typename Scalar>
ParameterList<Scalar> CondInn<Scalar>::parameters() const {
  ParameterList<Scalar> list;
  for (int k = 0; k < config_.pairs; ++k) {
    predict_[k].collect(list, "pair" + std::to_string(k) + ".predict");
    update_[k].collect(list, "pair" + std::to_string(k) + ".update");
  }
  return list;
}

template <typename Scalar>
Var<Scalar> inn_loss(const CondInn<Scalar>& model, const Var<Scalar>& images,
                     const Var<Scalar>& measurements, const std::vector<double>& snr_db) {
  const auto split = model.forward(images, snr_db);
  const auto n = static_cast<Scalar>(images.shape().n);
  return scale(sum(square(sub(split.coarse, measurements))), Scalar(1) / n);
}

template <typename Scalar>
std::vector<double> train_inn(CondInn<Scalar>& model, std::size_t dataset_size,
                              const InnSampleSource<Scalar>& source, const InnTrainOptions& options,
                              const std::function<void(int, double)>& on_step) {
  if (dataset_size == 0) throw ConfigError("inn training needs a non-empty dataset");
  if (options.batch_size < 1 || options.steps < 0) throw ConfigError("invalid batch or step count");
  auto params = model.parameters();
  params.set_trainable(true);
  Adam<Scalar> optimizer(params, options.learning_rate);
  Rng rng(options.seed);
  std::vector<std::size_t> order(dataset_size);
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();
  int epoch = -1;
  double lo = model.trained_snr_low_db;
  double hi = model.trained_snr_high_db;
  bool seen = false;

  std::vector<double> losses;
  for (int step = 0; step < options.steps; ++step) {
    std::vector<Tensor<Scalar>> images;
    std::vector<Tensor<Scalar>> measurements;
    std::vector<double> snr;
    for (int b = 0; b < options.batch_size; ++b) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
        ++epoch;
      }
      InnSample<Scalar> sample = source(order[cursor++], epoch);
      lo = seen ? std::min(lo, sample.snr_db) : sample.snr_db;
      hi = seen ? std::max(hi, sample.snr_db) : sample.snr_db;
      seen = true;
      images.push_back(std::move(sample.image));
      measurements.push_back(std::move(sample.measurement));
      snr.push_back(sample.snr_db);
    }
    const Var<Scalar> loss =
        inn_loss(model, constant(stack(images)), constant(stack(measurements)), snr);
    optimizer.zero_grad();
    loss.backward();
    optimizer.step();
    const double value = static_cast<double>(loss.item());
    losses.push_back(value);
    if (on_step) on_step(step, value);
  }
  if (seen) {
    model.trained_snr_low_db = lo;
    model.trained_snr_high_db = hi;
  }
  params.set_trainable(false);
  return losses;
}

template <typename Scalar>
std::vector<double> train_inn(CondInn<Scalar>& model, const std::vector<InnSample<Scalar>>& samples,
                              const InnTrainOptions& options,
                              const std::function<void(int, double)>& on_step) {
  return train_inn<Scalar>(
      model, samples.size(), [&](std::size_t i, int) { return samples[i]; }, options, on_step);
}

#define SING_INN_INSTANTIATE(S)                                                                  \
  template class CondBlock<S>;                                                                   \
  template class CouplingNet<S>;                                                                 \
  template class CondInn<S>;                                                                     \
  template Var<S> inn_loss<S>(const CondInn<S>&, const Var<S>&, const Var<S>&,                   \
                              const std::vector<double>&);                                       \
  template std::vector<double> train_inn<S>(CondInn<S>&, std::size_t, const InnSampleSource<S>&, \
                                            const InnTrainOptions&,                              \
                                            const std::function<void(int, double)>&);            \
  template std::vector<double> train_inn<S>(CondInn<S>&, const std::vector<InnSample<S>>&,       \
                                            const InnTrainOptions&,                              \
                                            const std::function<void(int, double)>&);

SING_INN_INSTANTIATE(float)
SING_INN_INSTANTIATE(double)

#undef SING_INN_INSTANTIATE

}  // namespace sing
