#include "sing/deepjscc.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace sing {

int JsccConfig::channel_uses() const {
  return static_cast<int>(std::floor(bcr * static_cast<double>(source_dim())));
}

void JsccConfig::validate() const {
  if (height <= 0 || width <= 0 || channels <= 0) throw ConfigError("image shape must be positive");
  if (stages < 1) throw ConfigError("jscc needs at least one stage");
  const int factor = 1 << stages;
  if (height % factor != 0 || width % factor != 0) {
    throw ConfigError("image size " + std::to_string(height) + "x" + std::to_string(width) +
                      " not divisible by 2^" + std::to_string(stages));
  }
  if (filters < 1) throw ConfigError("jscc filters must be positive");
  if (channel_uses() < 1) {
    throw ConfigError("bcr " + std::to_string(bcr) + " yields k < 1 channel uses");
  }
  if (lambda_perceptual < 0.0) throw ConfigError("lambda must be non-negative");
  if (!(avg_power > 0.0)) throw ConfigError("average power must be positive");
}

template <typename Scalar>
JsccModel<Scalar>::JsccModel(JsccConfig config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng(seed);
  const int f = config_.filters;
  int in = config_.channels;
  for (int s = 0; s < config_.stages; ++s) {
    enc_convs_.emplace_back(in, f, 5, 2, 2, true, rng);
    enc_gdn_.emplace_back(f, false);
    in = f;
  }
  const int bottleneck_h = config_.height >> config_.stages;
  const int bottleneck_w = config_.width >> config_.stages;
  const int flat = f * bottleneck_h * bottleneck_w;
  const int reals = 2 * config_.channel_uses();
  enc_project_ = Linear<Scalar>(flat, reals, rng, 0.5);
  dec_project_ = Linear<Scalar>(reals + (config_.snr_side_input ? 1 : 0), flat, rng, 0.5);
  for (int s = 0; s < config_.stages; ++s) {
    const bool last = s + 1 == config_.stages;
    dec_igdn_.emplace_back(f, true);
    dec_convs_.emplace_back(f, last ? config_.channels : f, 5, 2, 2, 1, rng);
  }
  parameters().set_trainable(false);
}

template <typename Scalar>
Var<Scalar> JsccModel<Scalar>::encode_symbols(const Var<Scalar>& images) const {
  const Shape in = images.shape();
  if (in.c != config_.channels || in.h != config_.height || in.w != config_.width) {
    throw ConfigError("encode: image shape " + in.str() + " does not match configured " +
                      config_.image_shape(in.n).str());
  }
  Var<Scalar> h = images;
  for (std::size_t s = 0; s < enc_convs_.size(); ++s) h = enc_gdn_[s](enc_convs_[s](h));
  h = reshape(h, Shape{in.n, static_cast<int>(h.shape().sample()), 1, 1});
  const int k = config_.channel_uses();
  const auto target = static_cast<Scalar>(std::sqrt(k * config_.avg_power));
  return normalize_samples(enc_project_(h), target);
}

template <typename Scalar>
Var<Scalar> JsccModel<Scalar>::decode_symbols(const Var<Scalar>& symbols,
                                              const std::vector<double>& snr_db) const {
  const Shape in = symbols.shape();
  const int reals = 2 * config_.channel_uses();
  if (in.sample() != reals) {
    throw ConfigError("decode: expected " + std::to_string(reals) + " reals per sample, got " +
                      std::to_string(in.sample()));
  }
  Var<Scalar> z = reshape(symbols, Shape{in.n, reals, 1, 1});
  if (config_.snr_side_input) {
    if (static_cast<int>(snr_db.size()) != in.n) {
      throw ConfigError("decode: one snr value per sample required");
    }
    Tensor<Scalar> side(Shape{in.n, 1, 1, 1});
    for (int n = 0; n < in.n; ++n) side.array()[n] = static_cast<Scalar>(snr_db[n] / 10.0);
    z = concat_channels(z, constant(std::move(side)));
  }
  const int f = config_.filters;
  Var<Scalar> h = reshape(dec_project_(z), Shape{in.n, f, config_.height >> config_.stages,
                                                 config_.width >> config_.stages});
  for (std::size_t s = 0; s < dec_convs_.size(); ++s) h = dec_convs_[s](dec_igdn_[s](h));
  return sigmoid(h);
}

template <typename Scalar>
ParameterList<Scalar> JsccModel<Scalar>::parameters() const {
  ParameterList<Scalar> list;
  for (std::size_t s = 0; s < enc_convs_.size(); ++s) {
    enc_convs_[s].collect(list, "encoder.conv" + std::to_string(s));
    enc_gdn_[s].collect(list, "encoder.gdn" + std::to_string(s));
  }
  enc_project_.collect(list, "encoder.project");
  dec_project_.collect(list, "decoder.project");
  for (std::size_t s = 0; s < dec_convs_.size(); ++s) {
    dec_igdn_[s].collect(list, "decoder.igdn" + std::to_string(s));
    dec_convs_[s].collect(list, "decoder.deconv" + std::to_string(s));
  }
  return list;
}

template <typename Scalar>
channel::ChannelVector<Scalar> encode(const JsccModel<Scalar>& model, const Tensor<Scalar>& image) {
  const Var<Scalar> reals = model.encode_symbols(constant(image));
  if (reals.shape().n != 1) throw ConfigError("encode expects a single image");
  return channel::pack<Scalar>(reals.value().array().matrix());
}

template <typename Scalar>
Tensor<Scalar> decode(const JsccModel<Scalar>& model, const channel::ChannelVector<Scalar>& z_hat,
                      double snr_db) {
  const int k = model.config().channel_uses();
  if (z_hat.size() != k) {
    throw ConfigError("decode: expected " + std::to_string(k) + " symbols, got " +
                      std::to_string(z_hat.size()));
  }
  const auto reals = channel::unpack(z_hat);
  Tensor<Scalar> packed(Shape{1, 2 * k, 1, 1}, reals.array());
  Tensor<Scalar> out = model.decode_symbols(constant(std::move(packed)), {snr_db}).value();
  out.array() = out.array().max(Scalar(0)).min(Scalar(1));
  return out;
}

template <typename Scalar>
Tensor<Scalar> transmit(const JsccModel<Scalar>& model, const Tensor<Scalar>& image, double snr_db,
                        std::uint64_t seed) {
  const auto z = encode(model, image);
  const auto z_hat =
      channel::awgn(z, channel::snr_to_sigma_sq(snr_db, model.config().avg_power), seed);
  return decode(model, z_hat, snr_db);
}

template <typename Scalar>
Var<Scalar> composite_loss(const Var<Scalar>& x_hat, const Var<Scalar>& x, double lambda,
                           const PerceptualBackend<Scalar>& perceptual) {
  if (x_hat.shape() != x.shape()) {
    throw ConfigError("composite_loss: shape mismatch " + x_hat.shape().str() + " vs " +
                      x.shape().str());
  }
  Var<Scalar> loss = mse(x_hat, x);
  if (lambda != 0.0) {
    loss = add(loss, scale(perceptual.distance(x_hat, x), static_cast<Scalar>(lambda)));
  }
  return loss;
}

template <typename Scalar>
JsccModel<Scalar> train(const JsccConfig& config, const std::vector<Tensor<Scalar>>& dataset,
                        const JsccTrainOptions& options, const PerceptualBackend<Scalar>& perceptual,
                        const JsccStepCallback& on_step) {
  if (dataset.empty()) throw ConfigError("jscc training needs a non-empty dataset");
  if (options.snr_low_db > options.snr_high_db) {
    throw ConfigError("snr range low must not exceed high");
  }
  if (options.batch_size < 1 || options.steps < 0) throw ConfigError("invalid batch or step count");
  JsccModel<Scalar> model(config, options.seed);
  model.trained_snr_low_db = options.snr_low_db;
  model.trained_snr_high_db = options.snr_high_db;
  auto params = model.parameters();
  params.set_trainable(true);
  Adam<Scalar> optimizer(params, options.learning_rate);

  Rng rng(options.seed ^ 0x5851f42d4c957f2dULL);
  std::uniform_real_distribution<double> snr_dist(options.snr_low_db, options.snr_high_db);
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();
  const int k = config.channel_uses();

  for (int step = 0; step < options.steps; ++step) {
    std::vector<Tensor<Scalar>> batch;
    for (int b = 0; b < options.batch_size; ++b) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      batch.push_back(dataset[order[cursor++]]);
    }
    const int n = static_cast<int>(batch.size());
    const double snr = options.snr_low_db == options.snr_high_db ? options.snr_low_db : snr_dist(rng);
    const double sigma_sq = channel::snr_to_sigma_sq(snr, config.avg_power);

    const Var<Scalar> x = constant(stack(batch));
    const Var<Scalar> z = model.encode_symbols(x);
    const auto noise = Tensor<Scalar>::randn(Shape{n, 2 * k, 1, 1}, rng,
                                             static_cast<Scalar>(std::sqrt(sigma_sq / 2.0)));
    const Var<Scalar> x_hat =
        model.decode_symbols(add(z, constant(noise)), std::vector<double>(n, snr));
    const Var<Scalar> loss = composite_loss(x_hat, x, config.lambda_perceptual, perceptual);

    optimizer.zero_grad();
    loss.backward();
    optimizer.step();

    const double value = static_cast<double>(loss.item());
    model.log.loss.push_back(value);
    model.log.snr_db.push_back(snr);
    model.log.sigma_sq.push_back(sigma_sq);
    if (on_step) on_step(step, value, snr);
  }
  params.set_trainable(false);
  return model;
}

#define SING_JSCC_INSTANTIATE(S)                                                                \
  template class JsccModel<S>;                                                                  \
  template channel::ChannelVector<S> encode<S>(const JsccModel<S>&, const Tensor<S>&);          \
  template Tensor<S> decode<S>(const JsccModel<S>&, const channel::ChannelVector<S>&, double);  \
  template Tensor<S> transmit<S>(const JsccModel<S>&, const Tensor<S>&, double, std::uint64_t); \
  template Var<S> composite_loss<S>(const Var<S>&, const Var<S>&, double,                       \
                                    const PerceptualBackend<S>&);                               \
  template JsccModel<S> train<S>(const JsccConfig&, const std::vector<Tensor<S>>&,              \
                                 const JsccTrainOptions&, const PerceptualBackend<S>&,          \
                                 const JsccStepCallback&);

SING_JSCC_INSTANTIATE(float)
SING_JSCC_INSTANTIATE(double)

#undef SING_JSCC_INSTANTIATE

}  // namespace sing
