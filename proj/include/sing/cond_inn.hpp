#pragma once

#include "sing/layers.hpp"

#include <cstdint>
#include <functional>
#include <vector>

namespace sing {

struct CondInnConfig {
  int channels = 3;
  /// Space-to-depth factor; the coarse part has the resolution of a
  /// mean_pool measurement with the same factor.
  int scale = 2;
  int hidden = 32;
  int pairs = 4;
  int blocks = 2;
  /// Scale of the last convolution of every coupling network at
  /// initialization. Small values start the INN near the plain split.
  double output_gain = 0.1;

  void validate() const;
};

/// Residual block whose branch is modulated per channel by an SNR-dependent gain.
template <typename Scalar>
class CondBlock {
 public:
  CondBlock() = default;
  CondBlock(int channels, Rng& rng);

  /// `snr` has shape (N, 1, 1, 1) and holds the normalized SNR.
  [[nodiscard]] Var<Scalar> operator()(const Var<Scalar>& x, const Var<Scalar>& snr) const;
  /// The modulation alpha(snr), shape (N, channels, 1, 1).
  [[nodiscard]] Var<Scalar> gain(const Var<Scalar>& snr) const { return alpha_(snr); }

  void collect(ParameterList<Scalar>& list, const std::string& prefix) const;
  [[nodiscard]] Conv2d<Scalar>& conv2() { return conv2_; }

 private:
  Conv2d<Scalar> conv1_;
  Conv2d<Scalar> conv2_;  // no bias: zero weights make the block the identity
  Linear<Scalar> alpha_;
};

/// conv_in -> CondBlock x J -> conv_out.
template <typename Scalar>
class CouplingNet {
 public:
  CouplingNet() = default;
  CouplingNet(int in_channels, int out_channels, int hidden, int blocks, double output_gain,
              Rng& rng);

  [[nodiscard]] Var<Scalar> operator()(const Var<Scalar>& x, const Var<Scalar>& snr) const;

  void collect(ParameterList<Scalar>& list, const std::string& prefix) const;
  [[nodiscard]] Conv2d<Scalar>& conv_out() { return conv_out_; }
  [[nodiscard]] CondBlock<Scalar>& block(int j) { return blocks_.at(j); }
  [[nodiscard]] int block_count() const { return static_cast<int>(blocks_.size()); }

 private:
  Conv2d<Scalar> conv_in_;
  std::vector<CondBlock<Scalar>> blocks_;
  Conv2d<Scalar> conv_out_;
};

template <typename Scalar>
struct InnSplit {
  Var<Scalar> coarse;  // c, (N, C, H/s, W/s)
  Var<Scalar> detail;  // d, (N, C (s^2 - 1), H/s, W/s)
};

/// SNR-conditioned invertible network built from additive lifting steps.
/// Each pair updates d <- d - P(c) then c <- c + U(d); the inverse undoes the
/// pairs in reverse order, so inversion is exact for any parameter values.
template <typename Scalar>
class CondInn {
 public:
  CondInn(CondInnConfig config, std::uint64_t seed);

  [[nodiscard]] InnSplit<Scalar> forward(const Var<Scalar>& x,
                                         const std::vector<double>& snr_db) const;
  [[nodiscard]] Var<Scalar> inverse(const Var<Scalar>& coarse, const Var<Scalar>& detail,
                                    const std::vector<double>& snr_db) const;

  /// The parameter-free split and merge around the lifting steps.
  [[nodiscard]] InnSplit<Scalar> split(const Var<Scalar>& x) const;
  [[nodiscard]] Var<Scalar> merge(const Var<Scalar>& coarse, const Var<Scalar>& detail) const;

  [[nodiscard]] const CondInnConfig& config() const { return config_; }
  [[nodiscard]] ParameterList<Scalar> parameters() const;

  [[nodiscard]] CouplingNet<Scalar>& predict_net(int pair) { return predict_.at(pair); }
  [[nodiscard]] CouplingNet<Scalar>& update_net(int pair) { return update_.at(pair); }

  /// SNR range seen in training, used to flag extrapolation at inference.
  double trained_snr_low_db = -5.0;
  double trained_snr_high_db = 5.0;

 private:
  [[nodiscard]] Var<Scalar> condition(const std::vector<double>& snr_db, int batch) const;

  CondInnConfig config_;
  std::vector<CouplingNet<Scalar>> predict_;
  std::vector<CouplingNet<Scalar>> update_;
};

/// One training example: a clean image x, its measurement y and the SNR at
/// which the decoded image behind y was produced.
template <typename Scalar>
struct InnSample {
  Tensor<Scalar> image;        // (1, C, H, W)
  Tensor<Scalar> measurement;  // (1, C, H/s, W/s)
  double snr_db = 0.0;
};

struct InnTrainOptions {
  int steps = 1000;
  int batch_size = 32;
  double learning_rate = 5e-5;
  std::uint64_t seed = 0;
};

/// Produces sample `index` for the given epoch; lets callers redraw channel
/// noise every epoch.
template <typename Scalar>
using InnSampleSource = std::function<InnSample<Scalar>(std::size_t index, int epoch)>;

/// Minimizes mean ||c(x, snr) - y||^2 over minibatches; d is left free.
/// Returns the per-step loss.
template <typename Scalar>
std::vector<double> train_inn(CondInn<Scalar>& model, std::size_t dataset_size,
                              const InnSampleSource<Scalar>& source, const InnTrainOptions& options,
                              const std::function<void(int, double)>& on_step = {});

template <typename Scalar>
std::vector<double> train_inn(CondInn<Scalar>& model, const std::vector<InnSample<Scalar>>& samples,
                              const InnTrainOptions& options,
                              const std::function<void(int, double)>& on_step = {});

/// Per-sample objective sum ||c - y||^2 / N for a batch.
template <typename Scalar>
[[nodiscard]] Var<Scalar> inn_loss(const CondInn<Scalar>& model, const Var<Scalar>& images,
                                   const Var<Scalar>& measurements,
                                   const std::vector<double>& snr_db);

}  // namespace sing
