#include "sing/channel.hpp"

#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

namespace sing::channel {

double ChannelParams::sigma_sq() const { return snr_to_sigma_sq(snr_db, avg_power); }

double snr_to_sigma_sq(double snr_db, double avg_power) {
  if (!(avg_power > 0.0)) throw std::invalid_argument("average power must be positive");
  return avg_power * std::pow(10.0, -snr_db / 10.0);
}

double sigma_sq_to_snr(double sigma_sq, double avg_power) {
  return 10.0 * std::log10(avg_power / sigma_sq);
}

template <typename Scalar>
ChannelVector<Scalar> normalize_power(const ChannelVector<Scalar>& z_tilde, double avg_power) {
  if (!(avg_power > 0.0)) throw std::invalid_argument("average power must be positive");
  if (z_tilde.size() == 0) throw std::domain_error("channel vector must have length k >= 1");
  const double norm = static_cast<double>(z_tilde.norm());
  if (!(norm > 0.0)) throw std::domain_error("cannot normalize a zero-norm channel vector");
  const double k = static_cast<double>(z_tilde.size());
  return (z_tilde.template cast<std::complex<double>>() * (std::sqrt(k * avg_power) / norm))
      .template cast<std::complex<Scalar>>();
}

template <typename Scalar>
ChannelVector<Scalar> awgn(const ChannelVector<Scalar>& z, double sigma_sq, std::uint64_t seed) {
  if (sigma_sq < 0.0) throw std::invalid_argument("noise variance must be non-negative");
  if (sigma_sq == 0.0) return z;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, std::sqrt(sigma_sq / 2.0));
  ChannelVector<Scalar> out(z.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    const double re = normal(rng);
    const double im = normal(rng);
    out[i] = z[i] + std::complex<Scalar>(static_cast<Scalar>(re), static_cast<Scalar>(im));
  }
  return out;
}

template <typename Scalar>
ChannelVector<Scalar> pack(const RealSymbols<Scalar>& reals) {
  if (reals.size() == 0 || reals.size() % 2 != 0) {
    throw std::invalid_argument("packing needs an even, non-zero number of reals, got " +
                                std::to_string(reals.size()));
  }
  const Eigen::Index k = reals.size() / 2;
  ChannelVector<Scalar> out(k);
  for (Eigen::Index i = 0; i < k; ++i) out[i] = {reals[i], reals[k + i]};
  return out;
}

template <typename Scalar>
RealSymbols<Scalar> unpack(const ChannelVector<Scalar>& symbols) {
  const Eigen::Index k = symbols.size();
  RealSymbols<Scalar> out(2 * k);
  out.head(k) = symbols.real();
  out.tail(k) = symbols.imag();
  return out;
}

template <typename Scalar>
double mean_power(const ChannelVector<Scalar>& z) {
  if (z.size() == 0) return 0.0;
  return z.template cast<std::complex<double>>().squaredNorm() / static_cast<double>(z.size());
}

template <typename Scalar>
double empirical_snr_db(const ChannelVector<Scalar>& z, const ChannelVector<Scalar>& z_hat) {
  const ChannelVector<Scalar> noise = z_hat - z;
  return 10.0 * std::log10(mean_power(z) / mean_power(noise));
}

#define SING_CHANNEL_INSTANTIATE(S)                                                   \
  template ChannelVector<S> normalize_power<S>(const ChannelVector<S>&, double);      \
  template ChannelVector<S> awgn<S>(const ChannelVector<S>&, double, std::uint64_t);  \
  template ChannelVector<S> pack<S>(const RealSymbols<S>&);                           \
  template RealSymbols<S> unpack<S>(const ChannelVector<S>&);                         \
  template double mean_power<S>(const ChannelVector<S>&);                             \
  template double empirical_snr_db<S>(const ChannelVector<S>&, const ChannelVector<S>&);

SING_CHANNEL_INSTANTIATE(float)
SING_CHANNEL_INSTANTIATE(double)

#undef SING_CHANNEL_INSTANTIATE

}  // namespace sing::channel
