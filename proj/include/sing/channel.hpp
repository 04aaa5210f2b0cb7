#pragma once

#include <Eigen/Core>

#include <complex>
#include <cstdint>

namespace sing::channel {

/// k complex channel symbols.
template <typename Scalar>
using ChannelVector = Eigen::Matrix<std::complex<Scalar>, Eigen::Dynamic, 1>;

/// Real-valued encoder output of length 2k.
template <typename Scalar>
using RealSymbols = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

inline constexpr double kDefaultAvgPower = 1.0;

struct ChannelParams {
  double avg_power = kDefaultAvgPower;
  double snr_db = 0.0;

  [[nodiscard]] double sigma_sq() const;
};

/// sigma^2 = P * 10^(-snr/10).
[[nodiscard]] double snr_to_sigma_sq(double snr_db, double avg_power = kDefaultAvgPower);

/// 10 log10(P / sigma^2).
[[nodiscard]] double sigma_sq_to_snr(double sigma_sq, double avg_power = kDefaultAvgPower);

/// Scales z_tilde so that (1/k)||z||^2 == avg_power.
/// Throws std::domain_error on a zero-norm input.
template <typename Scalar>
[[nodiscard]] ChannelVector<Scalar> normalize_power(const ChannelVector<Scalar>& z_tilde,
                                                    double avg_power = kDefaultAvgPower);

/// z + n with n ~ CN(0, sigma_sq I): variance sigma_sq/2 on each real component.
/// A pure function of its arguments.
template <typename Scalar>
[[nodiscard]] ChannelVector<Scalar> awgn(const ChannelVector<Scalar>& z, double sigma_sq,
                                         std::uint64_t seed);

/// Packs 2k reals as k symbols: first half real parts, second half imaginary parts.
template <typename Scalar>
[[nodiscard]] ChannelVector<Scalar> pack(const RealSymbols<Scalar>& reals);

/// Inverse of pack.
template <typename Scalar>
[[nodiscard]] RealSymbols<Scalar> unpack(const ChannelVector<Scalar>& symbols);

/// (1/k)||z||^2.
template <typename Scalar>
[[nodiscard]] double mean_power(const ChannelVector<Scalar>& z);

/// 10 log10(power(z) / power(z_hat - z)).
template <typename Scalar>
[[nodiscard]] double empirical_snr_db(const ChannelVector<Scalar>& z,
                                      const ChannelVector<Scalar>& z_hat);

}  // namespace sing::channel
