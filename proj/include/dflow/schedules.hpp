#pragma once

#include <cmath>
#include <string>

#include "dflow/math.hpp"
#include "dflow/types.hpp"

namespace dflow {

enum class ScheduleKind { VP, VE, FM };

inline std::string to_string(ScheduleKind k) {
  switch (k) {
    case ScheduleKind::VP: return "vp";
    case ScheduleKind::VE: return "ve";
    case ScheduleKind::FM: return "fm";
  }
  return "?";
}

struct AlphaSigma {
  double alpha;
  double sigma;
};

struct DriftCoeffs {
  double f;   // d log(alpha_t) / dt
  double g2;  // 2 sigma_t^2 d log(sigma_t / alpha_t) / dt
};

/// Forward-process schedule (alpha_t, sigma_t) with derived drift/diffusion
/// coefficients. All three kinds share a log-SNR that is linear in t between
/// lsnr_max (at t=0) and lsnr_min (at t=T):
///
///   VP: alpha^2 + sigma^2 = 1,  alpha^2 = sigmoid(lsnr)
///   VE: alpha = 1,              sigma   = exp(-lsnr/2)
///   FM: alpha + sigma = 1,      alpha   = sigmoid(lsnr/2)
///
/// Derivatives are analytic; with lsnr linear in t, for every kind
/// g^2(t) = -sigma_t^2 * dlsnr/dt.
class NoiseSchedule {
 public:
  static NoiseSchedule vp(double T = 1.0, double lsnr_max = 10.0, double lsnr_min = -10.0) {
    return NoiseSchedule(ScheduleKind::VP, T, lsnr_max, lsnr_min);
  }
  static NoiseSchedule ve(double T = 1.0, double lsnr_max = 10.0, double lsnr_min = -10.0) {
    return NoiseSchedule(ScheduleKind::VE, T, lsnr_max, lsnr_min);
  }
  static NoiseSchedule fm(double T = 1.0, double lsnr_max = 10.0, double lsnr_min = -10.0) {
    return NoiseSchedule(ScheduleKind::FM, T, lsnr_max, lsnr_min);
  }

  NoiseSchedule(ScheduleKind kind, double T, double lsnr_max, double lsnr_min)
      : kind_(kind), horizon_(T), lsnr_max_(lsnr_max), lsnr_min_(lsnr_min) {
    if (!(T > 0.0)) throw DomainError("NoiseSchedule: horizon must be positive");
    if (!(lsnr_max > lsnr_min)) throw DomainError("NoiseSchedule: need lsnr_max > lsnr_min");
  }

  ScheduleKind kind() const { return kind_; }
  double horizon() const { return horizon_; }
  double lsnr_max() const { return lsnr_max_; }
  double lsnr_min() const { return lsnr_min_; }

  double log_snr(double t) const {
    check_time(t);
    return lsnr_max_ + (t / horizon_) * (lsnr_min_ - lsnr_max_);
  }

  /// Inverse of the (strictly decreasing) log-SNR map.
  double inv_log_snr(double lsnr) const {
    if (!(lsnr >= lsnr_min_ && lsnr <= lsnr_max_))
      throw DomainError("inv_log_snr: value outside the attained log-SNR range");
    return horizon_ * (lsnr_max_ - lsnr) / (lsnr_max_ - lsnr_min_);
  }

  AlphaSigma alpha_sigma(double t) const {
    check_time(t);
    const double l = log_snr(t);
    switch (kind_) {
      case ScheduleKind::VP:
        return {std::sqrt(sigmoid(l)), std::sqrt(sigmoid(-l))};
      case ScheduleKind::VE:
        return {1.0, std::exp(-0.5 * l)};
      case ScheduleKind::FM:
        return {sigmoid(0.5 * l), sigmoid(-0.5 * l)};
    }
    throw DomainError("NoiseSchedule: unknown kind");
  }

  DriftCoeffs drift_coeffs(double t) const {
    check_time(t);
    const double lp = lsnr_rate();
    const auto [alpha, sigma] = alpha_sigma(t);
    const double g2 = -sigma * sigma * lp;
    switch (kind_) {
      case ScheduleKind::VP:
        return {0.5 * sigma * sigma * lp, g2};
      case ScheduleKind::VE:
        return {0.0, g2};
      case ScheduleKind::FM:
        return {0.5 * sigma * lp, g2};
    }
    throw DomainError("NoiseSchedule: unknown kind");
  }

  /// d log-SNR / dt (constant, negative).
  double lsnr_rate() const { return (lsnr_min_ - lsnr_max_) / horizon_; }

  double sigma_T() const { return alpha_sigma(horizon_).sigma; }

 private:
  void check_time(double t) const {
    if (!(t >= 0.0 && t <= horizon_))
      throw DomainError("NoiseSchedule: t outside [0, T]");
  }

  ScheduleKind kind_;
  double horizon_;
  double lsnr_max_;
  double lsnr_min_;
};

}  // namespace dflow
