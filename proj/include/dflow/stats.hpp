#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "dflow/math.hpp"
#include "dflow/types.hpp"

namespace dflow {

struct Moments {
  double mean = 0.0;
  double variance = 0.0;  // population (1/n)
  double skewness = 0.0;  // g1 = m3 / m2^(3/2)
  double kurtosis = 0.0;  // m4 / m2^2, not excess
};

inline Moments sample_moments(std::span<const double> xs) {
  const double n = static_cast<double>(xs.size());
  Moments m;
  for (double x : xs) m.mean += x;
  m.mean /= n;
  double m2 = 0.0, m3 = 0.0, m4 = 0.0;
  for (double x : xs) {
    const double d = x - m.mean;
    const double d2 = d * d;
    m2 += d2;
    m3 += d2 * d;
    m4 += d2 * d2;
  }
  m2 /= n;
  m3 /= n;
  m4 /= n;
  m.variance = m2;
  if (m2 > 0.0) {
    m.skewness = m3 / std::pow(m2, 1.5);
    m.kurtosis = m4 / (m2 * m2);
  }
  return m;
}

/// Empirical quantile with Hazen (midpoint) plotting positions: the i-th order
/// statistic sits at level (i - 0.5) / n, linear interpolation in between,
/// clamped at the extremes.
inline double empirical_quantile(std::vector<double> sorted_or_not, double q, bool presorted = false) {
  if (sorted_or_not.empty()) throw DomainError("empirical_quantile: empty sample");
  if (!(q >= 0.0 && q <= 1.0)) throw DomainError("empirical_quantile: q outside [0,1]");
  auto& v = sorted_or_not;
  if (!presorted) std::sort(v.begin(), v.end());
  const double n = static_cast<double>(v.size());
  const double h = n * q + 0.5 - 1.0;  // 0-based fractional index
  if (h <= 0.0) return v.front();
  if (h >= n - 1.0) return v.back();
  const auto lo = static_cast<size_t>(std::floor(h));
  const double w = h - static_cast<double>(lo);
  return v[lo] + w * (v[lo + 1] - v[lo]);
}

inline double pearson_correlation(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) throw DomainError("pearson_correlation: size mismatch");
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0, saa = 0, sbb = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

struct NormalityResult {
  double statistic = 0.0;  // K^2 = z_skew^2 + z_kurt^2
  double p_value = 0.0;    // chi-squared(2) tail
  double z_skew = 0.0;
  double z_kurt = 0.0;
  bool degenerate = false;  // constant sample; p_value forced to 0
};

namespace detail {

// D'Agostino (1970) transformed skewness z-score.
inline double skew_z(double g1, double n) {
  const double y = g1 * std::sqrt((n + 1.0) * (n + 3.0) / (6.0 * (n - 2.0)));
  const double beta2 =
      3.0 * (n * n + 27.0 * n - 70.0) * (n + 1.0) * (n + 3.0) /
      ((n - 2.0) * (n + 5.0) * (n + 7.0) * (n + 9.0));
  const double w2 = -1.0 + std::sqrt(2.0 * (beta2 - 1.0));
  const double delta = 1.0 / std::sqrt(0.5 * std::log(w2));
  const double alpha = std::sqrt(2.0 / (w2 - 1.0));
  const double ya = (y == 0.0 ? 1.0 : y) / alpha;
  return delta * std::log(ya + std::sqrt(ya * ya + 1.0));
}

// Anscombe & Glynn (1983) transformed kurtosis z-score.
inline double kurt_z(double b2, double n) {
  const double eb2 = 3.0 * (n - 1.0) / (n + 1.0);
  const double vb2 = 24.0 * n * (n - 2.0) * (n - 3.0) / ((n + 1.0) * (n + 1.0) * (n + 3.0) * (n + 5.0));
  const double x = (b2 - eb2) / std::sqrt(vb2);
  const double sqrtbeta1 = 6.0 * (n * n - 5.0 * n + 2.0) / ((n + 7.0) * (n + 9.0)) *
                           std::sqrt(6.0 * (n + 3.0) * (n + 5.0) / (n * (n - 2.0) * (n - 3.0)));
  const double a = 6.0 + 8.0 / sqrtbeta1 * (2.0 / sqrtbeta1 + std::sqrt(1.0 + 4.0 / (sqrtbeta1 * sqrtbeta1)));
  const double term1 = 1.0 - 2.0 / (9.0 * a);
  const double denom = 1.0 + x * std::sqrt(2.0 / (a - 4.0));
  if (denom == 0.0) return std::numeric_limits<double>::infinity();
  const double term2 =
      std::copysign(std::pow((1.0 - 2.0 / a) / std::abs(denom), 1.0 / 3.0), denom);
  return (term1 - term2) / std::sqrt(2.0 / (9.0 * a));
}

}  // namespace detail

/// D'Agostino-Pearson K^2 omnibus normality test; the tail probability uses
/// the exact chi-squared(2) survival exp(-K^2 / 2).
inline NormalityResult normality_test(std::span<const double> xs) {
  if (xs.size() < 20) throw DomainError("normality_test: need at least 20 samples");
  const Moments m = sample_moments(xs);
  NormalityResult r;
  if (m.variance <= 0.0 || !std::isfinite(m.variance)) {
    r.degenerate = true;
    r.p_value = 0.0;
    r.statistic = std::numeric_limits<double>::infinity();
    return r;
  }
  const double n = static_cast<double>(xs.size());
  r.z_skew = detail::skew_z(m.skewness, n);
  r.z_kurt = detail::kurt_z(m.kurtosis, n);
  r.statistic = r.z_skew * r.z_skew + r.z_kurt * r.z_kurt;
  r.p_value = std::exp(-0.5 * r.statistic);
  return r;
}

}  // namespace dflow
