#pragma once

#include <cmath>
#include <vector>

#include "dflow/gaussian_mixture.hpp"
#include "dflow/stats.hpp"
#include "dflow/types.hpp"

namespace dflow {

/// h(x) = sigma_t^2 (laplacian log p_t(x) + |grad log p_t(x)|^2) / sqrt(2D).
inline double h_statistic(const GaussianMixture& target, const NoiseSchedule& schedule, double t,
                          const Vector& x) {
  const auto ps = target.stats(schedule, t, x);
  const double lap = GaussianMixture::laplacian_log_density(ps, target.dim());
  const double s2 = (ps.dbar / ps.stilde2).squaredNorm();
  const double sigma = schedule.alpha_sigma(t).sigma;
  return sigma * sigma * (lap + s2) / std::sqrt(2.0 * target.dim());
}

struct HStatReport {
  int dim = 0;
  double sigma = 0.0;
  uint64_t seed = 0;
  double mean = 0.0;
  double variance = 0.0;
  double p_value = 0.0;
  bool degenerate = false;
};

/// Monte-Carlo normality check of h over a K-component point-mass mixture
/// whose means are drawn from N(0, sigma^2 I_D). The h values use the
/// responsibility-weighted radius form directly (log-space responsibilities),
/// blocked so that D=4096 stays tractable.
inline HStatReport mixture_normality_cell(int components, int dim, double sigma, int n_samples,
                                          uint64_t seed) {
  Rng rng(seed);
  const int K = components;
  Matrix means(K, dim);
  for (int k = 0; k < K; ++k)
    means.row(k) = (sigma * rng.normal_vector(dim)).transpose();
  const Vector mu_sq = means.rowwise().squaredNorm();

  std::vector<double> h(n_samples);
  const int b_rows = std::max(1, std::min(n_samples, 4 * 1024 * 1024 / std::max(1, dim)));
  Matrix x(b_rows, dim);
  const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
  int done = 0;
  while (done < n_samples) {
    const int b = std::min(b_rows, n_samples - done);
    for (int i = 0; i < b; ++i) {
      const int k = static_cast<int>(rng.uniform_index(K));
      x.row(i) = means.row(k);
      for (int j = 0; j < dim; ++j) x(i, j) += sigma * rng.normal();
    }
    const Matrix g = x.topRows(b) * means.transpose();  // b x K
    const Vector x_sq = x.topRows(b).rowwise().squaredNorm();
    for (int i = 0; i < b; ++i) {
      // d2_k = |x - mu_k|^2; responsibilities via shifted exponentials.
      Vector d2 = (x_sq[i] + mu_sq.array() - 2.0 * g.row(i).transpose().array()).matrix();
      Vector logits = -inv2s2 * d2;
      const double m = logits.maxCoeff();
      const Vector w = (logits.array() - m).exp().matrix();
      const double wsum = w.sum();
      const double radius = w.dot(d2) / wsum / (sigma * sigma);
      h[done + i] = (radius - dim) / std::sqrt(2.0 * dim);
    }
    done += b;
  }

  const Moments m = sample_moments(h);
  const NormalityResult nr = normality_test(h);
  return {dim, sigma, seed, m.mean, m.variance, nr.p_value, nr.degenerate};
}

/// Full sweep: one report per (dim, sigma, seed).
inline std::vector<HStatReport> mixture_normality_experiment(int components,
                                                             const std::vector<int>& dims,
                                                             const std::vector<double>& sigmas,
                                                             int n_samples,
                                                             const std::vector<uint64_t>& seeds) {
  if (components < 1 || n_samples < 20) throw DomainError("mixture_normality_experiment: bad sizes");
  std::vector<HStatReport> out;
  for (int d : dims)
    for (double s : sigmas)
      for (uint64_t seed : seeds)
        out.push_back(mixture_normality_cell(components, d, s, n_samples, seed));
  return out;
}

/// Single-point case: h = (|eps|^2 - D) / sqrt(2D), eps ~ N(0, I_D).
inline HStatReport chi2_case_check(int dim, int n_samples, uint64_t seed) {
  if (dim < 1 || n_samples < 20) throw DomainError("chi2_case_check: bad sizes");
  Rng rng(seed);
  std::vector<double> h(n_samples);
  for (int i = 0; i < n_samples; ++i) {
    double acc = 0.0;
    for (int j = 0; j < dim; ++j) {
      const double e = rng.normal();
      acc += e * e;
    }
    h[i] = (acc - dim) / std::sqrt(2.0 * dim);
  }
  const Moments m = sample_moments(h);
  const NormalityResult nr = normality_test(h);
  return {dim, 0.0, seed, m.mean, m.variance, nr.p_value, nr.degenerate};
}

struct NonIsotropicReport {
  double mean = 0.0;
  double variance = 0.0;
  double p_value = 0.0;
  /// max_j lambda_j^2 / sum_j lambda_j^2; the quadratic CLT needs this small.
  double condition_ratio = 0.0;
  bool condition_ok = false;
};

/// Non-isotropic Gaussian case: h = (eps^T S eps - tr S) / (sqrt(2) |S|_F)
/// for S with the given spectrum.
inline NonIsotropicReport nonisotropic_case_check(const Vector& spectrum, int n_samples,
                                                  uint64_t seed) {
  if ((spectrum.array() <= 0.0).any())
    throw DomainError("nonisotropic_case_check: spectrum must be positive");
  if (n_samples < 20) throw DomainError("nonisotropic_case_check: too few samples");
  Rng rng(seed);
  const double tr = spectrum.sum();
  const double fro = spectrum.norm();
  std::vector<double> h(n_samples);
  for (int i = 0; i < n_samples; ++i) {
    double quad = 0.0;
    for (Eigen::Index j = 0; j < spectrum.size(); ++j) {
      const double e = rng.normal();
      quad += spectrum[j] * e * e;
    }
    h[i] = (quad - tr) / (std::sqrt(2.0) * fro);
  }
  const Moments m = sample_moments(h);
  const NormalityResult nr = normality_test(h);
  NonIsotropicReport rep;
  rep.mean = m.mean;
  rep.variance = m.variance;
  rep.p_value = nr.p_value;
  rep.condition_ratio = spectrum.cwiseAbs2().maxCoeff() / spectrum.squaredNorm();
  rep.condition_ok = rep.condition_ratio <= 0.05;
  return rep;
}

}  // namespace dflow
