#pragma once

#include <cmath>
#include <vector>

#include "dflow/density_guidance.hpp"
#include "dflow/flow_field.hpp"
#include "dflow/integrators.hpp"
#include "dflow/types.hpp"

namespace dflow {

/// Score-orthogonal projection P = I - s s^T / |s|^2, applied matrix-free.
class ScoreProjection {
 public:
  explicit ScoreProjection(const Vector& score) {
    const double n = score.norm();
    if (n == 0.0) throw DomainError("ScoreProjection: zero score is degenerate");
    unit_ = score / n;
  }

  Vector apply(const Vector& v) const { return v - unit_ * unit_.dot(v); }

  Matrix dense() const {
    const Eigen::Index d = unit_.size();
    return Matrix::Identity(d, d) - unit_ * unit_.transpose();
  }

  const Vector& unit_score() const { return unit_; }

 private:
  Vector unit_;
};

inline ScoreProjection score_projection(const Vector& score) { return ScoreProjection(score); }

/// Rayleigh quotient of the log-density Hessian at the unit score direction:
/// s^T H s / |s|^2.
inline double rayleigh_quotient(const GaussianMixture& target, const NoiseSchedule& schedule,
                                double t, const Vector& x) {
  const auto ps = target.stats(schedule, t, x);
  const Vector s = ps.dbar / ps.stilde2;
  const double ss = s.squaredNorm();
  if (ss == 0.0) throw DomainError("rayleigh_quotient: zero score is degenerate");
  return s.dot(GaussianMixture::score_hvp(ps, s)) / ss;
}

/// Piecewise noise-scale policy in log-SNR coordinates: phi(t) = r g(t) when
/// log-SNR(t) falls inside an interval, 0 outside.
class NoiseWindowPolicy {
 public:
  struct Window {
    double lsnr_lo;
    double lsnr_hi;
    double r;
  };

  NoiseWindowPolicy() = default;

  explicit NoiseWindowPolicy(std::vector<Window> windows) : windows_(std::move(windows)) {
    for (const auto& w : windows_) {
      if (!(w.lsnr_lo < w.lsnr_hi)) throw DomainError("NoiseWindowPolicy: empty interval");
      if (w.r < 0.0) throw DomainError("NoiseWindowPolicy: negative multiplier");
    }
    for (size_t i = 0; i < windows_.size(); ++i)
      for (size_t j = i + 1; j < windows_.size(); ++j)
        if (windows_[i].lsnr_lo < windows_[j].lsnr_hi && windows_[j].lsnr_lo < windows_[i].lsnr_hi)
          throw DomainError("NoiseWindowPolicy: overlapping intervals");
  }

  static NoiseWindowPolicy constant(double r) {
    return NoiseWindowPolicy({{-std::numeric_limits<double>::infinity(),
                               std::numeric_limits<double>::infinity(), r}});
  }

  static NoiseWindowPolicy off() { return NoiseWindowPolicy(); }

  double multiplier(const NoiseSchedule& schedule, double t) const {
    const double l = schedule.log_snr(t);
    for (const auto& w : windows_)
      if (l >= w.lsnr_lo && l < w.lsnr_hi) return w.r;
    return 0.0;
  }

  double phi(const NoiseSchedule& schedule, double t) const {
    const double r = multiplier(schedule, t);
    return r == 0.0 ? 0.0 : r * std::sqrt(schedule.drift_coeffs(t).g2);
  }

  const std::vector<Window>& windows() const { return windows_; }

 private:
  std::vector<Window> windows_;
};

struct SdgOptions {
  /// Keep the Rayleigh-quotient term in the drift (exact) or drop it
  /// (the practical approximation).
  bool exact_rayleigh = true;
};

/// Stochastic density-guidance drift:
///   u~ = u + [(b + div u + (1/2) phi^2 (laplacian log p - R)) / |s|^2] s,
/// with R the Hessian Rayleigh quotient at the score (dropped when
/// approximate).
class SdgDriftField : public FlowField {
 public:
  SdgDriftField(PfOdeField base, std::shared_ptr<const RateFunction> rate,
                std::function<double(double)> phi, SdgOptions opts = {})
      : base_(std::move(base)), rate_(std::move(rate)), phi_(std::move(phi)), opts_(opts) {}

  int dim() const override { return base_.dim(); }

  Vector evaluate(double t, const Vector& x) const override {
    return base_.evaluate(t, x) + correction(t, x, rate_->rate(t, x));
  }

  Vector correction(double t, const Vector& x, double b) const {
    const auto ps = base_.target().stats(base_.schedule(), t, x);
    const Vector s = ps.dbar / ps.stilde2;
    const double sigma = base_.schedule().alpha_sigma(t).sigma;
    detail::check_score(sigma * s, t, dim());
    const double ph = phi_(t);
    const double lap = GaussianMixture::laplacian_log_density(ps, dim());
    double ito = lap;
    if (opts_.exact_rayleigh) ito -= s.dot(GaussianMixture::score_hvp(ps, s)) / s.squaredNorm();
    const double num = b + base_.divergence(t, x) + 0.5 * ph * ph * ito;
    return (num / s.squaredNorm()) * s;
  }

  const PfOdeField& base() const { return base_; }

 private:
  PfOdeField base_;
  std::shared_ptr<const RateFunction> rate_;
  std::function<double(double)> phi_;
  SdgOptions opts_;
};

inline SdgDriftField sdg_drift(const NoiseSchedule& schedule, const GaussianMixture& target,
                               std::shared_ptr<const RateFunction> rate,
                               std::function<double(double)> phi, SdgOptions opts = {}) {
  return SdgDriftField(PfOdeField(schedule, target), std::move(rate), std::move(phi), opts);
}

/// Euler-Maruyama sampling of the stochastic density-guidance process
///   dx = u~ dt + phi(t) P(x) dW
/// with score-orthogonally projected noise. The density channel follows the
/// reverse-time Ito evolution of log p along the realized path,
///   d log p = [-div u + s . (u~ - u) - (1/2) phi^2 (laplacian log p - R)] dt;
/// the projected noise contributes no stochastic term since s^T P = 0. The
/// Ito trace term always keeps the exact Rayleigh quotient; the option flag
/// only switches the drift.
inline DensityTrajectory sample_sdg(const NoiseSchedule& schedule, const GaussianMixture& target,
                                    const RateFunction& rate, const NoiseWindowPolicy& noise,
                                    const Vector& x_T, const TimeGrid& grid, uint64_t seed,
                                    SdgOptions opts = {}) {
  const PfOdeField pf(schedule, target);
  const size_t n = grid.nodes();
  DensityTrajectory tr;
  tr.times = grid.times();
  tr.states.resize(x_T.size(), static_cast<Eigen::Index>(n));
  tr.log_density.resize(n);
  tr.integrator = "euler-maruyama-sdg";
  tr.seed = seed;
  tr.guidance = opts.exact_rayleigh ? "sdg-exact" : "sdg-approx";

  Rng rng(seed);
  Vector x = x_T;
  double lp = pf.log_density(grid.front(), x_T);
  tr.states.col(0) = x;
  tr.log_density[0] = lp;
  const int d = pf.dim();

  for (size_t i = 0; i + 1 < n; ++i) {
    const double t0 = grid[i], t1 = grid[i + 1];
    const double dt = t1 - t0;
    const double sdt = std::sqrt(std::abs(dt));
    const double ph = noise.phi(schedule, t0);
    const Vector eps = rng.normal_vector(d);

    const auto ps = target.stats(schedule, t0, x);
    const Vector s = ps.dbar / ps.stilde2;
    const double sigma = schedule.alpha_sigma(t0).sigma;
    detail::check_score(sigma * s, t0, d);
    const double ss = s.squaredNorm();

    const double b = rate.average(t0, t1, x);
    const double div_u = pf.divergence(t0, x);
    const double lap = GaussianMixture::laplacian_log_density(ps, d);
    const double ray = s.dot(GaussianMixture::score_hvp(ps, s)) / ss;
    const double ito = lap - ray;

    double drift_ito = lap;
    if (opts.exact_rayleigh) drift_ito -= ray;
    const Vector corr = ((b + div_u + 0.5 * ph * ph * drift_ito) / ss) * s;

    lp += (-div_u + s.dot(corr) - 0.5 * ph * ph * ito) * dt;
    x += dt * (pf.evaluate(t0, x) + corr);
    if (ph > 0.0) {
      const Vector proj = eps - s * (s.dot(eps) / ss);
      x += ph * sdt * proj;
    }
    detail::check_finite(x, t0, "sample_sdg");
    tr.states.col(static_cast<Eigen::Index>(i + 1)) = x;
    tr.log_density[i + 1] = lp;
  }
  return tr;
}

}  // namespace dflow
