#pragma once

#include <cmath>

#include "dflow/math.hpp"
#include "dflow/schedules.hpp"
#include "dflow/types.hpp"

namespace dflow {

/// Isotropic Gaussian mixture data distribution with closed-form diffused
/// density, score, Hessian-vector products and third-derivative contractions
/// at any noise level. Component k at time t is N(alpha_t mu_k, st2 I) with
/// st2 = alpha_t^2 s2 + sigma_t^2.
class GaussianMixture {
 public:
  GaussianMixture(Vector weights, Matrix means, double s2)
      : weights_(std::move(weights)), means_(std::move(means)), s2_(s2) {
    if (weights_.size() != means_.rows())
      throw DomainError("GaussianMixture: weights/means size mismatch");
    if (weights_.size() == 0) throw DomainError("GaussianMixture: empty mixture");
    if (s2_ < 0.0) throw DomainError("GaussianMixture: s2 must be nonnegative");
    if ((weights_.array() <= 0.0).any())
      throw DomainError("GaussianMixture: weights must be positive");
    if (std::abs(weights_.sum() - 1.0) > 1e-12)
      throw DomainError("GaussianMixture: weights must sum to 1");
    if (s2_ == 0.0) {
      for (Eigen::Index i = 0; i < means_.rows(); ++i)
        for (Eigen::Index j = i + 1; j < means_.rows(); ++j)
          if ((means_.row(i) - means_.row(j)).norm() == 0.0)
            throw DomainError("GaussianMixture: point masses require distinct means");
    }
    log_weights_ = weights_.array().log().matrix();
  }

  /// The three-component 2-D mixture used as the score-alignment
  /// counterexample (component variance 0.005).
  static GaussianMixture app_c3() {
    Vector w = Vector::Constant(3, 1.0 / 3.0);
    Matrix m(3, 2);
    m << -0.3502, -0.6207, -0.4828, 1.0680, -0.7789, 0.7565;
    return GaussianMixture(std::move(w), std::move(m), 0.005);
  }

  /// Wider-component variant of the same means, used by the quantile-matching
  /// experiments where the guided field must stay integrable at coarse steps.
  static GaussianMixture eqm2d() {
    Vector w = Vector::Constant(3, 1.0 / 3.0);
    Matrix m(3, 2);
    m << -0.3502, -0.6207, -0.4828, 1.0680, -0.7789, 0.7565;
    return GaussianMixture(std::move(w), std::move(m), 0.1);
  }

  int dim() const { return static_cast<int>(means_.cols()); }
  int components() const { return static_cast<int>(means_.rows()); }
  double s2() const { return s2_; }
  const Vector& weights() const { return weights_; }
  const Matrix& means() const { return means_; }

  /// Everything needed at one (t, x): log-density, responsibilities,
  /// residuals d_k = alpha mu_k - x, their responsibility mean, st2.
  struct PointStats {
    double log_density;
    double stilde2;
    Vector resp;   // K
    Matrix d;      // K x D, row k = alpha mu_k - x
    Vector dbar;   // sum_k w_k d_k
  };

  PointStats stats(const NoiseSchedule& schedule, double t, const Vector& x) const {
    check_time(schedule, t);
    if (x.size() != means_.cols()) throw DomainError("GaussianMixture: dimension mismatch");
    const auto [alpha, sigma] = schedule.alpha_sigma(t);
    const double st2 = alpha * alpha * s2_ + sigma * sigma;
    PointStats ps;
    ps.stilde2 = st2;
    ps.d = (alpha * means_).rowwise() - x.transpose();
    const Vector sq = ps.d.rowwise().squaredNorm();
    const double dd = static_cast<double>(dim());
    const Vector logits =
        (log_weights_.array() - (0.5 / st2) * sq.array() - 0.5 * dd * (kLogTwoPi + std::log(st2)))
            .matrix();
    ps.log_density = log_sum_exp(logits);
    ps.resp = (logits.array() - ps.log_density).exp().matrix();
    ps.dbar = ps.d.transpose() * ps.resp;
    return ps;
  }

  double log_density(const NoiseSchedule& schedule, double t, const Vector& x) const {
    return stats(schedule, t, x).log_density;
  }

  Vector score(const NoiseSchedule& schedule, double t, const Vector& x) const {
    const PointStats ps = stats(schedule, t, x);
    return ps.dbar / ps.stilde2;
  }

  Vector responsibilities(const NoiseSchedule& schedule, double t, const Vector& x) const {
    return stats(schedule, t, x).resp;
  }

  /// Hessian-vector product of log p_t at x.
  Vector score_hvp(const NoiseSchedule& schedule, double t, const Vector& x, const Vector& v) const {
    return score_hvp(stats(schedule, t, x), v);
  }

  static Vector score_hvp(const PointStats& ps, const Vector& v) {
    const double st2 = ps.stilde2;
    const Vector dv = ps.d * v;
    const Vector sv = ps.d.transpose() * ps.resp.cwiseProduct(dv);  // S v
    return -v / st2 + (sv - ps.dbar * ps.dbar.dot(v)) / (st2 * st2);
  }

  /// Laplacian of log p_t via the identity
  /// laplacian(log p) + |grad log p|^2 = laplacian(p) / p
  /// whose right-hand side has the closed form
  /// sum_k w_k (|d_k|^2 / st2^2 - D / st2).
  double laplacian_log_density(const NoiseSchedule& schedule, double t, const Vector& x) const {
    return laplacian_log_density(stats(schedule, t, x), dim());
  }

  static double laplacian_log_density(const PointStats& ps, int dim) {
    const Vector score = ps.dbar / ps.stilde2;
    return lap_p_over_p(ps, dim) - score.squaredNorm();
  }

  static double lap_p_over_p(const PointStats& ps, int dim) {
    const double st2 = ps.stilde2;
    const Vector sq = ps.d.rowwise().squaredNorm();
    return ps.resp.dot((sq.array() / (st2 * st2) - dim / st2).matrix());
  }

  /// Gradient of laplacian(log p_t); the extra contraction that makes exact
  /// second-order divergences of analytic fields possible.
  Vector grad_laplacian_log_density(const NoiseSchedule& schedule, double t, const Vector& x) const {
    return grad_laplacian_log_density(stats(schedule, t, x), dim());
  }

  static Vector grad_laplacian_log_density(const PointStats& ps, int dim) {
    const double st2 = ps.stilde2;
    const Vector c = (ps.d.rowwise().squaredNorm().array() / (st2 * st2) - dim / st2).matrix();
    const double dpp = ps.resp.dot(c);
    const Vector grad_dpp = (ps.d.transpose() * ps.resp.cwiseProduct(c) - dpp * ps.dbar) / st2 -
                            2.0 * ps.dbar / (st2 * st2);
    return grad_dpp - 2.0 * score_hvp(ps, ps.dbar / st2);
  }

  /// Third-derivative contraction: the vector with components
  /// sum_{j,k} d^3 log p / (dx_i dx_j dx_k) a_j b_k, symmetric in (a, b).
  Vector hessian_directional(const NoiseSchedule& schedule, double t, const Vector& x,
                             const Vector& a, const Vector& b) const {
    return hessian_directional(stats(schedule, t, x), a, b);
  }

  static Vector hessian_directional(const PointStats& ps, const Vector& a, const Vector& b) {
    const double st2 = ps.stilde2;
    const Vector da = ps.d * a;
    const Vector db = ps.d * b;
    const Vector wda = ps.resp.cwiseProduct(da);
    const Vector wdb = ps.resp.cwiseProduct(db);
    const Vector s_a = ps.d.transpose() * wda;  // S a
    const Vector s_b = ps.d.transpose() * wdb;  // S b
    const double mb = ps.dbar.dot(b);
    const double ma = ps.dbar.dot(a);
    const Vector dbar_dir = (s_b - ps.dbar * mb) / st2 - b;  // directional derivative of dbar along b
    const Vector ds_a = (ps.d.transpose() * wdb.cwiseProduct(da) - mb * s_a) / st2 -
                        b * ma - ps.dbar * b.dot(a);
    return (ds_a - dbar_dir * ma - ps.dbar * dbar_dir.dot(a)) / (st2 * st2);
  }

  /// n draws from p_0, one column per sample.
  Matrix sample_data(Rng& rng, int n) const {
    if (n < 1) throw DomainError("sample_data: n must be >= 1");
    Matrix out(dim(), n);
    const double s = std::sqrt(s2_);
    for (int i = 0; i < n; ++i) {
      const int k = sample_component(rng);
      out.col(i) = means_.row(k).transpose();
      if (s > 0.0) out.col(i) += s * rng.normal_vector(dim());
    }
    return out;
  }

  /// n draws from p_t: x = alpha x0 + sigma eps.
  Matrix sample_diffused(const NoiseSchedule& schedule, double t, Rng& rng, int n) const {
    if (n < 1) throw DomainError("sample_diffused: n must be >= 1");
    if (!(t > 0.0 && t <= schedule.horizon()))
      throw DomainError("sample_diffused: t outside (0, T]");
    const auto [alpha, sigma] = schedule.alpha_sigma(t);
    Matrix out = alpha * sample_data(rng, n);
    for (int i = 0; i < n; ++i) out.col(i) += sigma * rng.normal_vector(dim());
    return out;
  }

  int sample_component(Rng& rng) const {
    const double u = rng.uniform();
    double acc = 0.0;
    for (Eigen::Index k = 0; k < weights_.size(); ++k) {
      acc += weights_[k];
      if (u < acc) return static_cast<int>(k);
    }
    return static_cast<int>(weights_.size() - 1);
  }

  /// Index of the component with the largest responsibility at (t, x).
  int max_responsibility_component(const NoiseSchedule& schedule, double t, const Vector& x) const {
    Eigen::Index k = 0;
    stats(schedule, t, x).resp.maxCoeff(&k);
    return static_cast<int>(k);
  }

 private:
  void check_time(const NoiseSchedule& schedule, double t) const {
    if (t == 0.0 && s2_ == 0.0)
      throw DomainError("GaussianMixture: density undefined at t=0 for point-mass target");
    if (!(t >= 0.0 && t <= schedule.horizon()))
      throw DomainError("GaussianMixture: t outside [0, T]");
  }

  Vector weights_;
  Matrix means_;
  double s2_;
  Vector log_weights_;
};

}  // namespace dflow
