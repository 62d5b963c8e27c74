#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include "dflow/flow_field.hpp"
#include "dflow/integrators.hpp"
#include "dflow/math.hpp"
#include "dflow/types.hpp"

namespace dflow {

inline Vector scale_latent(const Vector& x_T, double scale) { return scale * x_T; }

/// Rescale a latent so that its squared norm hits the q-th chi-squared(D)
/// quantile of a centered Gaussian prior with per-coordinate scale sigma_T.
inline Vector latent_to_prior_quantile(const Vector& x_T, double q, double sigma_T) {
  const double current = x_T.norm();
  if (current == 0.0)
    throw DomainError("latent_to_prior_quantile: zero latent has no direction");
  const double target =
      sigma_T * std::sqrt(chi_squared_quantile(static_cast<double>(x_T.size()), q));
  return x_T * (target / current);
}

/// Rescale a latent along its ray so that the analytic log-density of the
/// diffused target at time t matches `target_log_density` (bisection on the
/// radially monotone profile).
inline Vector rescale_to_density_level(const GaussianMixture& target, const NoiseSchedule& schedule,
                                       double t, const Vector& direction, double target_log_density) {
  const double norm = direction.norm();
  if (norm == 0.0) throw DomainError("rescale_to_density_level: zero direction");
  const Vector unit = direction / norm;
  auto f = [&](double r) { return target.log_density(schedule, t, r * unit) - target_log_density; };
  double lo = 1e-6, hi = 1.0;
  while (f(hi) > 0.0 && hi < 1e6) hi *= 2.0;  // log p decreases along the ray
  if (f(hi) > 0.0) throw DomainError("rescale_to_density_level: level not bracketed");
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (f(mid) > 0.0)
      lo = mid;
    else
      hi = mid;
  }
  return 0.5 * (lo + hi) * unit;
}

/// Joint integration of dx = u dt, dv = (du/dx) v dt from the grid start.
inline std::pair<Vector, Vector> sensitivity_decode(const FlowField& field, const Vector& x_T,
                                                    const Vector& v_T, const TimeGrid& grid,
                                                    Method method = Method::Euler) {
  Vector x = x_T;
  Vector v = v_T;
  for (size_t i = 0; i + 1 < grid.nodes(); ++i) {
    const double t0 = grid[i], t1 = grid[i + 1];
    const double dt = t1 - t0;
    if (method == Method::Euler) {
      const Vector dx = field.evaluate(t0, x);
      const Vector dv = field.jvp(t0, x, v);
      x += dt * dx;
      v += dt * dv;
    } else {
      const Vector k1x = field.evaluate(t0, x);
      const Vector k1v = field.jvp(t0, x, v);
      const Vector xp = x + dt * k1x;
      const Vector vp = v + dt * k1v;
      const Vector k2x = field.evaluate(t1, xp);
      const Vector k2v = field.jvp(t1, xp, vp);
      x += 0.5 * dt * (k1x + k2x);
      v += 0.5 * dt * (k1v + k2v);
    }
    detail::check_finite(x, t0, "sensitivity_decode");
  }
  return {x, v};
}

struct SAOptions {
  Method method = Method::Euler;
  /// Exact second-order divergence (closed form) or single-fresh-probe
  /// Hutchinson per step, as in the score-free verification algorithm.
  enum class SecondOrder { Exact, Hutchinson } second_order = SecondOrder::Exact;
  int n_probes = 1;
  bool record_nodes = false;
};

struct SANode {
  double t;
  double omega;
  double v_dot_score;  // NaN when the score source is absent
};

struct SAReport {
  Vector x_T;
  Vector x_end;
  Vector v_end;
  double omega_end = 0.0;
  /// v_end . grad log p_{t_end}(x_end); NaN without a score source.
  double alignment = std::numeric_limits<double>::quiet_NaN();
  double log_density_end = std::numeric_limits<double>::quiet_NaN();
  uint64_t seed = 0;
  std::vector<SANode> nodes;
};

/// Score Alignment verification: propagate the push-forward score v through
/// the sensitivity equations and, in parallel, the score-free channel
///   d omega = -div( (du/dx) v ) dt,   omega_T = |v_T|^2.
/// With an analytic score source the report also carries the direct
/// alignment value v . grad log p at the endpoint and per-node diagnostics.
inline SAReport sa_verify(const FlowField& field, const GaussianMixture* score_source,
                          const NoiseSchedule* schedule, const Vector& x_T, const Vector& v_T,
                          const TimeGrid& grid, const SAOptions& opts = {}, uint64_t seed = 0) {
  SAReport rep;
  rep.x_T = x_T;
  rep.seed = seed;
  Rng rng(seed);

  const bool with_score = score_source != nullptr && schedule != nullptr;
  auto v_dot_score = [&](double t, const Vector& x, const Vector& v) {
    return with_score ? v.dot(score_source->score(*schedule, t, x))
                      : std::numeric_limits<double>::quiet_NaN();
  };
  auto so_div = [&](double t, const Vector& x, const Vector& v) {
    if (opts.second_order == SAOptions::SecondOrder::Exact)
      return field.second_order_divergence(t, x, v);
    return hutchinson_second_order_divergence(field, t, x, v, rng, opts.n_probes);
  };

  Vector x = x_T;
  Vector v = v_T;
  double omega = v_T.squaredNorm();
  if (opts.record_nodes) rep.nodes.push_back({grid.front(), omega, v_dot_score(grid.front(), x, v)});

  for (size_t i = 0; i + 1 < grid.nodes(); ++i) {
    const double t0 = grid[i], t1 = grid[i + 1];
    const double dt = t1 - t0;
    if (opts.method == Method::Euler) {
      const Vector dx = field.evaluate(t0, x);
      const Vector dv = field.jvp(t0, x, v);
      const double domega = -so_div(t0, x, v);
      x += dt * dx;
      v += dt * dv;
      omega += dt * domega;
    } else {
      const Vector k1x = field.evaluate(t0, x);
      const Vector k1v = field.jvp(t0, x, v);
      const double k1o = -so_div(t0, x, v);
      const Vector xp = x + dt * k1x;
      const Vector vp = v + dt * k1v;
      const Vector k2x = field.evaluate(t1, xp);
      const Vector k2v = field.jvp(t1, xp, vp);
      const double k2o = -so_div(t1, xp, vp);
      x += 0.5 * dt * (k1x + k2x);
      v += 0.5 * dt * (k1v + k2v);
      omega += 0.5 * dt * (k1o + k2o);
    }
    detail::check_finite(x, t0, "sa_verify");
    if (opts.record_nodes) rep.nodes.push_back({t1, omega, v_dot_score(t1, x, v)});
  }

  rep.x_end = x;
  rep.v_end = v;
  rep.omega_end = omega;
  if (with_score) {
    rep.alignment = v_dot_score(grid.back(), x, v);
    rep.log_density_end = score_source->log_density(*schedule, grid.back(), x);
  }
  return rep;
}

/// Convenience overload for analytic PF-ODE fields: v is initialized to the
/// exact marginal score at the grid start.
inline SAReport sa_verify(const PfOdeField& field, const Vector& x_T, const TimeGrid& grid,
                          const SAOptions& opts = {}, uint64_t seed = 0) {
  const Vector v_T = field.score(grid.front(), x_T);
  return sa_verify(field, &field.target(), &field.schedule(), x_T, v_T, grid, opts, seed);
}

}  // namespace dflow
