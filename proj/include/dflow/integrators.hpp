#pragma once

#include <cmath>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "dflow/flow_field.hpp"
#include "dflow/types.hpp"

namespace dflow {

enum class Spacing { Time, LogSnr };

/// Euler is the reference scheme. Heun pairs the second-order state update
/// with trapezoidal accumulation of the density channel; treat it as
/// experimental for the density channel.
enum class Method { Euler, Heun };

inline std::string to_string(Method m) { return m == Method::Euler ? "euler" : "heun"; }

/// Strictly monotone sequence of times. Sampling grids run from T down to
/// t_end; the reversed grid drives encoding.
class TimeGrid {
 public:
  explicit TimeGrid(std::vector<double> times) : times_(std::move(times)) {
    if (times_.empty()) throw DomainError("TimeGrid: need at least one node");
    if (times_.size() < 2) return;  // a single node means a zero-step grid
    const bool dec = times_[1] < times_[0];
    for (size_t i = 1; i < times_.size(); ++i) {
      const bool step_dec = times_[i] < times_[i - 1];
      if (step_dec != dec || times_[i] == times_[i - 1])
        throw DomainError("TimeGrid: times must be strictly monotone");
    }
  }

  /// Grid from T down to t_end with `steps` intervals. The log-SNR spacing
  /// places nodes uniformly in log-SNR and maps back through the schedule.
  static TimeGrid sampling(const NoiseSchedule& schedule, int steps, double t_end,
                           Spacing spacing = Spacing::LogSnr) {
    if (steps < 1) throw DomainError("TimeGrid: steps must be >= 1");
    const double T = schedule.horizon();
    if (!(t_end >= 0.0 && t_end < T)) throw DomainError("TimeGrid: t_end outside [0, T)");
    std::vector<double> ts(steps + 1);
    if (spacing == Spacing::Time) {
      for (int i = 0; i <= steps; ++i)
        ts[i] = T + (t_end - T) * static_cast<double>(i) / steps;
    } else {
      const double l0 = schedule.log_snr(T);
      const double l1 = schedule.log_snr(t_end);
      for (int i = 0; i <= steps; ++i)
        ts[i] = schedule.inv_log_snr(l0 + (l1 - l0) * static_cast<double>(i) / steps);
    }
    ts.front() = T;
    ts.back() = t_end;
    return TimeGrid(std::move(ts));
  }

  static TimeGrid sampling(const NoiseSchedule& schedule, int steps,
                           Spacing spacing = Spacing::LogSnr) {
    return sampling(schedule, steps, 1e-3 * schedule.horizon(), spacing);
  }

  TimeGrid reversed() const {
    std::vector<double> ts(times_.rbegin(), times_.rend());
    return TimeGrid(std::move(ts));
  }

  size_t nodes() const { return times_.size(); }
  size_t steps() const { return times_.size() - 1; }
  double operator[](size_t i) const { return times_[i]; }
  double front() const { return times_.front(); }
  double back() const { return times_.back(); }
  const std::vector<double>& times() const { return times_; }

 private:
  std::vector<double> times_;
};

/// A trajectory with its tracked log-density channel.
struct DensityTrajectory {
  std::vector<double> times;
  Matrix states;                    // dim x nodes
  std::vector<double> log_density;  // tracked log p_t(x_t)
  std::string integrator;
  uint64_t seed = 0;                // 0 for deterministic integrators
  std::string guidance;             // free-form metadata

  const double& final_log_density() const { return log_density.back(); }
  Vector final_state() const { return states.col(states.cols() - 1); }

  /// One row per node: t, x components, tracked log p.
  void write_csv(std::ostream& os) const {
    os << "t";
    for (Eigen::Index d = 0; d < states.rows(); ++d) os << ",x" << d;
    os << ",log_p\n";
    os.precision(17);
    for (size_t i = 0; i < times.size(); ++i) {
      os << times[i];
      for (Eigen::Index d = 0; d < states.rows(); ++d) os << ',' << states(d, i);
      os << ',' << log_density[i] << '\n';
    }
  }
};

namespace detail {

inline void check_finite(const Vector& x, double t_last_valid, const char* who) {
  if (!x.allFinite())
    throw DivergenceFailure(std::string(who) + ": non-finite state encountered", t_last_valid);
}

}  // namespace detail

/// Deterministic integration of dx = u dt with the coupled density channel
/// d log p = -div u dt (Heun: trapezoidal in the divergence).
inline DensityTrajectory integrate_ode(const FlowField& field, const Vector& x_T,
                                       const TimeGrid& grid, double log_p_init,
                                       Method method = Method::Euler) {
  const size_t n = grid.nodes();
  DensityTrajectory tr;
  tr.times = grid.times();
  tr.states.resize(x_T.size(), static_cast<Eigen::Index>(n));
  tr.log_density.resize(n);
  tr.integrator = to_string(method);

  Vector x = x_T;
  double lp = log_p_init;
  tr.states.col(0) = x;
  tr.log_density[0] = lp;
  for (size_t i = 0; i + 1 < n; ++i) {
    const double t0 = grid[i], t1 = grid[i + 1];
    const double dt = t1 - t0;
    if (method == Method::Euler) {
      lp += -field.divergence(t0, x) * dt;
      x += dt * field.evaluate(t0, x);
    } else {
      const Vector k1 = field.evaluate(t0, x);
      const double d1 = field.divergence(t0, x);
      const Vector xp = x + dt * k1;
      const Vector k2 = field.evaluate(t1, xp);
      const double d2 = field.divergence(t1, xp);
      x += 0.5 * dt * (k1 + k2);
      lp += -0.5 * dt * (d1 + d2);
    }
    detail::check_finite(x, t0, "integrate_ode");
    tr.states.col(static_cast<Eigen::Index>(i + 1)) = x;
    tr.log_density[i + 1] = lp;
  }
  return tr;
}

/// Decode with the PF-ODE field; the density channel starts from the analytic
/// log-density of the initial state.
inline DensityTrajectory decode(const PfOdeField& field, const Vector& x_T, const TimeGrid& grid,
                                Method method = Method::Euler) {
  return integrate_ode(field, x_T, grid, field.log_density(grid.front(), x_T), method);
}

/// The state follows `actual`; the density channel tracks the marginal of
/// `marginal` via
///   d log p = [-div u + grad log p . (u~ - u)] dt.
inline DensityTrajectory track_density_offpolicy(const PfOdeField& marginal, const FlowField& actual,
                                                 const Vector& x_T, const TimeGrid& grid,
                                                 Method method = Method::Euler) {
  const size_t n = grid.nodes();
  DensityTrajectory tr;
  tr.times = grid.times();
  tr.states.resize(x_T.size(), static_cast<Eigen::Index>(n));
  tr.log_density.resize(n);
  tr.integrator = to_string(method) + "-offpolicy";

  auto rate = [&](double t, const Vector& x, const Vector& u_act) {
    return -marginal.divergence(t, x) +
           marginal.score(t, x).dot(u_act - marginal.evaluate(t, x));
  };

  Vector x = x_T;
  double lp = marginal.log_density(grid.front(), x_T);
  tr.states.col(0) = x;
  tr.log_density[0] = lp;
  for (size_t i = 0; i + 1 < n; ++i) {
    const double t0 = grid[i], t1 = grid[i + 1];
    const double dt = t1 - t0;
    if (method == Method::Euler) {
      const Vector u_act = actual.evaluate(t0, x);
      lp += rate(t0, x, u_act) * dt;
      x += dt * u_act;
    } else {
      const Vector k1 = actual.evaluate(t0, x);
      const double r1 = rate(t0, x, k1);
      const Vector xp = x + dt * k1;
      const Vector k2 = actual.evaluate(t1, xp);
      const double r2 = rate(t1, xp, k2);
      x += 0.5 * dt * (k1 + k2);
      lp += 0.5 * dt * (r1 + r2);
    }
    detail::check_finite(x, t0, "track_density_offpolicy");
    tr.states.col(static_cast<Eigen::Index>(i + 1)) = x;
    tr.log_density[i + 1] = lp;
  }
  return tr;
}

/// Euler-Maruyama on the stochastic sampler
///   dx = (u - (1/2) phi^2 grad log p) dt + phi dW
/// with reverse-time increments sqrt(|dt|) eps, and the coupled density
/// channel
///   d log p = F dt + phi grad log p . dW,
///   F = -div u - (1/2) phi^2 laplacian log p - (1/2) phi^2 |grad log p|^2,
/// sharing the same noise draws as the state.
inline DensityTrajectory integrate_sde(const FlowField& field, const PfOdeField& marginal,
                                       const std::function<double(double)>& phi, const Vector& x_T,
                                       const TimeGrid& grid, uint64_t seed) {
  const size_t n = grid.nodes();
  DensityTrajectory tr;
  tr.times = grid.times();
  tr.states.resize(x_T.size(), static_cast<Eigen::Index>(n));
  tr.log_density.resize(n);
  tr.integrator = "euler-maruyama";
  tr.seed = seed;

  Rng rng(seed);
  Vector x = x_T;
  double lp = marginal.log_density(grid.front(), x_T);
  tr.states.col(0) = x;
  tr.log_density[0] = lp;
  for (size_t i = 0; i + 1 < n; ++i) {
    const double t0 = grid[i], t1 = grid[i + 1];
    const double dt = t1 - t0;
    const double sdt = std::sqrt(std::abs(dt));
    const double ph = phi(t0);
    if (ph < 0.0) throw DomainError("integrate_sde: phi must be nonnegative");
    const Vector eps = rng.normal_vector(x.size());
    const Vector s = marginal.score(t0, x);
    const double lap = marginal.laplacian(t0, x);
    const double f_rate = -field.divergence(t0, x) - 0.5 * ph * ph * lap -
                          0.5 * ph * ph * s.squaredNorm();
    lp += f_rate * dt + ph * sdt * s.dot(eps);
    x += dt * (field.evaluate(t0, x) - 0.5 * ph * ph * s) + ph * sdt * eps;
    detail::check_finite(x, t0, "integrate_sde");
    tr.states.col(static_cast<Eigen::Index>(i + 1)) = x;
    tr.log_density[i + 1] = lp;
  }
  return tr;
}

}  // namespace dflow
