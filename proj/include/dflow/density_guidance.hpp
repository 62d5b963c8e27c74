#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <vector>

#include "dflow/flow_field.hpp"
#include "dflow/integrators.hpp"
#include "dflow/math.hpp"
#include "dflow/stats.hpp"
#include "dflow/types.hpp"

namespace dflow {

/// argmin_x (1/2)|x - y|^2  s.t.  x . v = a, solved in closed form:
/// x = y + ((a - v.y) / |v|^2) v.
template <typename DerivedY, typename DerivedV>
Vector constrained_min_shift(const Eigen::MatrixBase<DerivedY>& y,
                             const Eigen::MatrixBase<DerivedV>& v, double a) {
  const double vv = v.squaredNorm();
  if (vv == 0.0) throw DomainError("constrained_min_shift: degenerate constraint v = 0");
  return y + ((a - v.dot(y)) / vv) * v;
}

/// Active time window for guidance corrections.
struct GuidanceWindow {
  double t_lo = 0.0;
  double t_hi = std::numeric_limits<double>::infinity();
  bool contains(double t) const { return t >= t_lo && t <= t_hi; }
  static GuidanceWindow all() { return {}; }
  /// The default window of density-guided sampling: from T down to the time
  /// where the log-SNR crosses `lsnr_stop`.
  static GuidanceWindow from_lsnr(const NoiseSchedule& schedule, double lsnr_stop) {
    return {schedule.inv_log_snr(lsnr_stop), schedule.horizon()};
  }
};

/// Prescribed log-density rate b_t(x). `average` lets table-backed rates
/// report their exact mean over an integrator step.
class RateFunction {
 public:
  virtual ~RateFunction() = default;
  virtual double rate(double t, const Vector& x) const = 0;
  virtual double average(double t0, double t1, const Vector& x) const { return rate(t0, x); }
};

class CallbackRate : public RateFunction {
 public:
  using Fn = std::function<double(double, const Vector&)>;
  explicit CallbackRate(Fn fn) : fn_(std::move(fn)) {}
  double rate(double t, const Vector& x) const override { return fn_(t, x); }

 private:
  Fn fn_;
};

/// Empirical log-density quantiles phi_t(q) on a time grid.
struct QuantileTable {
  std::vector<double> times;            // grid nodes, decreasing from T
  std::vector<double> levels;           // quantile levels, increasing
  Matrix phi;                           // nodes x levels
  int sample_count = 0;                 // K used for estimation
  std::string interpolation = "hazen-midpoint";

  double level_column(double q, Eigen::Index node) const {
    const auto& ls = levels;
    if (q < ls.front() || q > ls.back())
      throw DomainError("QuantileTable: q outside table range (no extrapolation)");
    const auto it = std::lower_bound(ls.begin(), ls.end(), q);
    const size_t j = static_cast<size_t>(it - ls.begin());
    if (j == 0 || ls[j] == q) return phi(node, static_cast<Eigen::Index>(j == 0 ? 0 : j));
    const double w = (q - ls[j - 1]) / (ls[j] - ls[j - 1]);
    return (1.0 - w) * phi(node, static_cast<Eigen::Index>(j - 1)) +
           w * phi(node, static_cast<Eigen::Index>(j));
  }
};

/// Estimate phi_t(q): K prior draws decoded with density tracking, empirical
/// quantiles per node and level (Hazen positions, linear interpolation).
inline QuantileTable estimate_quantile_table(const PfOdeField& field, int sample_count,
                                             const TimeGrid& grid, std::vector<double> levels,
                                             uint64_t seed, Method method = Method::Euler) {
  if (sample_count < 2) throw DomainError("estimate_quantile_table: need K >= 2");
  if (levels.empty()) throw DomainError("estimate_quantile_table: no levels");
  if (!std::is_sorted(levels.begin(), levels.end()))
    throw DomainError("estimate_quantile_table: levels must be increasing");

  const size_t nodes = grid.nodes();
  Matrix tracked(sample_count, static_cast<Eigen::Index>(nodes));
  Rng rng(seed);
  const Matrix latents =
      field.target().sample_diffused(field.schedule(), grid.front(), rng, sample_count);
  for (int k = 0; k < sample_count; ++k) {
    const DensityTrajectory tr = decode(field, latents.col(k), grid, method);
    for (size_t i = 0; i < nodes; ++i) tracked(k, static_cast<Eigen::Index>(i)) = tr.log_density[i];
  }

  QuantileTable table;
  table.times = grid.times();
  table.levels = std::move(levels);
  table.sample_count = sample_count;
  table.phi.resize(static_cast<Eigen::Index>(nodes), static_cast<Eigen::Index>(table.levels.size()));
  std::vector<double> column(sample_count);
  for (size_t i = 0; i < nodes; ++i) {
    for (int k = 0; k < sample_count; ++k) column[k] = tracked(k, static_cast<Eigen::Index>(i));
    std::sort(column.begin(), column.end());
    for (size_t j = 0; j < table.levels.size(); ++j)
      table.phi(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          empirical_quantile(column, table.levels[j], /*presorted=*/true);
  }
  return table;
}

/// Explicit quantile-matching rate b_t = d phi_t(q) / dt: finite differences
/// of the table column, smoothed by a centered moving average (window
/// shrinks symmetrically at the ends so the integral stays unbiased).
/// Piecewise-constant in t and independent of x; `average` integrates the
/// smoothed rate exactly between arbitrary times.
class ExplicitRate : public RateFunction {
 public:
  ExplicitRate(const QuantileTable& table, double q, int smooth_window = 9) {
    if (smooth_window < 1 || smooth_window % 2 == 0)
      throw DomainError("ExplicitRate: smoothing window must be odd and >= 1");
    times_ = table.times;
    const size_t n = times_.size();
    std::vector<double> raw(n - 1);
    std::vector<double> col(n);
    for (size_t i = 0; i < n; ++i) col[i] = table.level_column(q, static_cast<Eigen::Index>(i));
    for (size_t i = 0; i + 1 < n; ++i) raw[i] = (col[i + 1] - col[i]) / (times_[i + 1] - times_[i]);
    rates_.resize(n - 1);
    const int half = (smooth_window - 1) / 2;
    for (size_t i = 0; i + 1 < n; ++i) {
      const int w = std::min<int>({half, static_cast<int>(i), static_cast<int>(n - 2 - i)});
      double acc = 0.0;
      for (int j = -w; j <= w; ++j) acc += raw[i + j];
      rates_[i] = acc / (2 * w + 1);
    }
    cum_.resize(n);
    cum_[0] = col[0];
    for (size_t i = 0; i + 1 < n; ++i) cum_[i + 1] = cum_[i] + rates_[i] * (times_[i + 1] - times_[i]);
  }

  double rate(double t, const Vector&) const override { return rates_[interval(t)]; }

  double average(double t0, double t1, const Vector&) const override {
    return (level_at(t1) - level_at(t0)) / (t1 - t0);
  }

  /// The smoothed quantile path value at t (linear between nodes).
  double level_at(double t) const {
    const size_t i = interval(t);
    const double w = (t - times_[i]) / (times_[i + 1] - times_[i]);
    return cum_[i] + w * (cum_[i + 1] - cum_[i]);
  }

 private:
  size_t interval(double t) const {
    // times_ decreasing; interval i covers [times_[i+1], times_[i]].
    const auto it = std::upper_bound(times_.begin(), times_.end(), t, std::greater<double>());
    const size_t i = static_cast<size_t>(it - times_.begin());
    if (i == 0) return 0;
    return std::min(i - 1, times_.size() - 2);
  }

  std::vector<double> times_;
  std::vector<double> rates_;
  std::vector<double> cum_;
};

inline ExplicitRate b_explicit(const QuantileTable& table, double q, int smooth_window = 9) {
  return ExplicitRate(table, q, smooth_window);
}

/// Implicit quantile-matching rate
///   b(t, x) = -div u_t(x) - (1/2) g^2(t) (sqrt(2 D) / sigma_t^2) InvPhi(q).
class ImplicitRate : public RateFunction {
 public:
  ImplicitRate(PfOdeField field, double q)
      : field_(std::move(field)), z_(inverse_normal_cdf(q)), sqrt2d_(std::sqrt(2.0 * field_.dim())) {}

  double rate(double t, const Vector& x) const override {
    const auto [f, g2] = field_.schedule().drift_coeffs(t);
    const auto as = field_.schedule().alpha_sigma(t);
    return -field_.divergence(t, x) - 0.5 * g2 * sqrt2d_ / (as.sigma * as.sigma) * z_;
  }

 private:
  PfOdeField field_;
  double z_;
  double sqrt2d_;
};

inline ImplicitRate b_implicit(const NoiseSchedule& schedule, const GaussianMixture& target, double q) {
  return ImplicitRate(PfOdeField(schedule, target), q);
}

namespace detail {

inline void check_score(const Vector& sigma_score, double t, int dim) {
  if (sigma_score.norm() < 1e-8 * std::sqrt(static_cast<double>(dim)))
    throw VanishingScoreError("guided field: score vanished inside the active window", t);
}

}  // namespace detail

/// The minimal drift correction that turns the PF-ODE density rate into b:
///   [(div u(x) + b) / |grad log p(x)|^2] grad log p(x).
inline Vector guided_correction(const PfOdeField& pf, double t, const Vector& x, double b) {
  const Vector s = pf.score(t, x);
  const double sigma = pf.schedule().alpha_sigma(t).sigma;
  detail::check_score(sigma * s, t, pf.dim());
  return ((pf.divergence(t, x) + b) / s.squaredNorm()) * s;
}

/// The density-guided drift
///   u~(x) = u(x) + [(div u(x) + b(x)) / |grad log p(x)|^2] grad log p(x)
/// applied inside the window, plain PF-ODE outside.
class GuidedField : public FlowField {
 public:
  GuidedField(PfOdeField base, std::shared_ptr<const RateFunction> rate,
              GuidanceWindow window = GuidanceWindow::all())
      : base_(std::move(base)), rate_(std::move(rate)), window_(window) {}

  int dim() const override { return base_.dim(); }

  Vector evaluate(double t, const Vector& x) const override {
    const Vector u = base_.evaluate(t, x);
    if (!window_.contains(t)) return u;
    return u + guided_correction(base_, t, x, rate_->rate(t, x));
  }

  const PfOdeField& base() const { return base_; }
  const GuidanceWindow& window() const { return window_; }

 private:
  PfOdeField base_;
  std::shared_ptr<const RateFunction> rate_;
  GuidanceWindow window_;
};

inline GuidedField guided_field(const NoiseSchedule& schedule, const GaussianMixture& target,
                                std::shared_ptr<const RateFunction> rate,
                                GuidanceWindow window = GuidanceWindow::all()) {
  return GuidedField(PfOdeField(schedule, target), std::move(rate), window);
}

/// Density-guided sampling drift in score-rescaling form:
///   u = f x - (1/2) g^2 eta grad log p,
///   eta = 1 + sqrt(2 D) InvPhi(q) / |sigma_t grad log p|^2,
/// active inside the window (default: log-SNR above 1), exact PF-ODE outside.
class DgOdeField : public FlowField {
 public:
  DgOdeField(PfOdeField base, double q, GuidanceWindow window)
      : base_(std::move(base)), z_(inverse_normal_cdf(q)), window_(window) {}

  static GuidanceWindow default_window(const NoiseSchedule& schedule) {
    const double stop = std::min(1.0, schedule.lsnr_max());
    return GuidanceWindow::from_lsnr(schedule, stop);
  }

  int dim() const override { return base_.dim(); }

  Vector evaluate(double t, const Vector& x) const override {
    const Vector u = base_.evaluate(t, x);
    if (!window_.contains(t) || z_ == 0.0) return u;
    const auto [f, g2] = base_.schedule().drift_coeffs(t);
    const double sigma = base_.schedule().alpha_sigma(t).sigma;
    const Vector s = base_.score(t, x);
    detail::check_score(sigma * s, t, dim());
    const double delta =
        std::sqrt(2.0 * dim()) * z_ / (sigma * sigma * s.squaredNorm());
    return u - 0.5 * g2 * delta * s;
  }

  const PfOdeField& base() const { return base_; }

 private:
  PfOdeField base_;
  double z_;
  GuidanceWindow window_;
};

inline DgOdeField dg_ode_field(const NoiseSchedule& schedule, const GaussianMixture& target, double q) {
  PfOdeField base(schedule, target);
  return DgOdeField(std::move(base), q, DgOdeField::default_window(schedule));
}

/// Guided decoding with the density channel tracked off-policy. Rates are
/// applied as their exact average over each step, which keeps the demanded
/// integral of b independent of the step count for table-backed rates.
inline DensityTrajectory sample_guided(const PfOdeField& pf, const RateFunction& rate,
                                       const GuidanceWindow& window, const Vector& x_T,
                                       const TimeGrid& grid, Method method = Method::Euler) {
  const size_t n = grid.nodes();
  DensityTrajectory tr;
  tr.times = grid.times();
  tr.states.resize(x_T.size(), static_cast<Eigen::Index>(n));
  tr.log_density.resize(n);
  tr.integrator = to_string(method) + "-guided";
  tr.guidance = "density-guidance";

  auto drift_and_rate = [&](double t, const Vector& x, double b) {
    const Vector u = pf.evaluate(t, x);
    if (!window.contains(t)) return std::make_pair(u, -pf.divergence(t, x));
    const Vector corr = guided_correction(pf, t, x, b);
    const double lp_rate = -pf.divergence(t, x) + pf.score(t, x).dot(corr);
    return std::make_pair(Vector(u + corr), lp_rate);
  };

  Vector x = x_T;
  double lp = pf.log_density(grid.front(), x_T);
  tr.states.col(0) = x;
  tr.log_density[0] = lp;
  for (size_t i = 0; i + 1 < n; ++i) {
    const double t0 = grid[i], t1 = grid[i + 1];
    const double dt = t1 - t0;
    const double b = rate.average(t0, t1, x);
    if (method == Method::Euler) {
      const auto [u, r] = drift_and_rate(t0, x, b);
      x += dt * u;
      lp += dt * r;
    } else {
      const auto [u1, r1] = drift_and_rate(t0, x, b);
      const Vector xp = x + dt * u1;
      const auto [u2, r2] = drift_and_rate(t1, xp, b);
      x += 0.5 * dt * (u1 + u2);
      lp += 0.5 * dt * (r1 + r2);
    }
    detail::check_finite(x, t0, "sample_guided");
    tr.states.col(static_cast<Eigen::Index>(i + 1)) = x;
    tr.log_density[i + 1] = lp;
  }
  return tr;
}

}  // namespace dflow
