#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <vector>

#include "dflow/asymptotics.hpp"
#include "dflow/density_guidance.hpp"
#include "dflow/integrators.hpp"
#include "dflow/parallel.hpp"
#include "dflow/score_alignment.hpp"
#include "dflow/stats.hpp"
#include "dflow/stochastic_guidance.hpp"
#include "dflow/types.hpp"

namespace dflow {

inline double median(std::vector<double> v) {
  if (v.empty()) throw DomainError("median: empty");
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// ---------------------------------------------------------------------------
// Density tracking vs the analytic oracle.
// ---------------------------------------------------------------------------

struct TrackingReport {
  int steps = 0;
  std::vector<double> abs_errors;  // per latent |tracked - analytic| at t_end
  double median_abs_error = 0.0;
};

/// Decode `n_latents` prior draws with density tracking and compare the
/// tracked final log-density against the analytic value at the endpoint.
inline TrackingReport density_tracking_report(const NoiseSchedule& schedule,
                                              const GaussianMixture& target, int n_latents,
                                              int steps, uint64_t seed, int workers = 1,
                                              double t_end_factor = 1e-3) {
  const PfOdeField field(schedule, target);
  const TimeGrid grid = TimeGrid::sampling(schedule, steps, t_end_factor * schedule.horizon());
  const double sigma_T = schedule.sigma_T();
  TrackingReport rep;
  rep.steps = steps;
  rep.abs_errors.resize(n_latents);
  parallel_for(n_latents, workers, [&](int i) {
    Rng rng(derive_seed(seed, i));
    const Vector x_T = sigma_T * rng.normal_vector(target.dim());
    const DensityTrajectory tr = decode(field, x_T, grid);
    rep.abs_errors[i] =
        std::abs(tr.final_log_density() - field.log_density(grid.back(), tr.final_state()));
  });
  rep.median_abs_error = median(rep.abs_errors);
  return rep;
}

// ---------------------------------------------------------------------------
// The two counterexample latents: opposite responses to the same upscaling.
// ---------------------------------------------------------------------------

struct CounterexampleRow {
  std::string schedule_kind;
  std::string latent;          // "z1" | "z2"
  double log_p_unscaled = 0.0;
  double log_p_scaled = 0.0;   // decoded from 1.22 x_T
  /// delta = log p(unscaled decode) - log p(scaled decode)
  double delta = 0.0;
};

/// Decodes sigma_T z and 1.22 sigma_T z for the two documented latents under
/// the given schedules. The phenomenon: the two latents respond to the same
/// upscaling with opposite log-density changes, consistently across SDEs.
inline std::vector<CounterexampleRow> counterexample_report(const std::vector<NoiseSchedule>& schedules,
                                                            int steps = 4096) {
  const GaussianMixture target = GaussianMixture::app_c3();
  Vector z1(2), z2(2);
  z1 << 1.3166, -0.2252;
  z2 << -0.1504, -0.2165;
  const double scale = 1.22;

  std::vector<CounterexampleRow> rows;
  for (const auto& schedule : schedules) {
    const PfOdeField field(schedule, target);
    const TimeGrid grid = TimeGrid::sampling(schedule, steps, 1e-3 * schedule.horizon());
    const double sigma_T = schedule.sigma_T();
    for (const auto& [name, z] : {std::pair{"z1", z1}, std::pair{"z2", z2}}) {
      CounterexampleRow row;
      row.schedule_kind = to_string(schedule.kind());
      row.latent = name;
      const DensityTrajectory a = decode(field, sigma_T * z, grid);
      const DensityTrajectory b = decode(field, scale * sigma_T * z, grid);
      row.log_p_unscaled = field.log_density(grid.back(), a.final_state());
      row.log_p_scaled = field.log_density(grid.back(), b.final_state());
      row.delta = row.log_p_unscaled - row.log_p_scaled;
      rows.push_back(row);
    }
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Score-alignment verification over a latent batch.
// ---------------------------------------------------------------------------

struct SaBatchRow {
  uint64_t latent_seed = 0;
  double alignment = 0.0;  // v . grad log p at the endpoint
  double omega = 0.0;      // score-free channel
  double log_density_end = 0.0;
};

struct SaBatchReport {
  std::vector<SaBatchRow> rows;
  double correlation = 0.0;       // corr(omega, alignment)
  double fraction_aligned = 0.0;  // fraction with alignment >= 0
};

inline SaBatchReport sa_batch_report(const NoiseSchedule& schedule, const GaussianMixture& target,
                                     int n_latents, int steps, double lsnr_stop, uint64_t seed,
                                     SAOptions opts = {}, int workers = 1) {
  const PfOdeField field(schedule, target);
  const double t_stop = schedule.inv_log_snr(lsnr_stop);
  const TimeGrid grid = TimeGrid::sampling(schedule, steps, t_stop);
  const double sigma_T = schedule.sigma_T();

  SaBatchReport rep;
  rep.rows.resize(n_latents);
  parallel_for(n_latents, workers, [&](int i) {
    const uint64_t s = derive_seed(seed, i);
    Rng rng(s);
    const Vector x_T = sigma_T * rng.normal_vector(target.dim());
    const SAReport r = sa_verify(field, x_T, grid, opts, derive_seed(s, 1));
    rep.rows[i] = {s, r.alignment, r.omega_end, r.log_density_end};
  });
  std::vector<double> al(n_latents), om(n_latents);
  int aligned = 0;
  for (int i = 0; i < n_latents; ++i) {
    al[i] = rep.rows[i].alignment;
    om[i] = rep.rows[i].omega;
    if (al[i] >= 0.0) ++aligned;
  }
  rep.correlation = pearson_correlation(al, om);
  rep.fraction_aligned = static_cast<double>(aligned) / n_latents;
  return rep;
}

// ---------------------------------------------------------------------------
// Explicit quantile matching.
// ---------------------------------------------------------------------------

struct EqmRow {
  int steps = 0;
  double correlation = 0.0;
  double max_abs_error = 0.0;
  double mean_abs_error = 0.0;
  std::vector<double> targets;
  std::vector<double> achieved;
};

struct EqmConfig {
  int table_samples = 128;
  int table_steps = 1024;
  std::vector<double> levels;       // defaults to 0.05..0.95
  std::vector<int> decode_steps{32, 64, 128, 256, 512, 1024};
  Method decode_method = Method::Euler;
  int smooth_window = 9;
  uint64_t seed = 2024;
};

/// For each quantile level: rescale one latent direction onto phi_T(q), decode
/// with the b = d phi_t(q)/dt guided field, and compare the analytic final
/// log-density against the target phi_{t_end}(q).
inline std::vector<EqmRow> eqm_report(const NoiseSchedule& schedule, const GaussianMixture& target,
                                      EqmConfig cfg = {}) {
  if (cfg.levels.empty())
    for (int i = 1; i <= 19; ++i) cfg.levels.push_back(0.05 * i);
  const PfOdeField field(schedule, target);
  const TimeGrid table_grid =
      TimeGrid::sampling(schedule, cfg.table_steps, 1e-3 * schedule.horizon(), Spacing::Time);
  const QuantileTable table =
      estimate_quantile_table(field, cfg.table_samples, table_grid, cfg.levels, cfg.seed);

  Rng rng(derive_seed(cfg.seed, 7));
  const Vector direction = schedule.sigma_T() * rng.normal_vector(target.dim());

  std::vector<EqmRow> rows;
  for (int steps : cfg.decode_steps) {
    const TimeGrid grid =
        TimeGrid::sampling(schedule, steps, 1e-3 * schedule.horizon(), Spacing::Time);
    EqmRow row;
    row.steps = steps;
    for (size_t qi = 0; qi < cfg.levels.size(); ++qi) {
      const double q = cfg.levels[qi];
      const ExplicitRate rate = b_explicit(table, q, cfg.smooth_window);
      const Vector x_T = rescale_to_density_level(target, schedule, schedule.horizon(), direction,
                                                  table.level_column(q, 0));
      const DensityTrajectory tr =
          sample_guided(field, rate, GuidanceWindow::all(), x_T, grid, cfg.decode_method);
      const double achieved = field.log_density(grid.back(), tr.final_state());
      const double target_lp =
          table.level_column(q, static_cast<Eigen::Index>(table.times.size()) - 1);
      row.targets.push_back(target_lp);
      row.achieved.push_back(achieved);
    }
    row.correlation = pearson_correlation(row.targets, row.achieved);
    double mx = 0.0, mn = 0.0;
    for (size_t i = 0; i < row.targets.size(); ++i) {
      const double e = std::abs(row.targets[i] - row.achieved[i]);
      mx = std::max(mx, e);
      mn += e;
    }
    row.max_abs_error = mx;
    row.mean_abs_error = mn / row.targets.size();
    rows.push_back(std::move(row));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Implicit density-guided sampling sweep over q.
// ---------------------------------------------------------------------------

struct DgSweepRow {
  double q = 0.0;
  double mean_log_p = 0.0;
  int failures = 0;  // vanishing-score or diverged trajectories
  std::vector<double> log_p;
};

inline std::vector<DgSweepRow> dg_sweep_report(const NoiseSchedule& schedule,
                                               const GaussianMixture& target,
                                               const std::vector<double>& qs, int n_latents,
                                               int steps, uint64_t seed, int workers = 1) {
  const PfOdeField pf(schedule, target);
  const TimeGrid grid = TimeGrid::sampling(schedule, steps, 1e-3 * schedule.horizon());
  const double sigma_T = schedule.sigma_T();

  // Shared latents across q values.
  std::vector<Vector> latents(n_latents);
  for (int i = 0; i < n_latents; ++i) {
    Rng rng(derive_seed(seed, i));
    latents[i] = sigma_T * rng.normal_vector(target.dim());
  }

  std::vector<DgSweepRow> rows;
  for (double q : qs) {
    const DgOdeField guided(pf, q, DgOdeField::default_window(schedule));
    DgSweepRow row;
    row.q = q;
    row.log_p.assign(n_latents, std::numeric_limits<double>::quiet_NaN());
    std::vector<int> fail(n_latents, 0);
    parallel_for(n_latents, workers, [&](int i) {
      try {
        const DensityTrajectory tr = track_density_offpolicy(pf, guided, latents[i], grid);
        row.log_p[i] = pf.log_density(grid.back(), tr.final_state());
      } catch (const VanishingScoreError&) {
        fail[i] = 1;
      } catch (const DivergenceFailure&) {
        fail[i] = 1;
      }
    });
    double acc = 0.0;
    int ok = 0;
    for (int i = 0; i < n_latents; ++i) {
      row.failures += fail[i];
      if (fail[i] == 0 && std::isfinite(row.log_p[i])) {
        acc += row.log_p[i];
        ++ok;
      }
    }
    row.mean_log_p = ok > 0 ? acc / ok : std::numeric_limits<double>::quiet_NaN();
    rows.push_back(std::move(row));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Stochastic density guidance dispersion.
// ---------------------------------------------------------------------------

struct SdgDispersionRow {
  double r = 0.0;
  int steps = 0;
  /// Across noise seeds, std of the analytic log-density of x_0 (what the
  /// sampler actually achieved).
  double std_log_p = 0.0;
  /// Std of the tracked channel; this one is b-integral-exact by
  /// construction, so it stays at rounding level. Reported as a diagnostic.
  double std_tracked = 0.0;
  double min_std_x = 0.0;  // smallest per-coordinate std of x_0
  double mean_abs_target_err = 0.0;
};

struct SdgDispersionConfig {
  std::vector<double> rs{0.1, 0.5, 0.9};
  std::vector<int> steps{256, 1024, 4096};
  int n_seeds = 16;
  double q = 0.5;
  int table_samples = 128;
  int table_steps = 1024;
  uint64_t seed = 99;
  bool exact_rayleigh = true;
};

/// Fixed x_T and b; vary only the noise seed. With the exact drift the final
/// tracked log-density concentrates as the grid refines while the state keeps
/// its spread along the score-orthogonal directions.
inline std::vector<SdgDispersionRow> sdg_dispersion_report(const NoiseSchedule& schedule,
                                                           const GaussianMixture& target,
                                                           SdgDispersionConfig cfg = {},
                                                           int workers = 1) {
  const PfOdeField field(schedule, target);
  const TimeGrid table_grid =
      TimeGrid::sampling(schedule, cfg.table_steps, 1e-3 * schedule.horizon(), Spacing::Time);
  const QuantileTable table = estimate_quantile_table(field, cfg.table_samples, table_grid,
                                                      {0.25, cfg.q, 0.75}, cfg.seed);
  const ExplicitRate rate = b_explicit(table, cfg.q);
  const double target_lp =
      table.level_column(cfg.q, static_cast<Eigen::Index>(table.times.size()) - 1);

  Rng rng(derive_seed(cfg.seed, 13));
  const Vector direction = schedule.sigma_T() * rng.normal_vector(target.dim());
  const Vector x_T = rescale_to_density_level(target, schedule, schedule.horizon(), direction,
                                              table.level_column(cfg.q, 0));

  std::vector<SdgDispersionRow> rows;
  for (double r : cfg.rs) {
    const NoiseWindowPolicy noise = NoiseWindowPolicy::constant(r);
    for (int steps : cfg.steps) {
      const TimeGrid grid =
          TimeGrid::sampling(schedule, steps, 1e-3 * schedule.horizon(), Spacing::Time);
      std::vector<double> finals(cfg.n_seeds), tracked(cfg.n_seeds);
      Matrix x0(target.dim(), cfg.n_seeds);
      parallel_for(cfg.n_seeds, workers, [&](int i) {
        const DensityTrajectory tr =
            sample_sdg(schedule, target, rate, noise, x_T, grid, derive_seed(cfg.seed, 1000 + i),
                       {cfg.exact_rayleigh});
        finals[i] = field.log_density(grid.back(), tr.final_state());
        tracked[i] = tr.final_log_density();
        x0.col(i) = tr.final_state();
      });
      SdgDispersionRow row;
      row.r = r;
      row.steps = steps;
      const Moments m = sample_moments(finals);
      row.std_log_p = std::sqrt(m.variance);
      row.std_tracked = std::sqrt(sample_moments(tracked).variance);
      double min_std = std::numeric_limits<double>::infinity();
      for (int d = 0; d < target.dim(); ++d) {
        const double mu = x0.row(d).mean();
        const double var = (x0.row(d).array() - mu).square().mean();
        min_std = std::min(min_std, std::sqrt(var));
      }
      row.min_std_x = min_std;
      double err = 0.0;
      for (double f : finals) err += std::abs(f - target_lp);
      row.mean_abs_target_err = err / cfg.n_seeds;
      rows.push_back(row);
    }
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Marginal preservation: phi = g stochastic sampling vs the PF-ODE.
// ---------------------------------------------------------------------------

struct MarginalPreservationReport {
  Vector ode_freq;  // component assignment frequencies
  Vector sde_freq;
  Matrix ode_mean;  // dim x K per-component means
  Matrix sde_mean;
  double max_freq_z = 0.0;
  double max_mean_z = 0.0;
};

inline MarginalPreservationReport marginal_preservation_report(const NoiseSchedule& schedule,
                                                               const GaussianMixture& target,
                                                               int n_samples, int steps,
                                                               uint64_t seed, int workers = 1) {
  const PfOdeField field(schedule, target);
  const TimeGrid grid = TimeGrid::sampling(schedule, steps, 1e-3 * schedule.horizon());
  const double sigma_T = schedule.sigma_T();
  const int K = target.components();
  const int D = target.dim();
  const double t_end = grid.back();

  Matrix ode_x(D, n_samples), sde_x(D, n_samples);
  std::vector<int> ode_c(n_samples), sde_c(n_samples);
  auto phi_g = [&](double t) { return std::sqrt(schedule.drift_coeffs(t).g2); };
  parallel_for(n_samples, workers, [&](int i) {
    Rng rng(derive_seed(seed, i));
    const Vector xa = sigma_T * rng.normal_vector(D);
    const Vector xb = sigma_T * rng.normal_vector(D);
    ode_x.col(i) = decode(field, xa, grid).final_state();
    sde_x.col(i) =
        integrate_sde(field, field, phi_g, xb, grid, derive_seed(seed, 70000 + i)).final_state();
    ode_c[i] = target.max_responsibility_component(schedule, t_end, ode_x.col(i));
    sde_c[i] = target.max_responsibility_component(schedule, t_end, sde_x.col(i));
  });

  MarginalPreservationReport rep;
  rep.ode_freq = Vector::Zero(K);
  rep.sde_freq = Vector::Zero(K);
  rep.ode_mean = Matrix::Zero(D, K);
  rep.sde_mean = Matrix::Zero(D, K);
  Matrix ode_m2 = Matrix::Zero(D, K), sde_m2 = Matrix::Zero(D, K);
  for (int i = 0; i < n_samples; ++i) {
    rep.ode_freq[ode_c[i]] += 1.0;
    rep.sde_freq[sde_c[i]] += 1.0;
    rep.ode_mean.col(ode_c[i]) += ode_x.col(i);
    rep.sde_mean.col(sde_c[i]) += sde_x.col(i);
  }
  for (int k = 0; k < K; ++k) {
    if (rep.ode_freq[k] > 0) rep.ode_mean.col(k) /= rep.ode_freq[k];
    if (rep.sde_freq[k] > 0) rep.sde_mean.col(k) /= rep.sde_freq[k];
  }
  for (int i = 0; i < n_samples; ++i) {
    ode_m2.col(ode_c[i]) += (ode_x.col(i) - rep.ode_mean.col(ode_c[i])).cwiseAbs2();
    sde_m2.col(sde_c[i]) += (sde_x.col(i) - rep.sde_mean.col(sde_c[i])).cwiseAbs2();
  }

  // Two-sample z-scores: component frequencies and per-component means.
  for (int k = 0; k < K; ++k) {
    const double pa = rep.ode_freq[k] / n_samples;
    const double pb = rep.sde_freq[k] / n_samples;
    const double se = std::sqrt((pa * (1 - pa) + pb * (1 - pb)) / n_samples);
    if (se > 0) rep.max_freq_z = std::max(rep.max_freq_z, std::abs(pa - pb) / se);
    const double na = rep.ode_freq[k], nb = rep.sde_freq[k];
    if (na > 1 && nb > 1) {
      for (int d = 0; d < D; ++d) {
        const double va = ode_m2(d, k) / (na - 1), vb = sde_m2(d, k) / (nb - 1);
        const double sem = std::sqrt(va / na + vb / nb);
        if (sem > 0)
          rep.max_mean_z =
              std::max(rep.max_mean_z, std::abs(rep.ode_mean(d, k) - rep.sde_mean(d, k)) / sem);
      }
    }
    rep.ode_freq[k] = pa;
    rep.sde_freq[k] = pb;
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Fig.-9-style asymptotics grid with per-(D, sigma) seed medians.
// ---------------------------------------------------------------------------

struct AsymptoticsSummary {
  int dim = 0;
  double sigma = 0.0;
  double median_p = 0.0;
  double min_p = 0.0;
  double max_p = 0.0;
  double median_abs_mean = 0.0;
  double median_variance = 0.0;
};

inline std::vector<AsymptoticsSummary> summarize_asymptotics(const std::vector<HStatReport>& rows) {
  std::map<std::pair<int, double>, std::vector<const HStatReport*>> cells;
  for (const auto& r : rows) cells[{r.dim, r.sigma}].push_back(&r);
  std::vector<AsymptoticsSummary> out;
  for (const auto& [key, rs] : cells) {
    std::vector<double> ps, ms, vs;
    for (const auto* r : rs) {
      ps.push_back(r->p_value);
      ms.push_back(std::abs(r->mean));
      vs.push_back(r->variance);
    }
    AsymptoticsSummary s;
    s.dim = key.first;
    s.sigma = key.second;
    s.median_p = median(ps);
    s.min_p = *std::min_element(ps.begin(), ps.end());
    s.max_p = *std::max_element(ps.begin(), ps.end());
    s.median_abs_mean = median(ms);
    s.median_variance = median(vs);
    out.push_back(s);
  }
  return out;
}

inline std::vector<HStatReport> asymptotics_grid(int components, const std::vector<int>& dims,
                                                 const std::vector<double>& sigmas, int n_samples,
                                                 int n_seeds, uint64_t seed, int workers = 1) {
  struct Cell {
    int dim;
    double sigma;
    uint64_t seed;
  };
  std::vector<Cell> cells;
  for (int d : dims)
    for (double s : sigmas)
      for (int i = 0; i < n_seeds; ++i) cells.push_back({d, s, derive_seed(seed, cells.size())});
  std::vector<HStatReport> rows(cells.size());
  parallel_for(static_cast<int>(cells.size()), workers, [&](int i) {
    rows[i] = mixture_normality_cell(components, cells[i].dim, cells[i].sigma, n_samples,
                                     cells[i].seed);
  });
  return rows;
}

}  // namespace dflow
