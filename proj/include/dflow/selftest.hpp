#pragma once

#include <cmath>
#include <iostream>

#include "dflow/density_guidance.hpp"
#include "dflow/experiments.hpp"
#include "dflow/stochastic_guidance.hpp"

namespace dflow {

/// Quick property sweep over the core invariants; one line per suite.
/// Returns true when every suite passes.
inline bool run_selftest(std::ostream& os) {
  int failures = 0;
  auto report = [&](const char* name, bool ok) {
    os << (ok ? "[PASS] " : "[FAIL] ") << name << "\n";
    if (!ok) ++failures;
  };

  Rng rng(7);

  {  // Schedule kind identities and log-SNR monotonicity.
    bool ok = true;
    for (const auto& s : {NoiseSchedule::vp(), NoiseSchedule::ve(), NoiseSchedule::fm()}) {
      double prev = std::numeric_limits<double>::infinity();
      for (int i = 0; i < 200; ++i) {
        const double t = (i + 0.5) / 200.0;
        const auto [a, sg] = s.alpha_sigma(t);
        if (s.kind() == ScheduleKind::VP) ok = ok && std::abs(a * a + sg * sg - 1.0) < 1e-12;
        if (s.kind() == ScheduleKind::FM) ok = ok && std::abs(a + sg - 1.0) < 1e-12;
        if (s.kind() == ScheduleKind::VE) ok = ok && a == 1.0;
        ok = ok && s.log_snr(t) < prev && s.drift_coeffs(t).g2 >= 0.0;
        prev = s.log_snr(t);
      }
    }
    report("schedule identities", ok);
  }

  {  // Score vs finite differences of the mixture log-density.
    const auto target = GaussianMixture::app_c3();
    const auto schedule = NoiseSchedule::vp();
    bool ok = true;
    for (int i = 0; i < 25; ++i) {
      const double t = 0.05 + 0.9 * rng.uniform();
      const Vector x = 2.0 * rng.normal_vector(2);
      const Vector s = target.score(schedule, t, x);
      for (int d = 0; d < 2; ++d) {
        Vector e = Vector::Zero(2);
        e[d] = 1e-6;
        const double fd = (target.log_density(schedule, t, x + e) -
                           target.log_density(schedule, t, x - e)) /
                          2e-6;
        ok = ok && std::abs(fd - s[d]) <= 1e-5 * std::max(1.0, std::abs(fd));
      }
    }
    report("mixture score gradient check", ok);
  }

  {  // Projection algebra.
    bool ok = true;
    for (int i = 0; i < 50; ++i) {
      const Vector s = rng.normal_vector(4);
      const ScoreProjection p(s);
      const Vector v = rng.normal_vector(4);
      ok = ok && p.apply(s).norm() < 1e-12 * s.norm();
      ok = ok && (p.apply(p.apply(v)) - p.apply(v)).norm() < 1e-12;
      ok = ok && std::abs((p.dense() - Matrix::Identity(4, 4)).norm() - 1.0) < 1e-12;
    }
    report("score-orthogonal projection algebra", ok);
  }

  {  // Constrained minimum-shift feasibility and optimality.
    bool ok = true;
    for (int i = 0; i < 50; ++i) {
      const Vector y = rng.normal_vector(4);
      const Vector v = rng.normal_vector(4);
      const double a = rng.normal();
      const Vector x = constrained_min_shift(y, v, a);
      ok = ok && std::abs(x.dot(v) - a) < 1e-9;
      for (int j = 0; j < 20; ++j) {
        const Vector other = constrained_min_shift(y + rng.normal_vector(4), v, a);
        ok = ok && (x - y).squaredNorm() <= (other - y).squaredNorm() + 1e-12;
      }
    }
    report("constrained minimum shift", ok);
  }

  {  // PF-ODE divergence equals the basis-vector jvp trace (D=2).
    const auto field = PfOdeField(NoiseSchedule::vp(), GaussianMixture::app_c3());
    bool ok = true;
    for (int i = 0; i < 25; ++i) {
      const double t = 0.05 + 0.9 * rng.uniform();
      const Vector x = 2.0 * rng.normal_vector(2);
      double trace = 0.0;
      for (int d = 0; d < 2; ++d) {
        Vector e = Vector::Zero(2);
        e[d] = 1.0;
        trace += field.jvp(t, x, e)[d];
      }
      ok = ok && std::abs(trace - field.divergence(t, x)) < 1e-9;
    }
    report("pf-ode divergence trace identity", ok);
  }

  return failures == 0;
}

}  // namespace dflow
