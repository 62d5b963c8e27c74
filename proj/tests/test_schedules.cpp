#include <doctest.h>

#include <cmath>

#include "dflow/schedules.hpp"
#include "dflow/types.hpp"

using namespace dflow;

TEST_CASE("alpha/sigma kind identities") {
  const auto vp = NoiseSchedule::vp();
  const auto ve = NoiseSchedule::ve();
  const auto fm = NoiseSchedule::fm();

  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    const double t = 1e-6 + (1.0 - 2e-6) * rng.uniform();
    const auto [av, sv] = vp.alpha_sigma(t);
    CHECK(std::abs(av * av + sv * sv - 1.0) < 1e-12);
    const auto [ae, se] = ve.alpha_sigma(t);
    CHECK(ae == 1.0);
    CHECK(se > 0.0);
    const auto [af, sf] = fm.alpha_sigma(t);
    CHECK(std::abs(af + sf - 1.0) < 1e-12);
    CHECK(af > 0.0);
    CHECK(sf > 0.0);
  }

  // At log-SNR = 0 the VP schedule sits at alpha = sigma = 1/sqrt(2), FM at 1/2.
  const double t0_vp = vp.inv_log_snr(0.0);
  CHECK(vp.alpha_sigma(t0_vp).alpha == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-12));
  CHECK(vp.alpha_sigma(t0_vp).sigma == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-12));
  const double t0_fm = fm.inv_log_snr(0.0);
  CHECK(fm.alpha_sigma(t0_fm).alpha == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(fm.alpha_sigma(t0_fm).sigma == doctest::Approx(0.5).epsilon(1e-12));

  // sigma^2 at t=T equals sigmoid(-lsnr_min) = 1 / (1 + exp(-10)).
  const double s2 = vp.alpha_sigma(1.0).sigma * vp.alpha_sigma(1.0).sigma;
  CHECK(s2 == doctest::Approx(1.0 / (1.0 + std::exp(-10.0))).epsilon(1e-14));

  CHECK_THROWS_AS(vp.alpha_sigma(-0.1), DomainError);
  CHECK_THROWS_AS(vp.alpha_sigma(1.1), DomainError);
}

TEST_CASE("log-SNR monotonicity and inverse") {
  for (const auto& s : {NoiseSchedule::vp(), NoiseSchedule::ve(), NoiseSchedule::fm()}) {
    Rng rng(2);
    for (int i = 0; i < 200; ++i) {
      double t1 = rng.uniform(), t2 = rng.uniform();
      if (t1 > t2) std::swap(t1, t2);
      if (t2 - t1 < 1e-9) continue;
      CHECK(s.log_snr(t1) > s.log_snr(t2));
    }
    const double t = 0.37;
    CHECK(std::abs(s.inv_log_snr(s.log_snr(t)) - t) < 1e-9);
  }
  const auto vp = NoiseSchedule::vp();
  CHECK(vp.inv_log_snr(1.0) == doctest::Approx(0.45).epsilon(1e-12));
  CHECK_THROWS_AS(vp.inv_log_snr(11.0), DomainError);
  CHECK_THROWS_AS(vp.inv_log_snr(-10.5), DomainError);
}

TEST_CASE("drift coefficients match finite differences of alpha/sigma") {
  // f = d log alpha/dt and g^2 = 2 sigma^2 d log(sigma/alpha)/dt, against a
  // central finite-difference oracle on alpha_sigma.
  const double h = 1e-5;
  for (const auto& s : {NoiseSchedule::vp(), NoiseSchedule::ve(), NoiseSchedule::fm()}) {
    Rng rng(3);
    for (int i = 0; i < 100; ++i) {
      const double t = h + (1.0 - 2.0 * h) * rng.uniform();
      const auto [f, g2] = s.drift_coeffs(t);
      const auto lo = s.alpha_sigma(t - h);
      const auto hi = s.alpha_sigma(t + h);
      const double f_fd = (std::log(hi.alpha) - std::log(lo.alpha)) / (2.0 * h);
      const double sig = s.alpha_sigma(t).sigma;
      const double g2_fd = 2.0 * sig * sig *
                           (std::log(hi.sigma / hi.alpha) - std::log(lo.sigma / lo.alpha)) /
                           (2.0 * h);
      CHECK(f == doctest::Approx(f_fd).epsilon(1e-5));
      CHECK(g2 == doctest::Approx(g2_fd).epsilon(1e-5));
      CHECK(g2 >= 0.0);
    }
  }
  // VE has no drift.
  CHECK(NoiseSchedule::ve().drift_coeffs(0.42).f == 0.0);
}
