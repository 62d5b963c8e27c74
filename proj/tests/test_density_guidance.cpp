#include <doctest.h>

#include <cmath>
#include <memory>

#include "dflow/density_guidance.hpp"
#include "dflow/integrators.hpp"

using namespace dflow;

TEST_CASE("constrained minimum shift") {
  Vector y = Vector::Zero(2);
  Vector v(2);
  v << 1.0, 0.0;
  const Vector x = constrained_min_shift(y, v, 2.0);
  CHECK(x[0] == doctest::Approx(2.0));
  CHECK(x[1] == doctest::Approx(0.0));

  Rng rng(51);
  for (int i = 0; i < 100; ++i) {
    const Vector yy = rng.normal_vector(4);
    const Vector vv = rng.normal_vector(4);
    const double a = rng.normal();
    const Vector sol = constrained_min_shift(yy, vv, a);
    CHECK(sol.dot(vv) == doctest::Approx(a).epsilon(1e-9));

    // Already-feasible points stay put.
    const Vector same = constrained_min_shift(yy, vv, vv.dot(yy));
    CHECK((same - yy).norm() < 1e-12);

    // Optimality against random feasible competitors (projected perturbations).
    const double obj = (sol - yy).squaredNorm();
    for (int j = 0; j < 1000; ++j) {
      const Vector competitor = constrained_min_shift(yy + rng.normal_vector(4), vv, a);
      CHECK(obj <= (competitor - yy).squaredNorm() + 1e-12);
    }
  }
  CHECK_THROWS_AS(constrained_min_shift(y, Vector::Zero(2), 1.0), DomainError);
}

TEST_CASE("guided field with the canonical rate is the plain field") {
  const auto vp = NoiseSchedule::vp();
  const auto c3 = GaussianMixture::app_c3();
  const PfOdeField pf(vp, c3);
  auto rate = std::make_shared<CallbackRate>(
      [&pf](double t, const Vector& x) { return -pf.divergence(t, x); });
  const GuidedField guided(pf, rate);
  Rng rng(52);
  for (int i = 0; i < 20; ++i) {
    const double t = 0.05 + 0.9 * rng.uniform();
    const Vector x = 1.5 * rng.normal_vector(2);
    CHECK((guided.evaluate(t, x) - pf.evaluate(t, x)).norm() == 0.0);
  }
}

TEST_CASE("constant rate offset shifts the final density by its integral") {
  const auto vp = NoiseSchedule::vp();
  Vector w = Vector::Ones(1);
  Matrix m = Matrix::Zero(1, 2);
  const GaussianMixture gauss(w, m, 1.0);
  const PfOdeField pf(vp, gauss);
  const TimeGrid grid = TimeGrid::sampling(vp, 2048, 1e-3);
  Rng rng(53);
  const Vector x_T = vp.sigma_T() * rng.normal_vector(2);

  const double delta = 0.7;
  const CallbackRate base([&pf](double t, const Vector& x) { return -pf.divergence(t, x); });
  const CallbackRate shifted(
      [&pf, delta](double t, const Vector& x) { return -pf.divergence(t, x) + delta; });

  const DensityTrajectory a = sample_guided(pf, base, GuidanceWindow::all(), x_T, grid);
  const DensityTrajectory b = sample_guided(pf, shifted, GuidanceWindow::all(), x_T, grid);

  const double span = grid.back() - grid.front();  // negative
  CHECK(b.final_log_density() - a.final_log_density() ==
        doctest::Approx(delta * span).epsilon(1e-9));
  // Tracked and analytic endpoints agree within the integrator tolerance.
  CHECK(std::abs(b.final_log_density() - pf.log_density(grid.back(), b.final_state())) < 2e-2);
}

TEST_CASE("quantile table: ordering and the gaussian median oracle") {
  const auto vp = NoiseSchedule::vp();
  Vector w = Vector::Ones(1);
  Matrix m = Matrix::Zero(1, 2);
  const GaussianMixture gauss(w, m, 1.0);
  const PfOdeField pf(vp, gauss);
  const TimeGrid grid = TimeGrid::sampling(vp, 256, 1e-3, Spacing::Time);
  const auto table = estimate_quantile_table(pf, 256, grid, {0.01, 0.5, 0.99}, 54);

  for (size_t i = 0; i < table.times.size(); ++i) {
    CHECK(table.phi(static_cast<Eigen::Index>(i), 0) <= table.phi(static_cast<Eigen::Index>(i), 1));
    CHECK(table.phi(static_cast<Eigen::Index>(i), 1) <= table.phi(static_cast<Eigen::Index>(i), 2));
  }

  // Under VP with s2 = 1 the diffused density is the standard Gaussian at
  // every t, so the median of log p_t is -log(2 pi) - chi2_median(2)/2 up to
  // integrator bias; the Monte-Carlo error at K = 256 dominates.
  const double want = -std::log(2.0 * kPi) - 0.5 * chi_squared_quantile(2.0, 0.5);
  for (size_t i : {size_t(0), table.times.size() / 2, table.times.size() - 1}) {
    const double got = table.phi(static_cast<Eigen::Index>(i), 1);
    CHECK(std::abs(got - want) < 0.25);  // ~3 standard errors of the sample median
  }

  CHECK_THROWS_AS(estimate_quantile_table(pf, 1, grid, {0.5}, 1), DomainError);
  CHECK_THROWS_AS(table.level_column(0.999, 0), DomainError);
}

TEST_CASE("explicit rate: stationary, telescoping and the gaussian derivative") {
  // Synthetic stationary table: the rate vanishes.
  QuantileTable table;
  table.times = {1.0, 0.8, 0.6, 0.4, 0.2};
  table.levels = {0.5};
  table.phi = Matrix::Constant(5, 1, -3.0);
  table.sample_count = 2;
  const ExplicitRate flat = b_explicit(table, 0.5);
  CHECK(flat.rate(0.7, Vector()) == 0.0);

  // Telescoping without smoothing: integrating the rate across the grid
  // recovers the端 column difference.
  QuantileTable ramp;
  ramp.times = {1.0, 0.7, 0.5, 0.2, 0.1};
  ramp.levels = {0.5};
  ramp.phi.resize(5, 1);
  ramp.phi << -4.0, -3.1, -2.7, -1.0, 0.3;
  const ExplicitRate rate = b_explicit(ramp, 0.5, 1);
  double integral = 0.0;
  for (size_t i = 0; i + 1 < ramp.times.size(); ++i)
    integral += rate.rate(ramp.times[i], Vector()) * (ramp.times[i + 1] - ramp.times[i]);
  CHECK(integral == doctest::Approx(0.3 - (-4.0)).epsilon(1e-6));
  // The averaged form telescopes as well, from any intermediate time.
  CHECK(rate.average(1.0, 0.1, Vector()) ==
        doctest::Approx((0.3 - (-4.0)) / (0.1 - 1.0)).epsilon(1e-12));

  // Gaussian case: the empirical quantile rate matches the analytic time
  // derivative of the log-density median.
  const auto vp = NoiseSchedule::vp();
  Vector w = Vector::Ones(1);
  Matrix m = Matrix::Zero(1, 2);
  const GaussianMixture gauss(w, m, 1.0);
  const PfOdeField pf(vp, gauss);
  const TimeGrid grid = TimeGrid::sampling(vp, 512, 1e-3, Spacing::Time);
  const auto gt = estimate_quantile_table(pf, 4096, grid, {0.5}, 55);
  const ExplicitRate grate = b_explicit(gt, 0.5);
  // Under VP with s2=1 the marginal is time-independent, so the analytic
  // median derivative is zero; check the smoothed empirical rate is small
  // relative to the canonical divergence scale.
  const Vector probe = Vector::Zero(2);
  const double div_scale = std::abs(pf.divergence(0.5, probe));
  CHECK(std::abs(grate.rate(0.5, probe)) < 5e-2 * std::max(1.0, div_scale));
}

TEST_CASE("implicit rate and the score-rescaled field") {
  const auto vp = NoiseSchedule::vp();
  const auto c3 = GaussianMixture::app_c3();
  const PfOdeField pf(vp, c3);
  Rng rng(56);

  // q = 1/2: the inverse normal CDF is exactly zero and the rate reduces to
  // the canonical divergence.
  const ImplicitRate median_rate = b_implicit(vp, c3, 0.5);
  for (int i = 0; i < 10; ++i) {
    const double t = 0.05 + 0.9 * rng.uniform();
    const Vector x = 1.5 * rng.normal_vector(2);
    CHECK(median_rate.rate(t, x) == -pf.divergence(t, x));
  }

  // q = 0.9, D = 2: the offset from the canonical rate is
  // -(1/2) g^2 (2 / sigma_t^2) * 1.2815515655446004.
  const ImplicitRate rate9 = b_implicit(vp, c3, 0.9);
  const double z9 = 1.2815515655446004;
  for (int i = 0; i < 10; ++i) {
    const double t = 0.05 + 0.9 * rng.uniform();
    const Vector x = 1.5 * rng.normal_vector(2);
    const auto [f, g2] = vp.drift_coeffs(t);
    const auto as = vp.alpha_sigma(t);
    const double want = -0.5 * g2 * (2.0 / (as.sigma * as.sigma)) * z9;
    CHECK(rate9.rate(t, x) - (-pf.divergence(t, x)) == doctest::Approx(want).epsilon(1e-7));
  }

  // Algebraic equivalence: guided field with the implicit rate equals the
  // eta-scaled form pointwise.
  const GuidanceWindow window = DgOdeField::default_window(vp);
  const GuidedField via_rate(pf, std::make_shared<ImplicitRate>(b_implicit(vp, c3, 0.7)), window);
  const DgOdeField direct(pf, 0.7, window);
  for (int i = 0; i < 20; ++i) {
    const double t = 0.05 + 0.9 * rng.uniform();
    const Vector x = 1.5 * rng.normal_vector(2);
    const Vector a = via_rate.evaluate(t, x);
    const Vector b = direct.evaluate(t, x);
    CHECK((a - b).norm() <= 1e-12 * std::max(1.0, b.norm()));
  }
}

TEST_CASE("median guidance is bitwise the pf-ode") {
  const auto vp = NoiseSchedule::vp();
  const auto c3 = GaussianMixture::app_c3();
  const PfOdeField pf(vp, c3);
  const DgOdeField dg = dg_ode_field(vp, c3, 0.5);
  Rng rng(57);
  for (int i = 0; i < 20; ++i) {
    const double t = 0.02 + 0.97 * rng.uniform();
    const Vector x = 1.5 * rng.normal_vector(2);
    CHECK((dg.evaluate(t, x) - pf.evaluate(t, x)).norm() == 0.0);
  }
}

TEST_CASE("outside the active window the guided field is the pf-ode bitwise") {
  const auto vp = NoiseSchedule::vp();
  const auto c3 = GaussianMixture::app_c3();
  const PfOdeField pf(vp, c3);
  const GuidanceWindow window = DgOdeField::default_window(vp);  // [0.45, 1]
  const DgOdeField dg(pf, 0.9, window);
  auto rate = std::make_shared<ImplicitRate>(b_implicit(vp, c3, 0.9));
  const GuidedField guided(pf, rate, window);
  Rng rng(58);
  for (int i = 0; i < 20; ++i) {
    const double t = 0.02 + 0.40 * rng.uniform();  // below the window start
    const Vector x = 1.5 * rng.normal_vector(2);
    CHECK((dg.evaluate(t, x) - pf.evaluate(t, x)).norm() == 0.0);
    CHECK((guided.evaluate(t, x) - pf.evaluate(t, x)).norm() == 0.0);
  }
}

TEST_CASE("vanishing score raises inside the window") {
  // Symmetric two-component mixture: the score vanishes on the symmetry axis.
  const auto vp = NoiseSchedule::vp();
  Vector w = Vector::Constant(2, 0.5);
  Matrix m(2, 2);
  m << -1.0, 0.0, 1.0, 0.0;
  const GaussianMixture sym(w, m, 0.01);
  const PfOdeField pf(vp, sym);
  auto rate = std::make_shared<CallbackRate>([](double, const Vector&) { return 0.0; });
  const GuidedField guided(pf, rate);
  const Vector on_axis = Vector::Zero(2);
  CHECK_THROWS_AS(guided.evaluate(0.5, on_axis), VanishingScoreError);
}

TEST_CASE("quantile table smoothing keeps levels ordered") {
  const auto vp = NoiseSchedule::vp();
  const auto mix = GaussianMixture::eqm2d();
  const PfOdeField pf(vp, mix);
  const TimeGrid grid = TimeGrid::sampling(vp, 128, 1e-3, Spacing::Time);
  const auto table = estimate_quantile_table(pf, 64, grid, {0.1, 0.5, 0.9}, 59);
  const ExplicitRate lo = b_explicit(table, 0.1);
  const ExplicitRate mid = b_explicit(table, 0.5);
  const ExplicitRate hi = b_explicit(table, 0.9);
  for (double t : {0.9, 0.6, 0.3, 0.05}) {
    CHECK(lo.level_at(t) <= mid.level_at(t) + 1e-9);
    CHECK(mid.level_at(t) <= hi.level_at(t) + 1e-9);
  }
}
