#include <doctest.h>

#include <cmath>
#include <vector>

#include "dflow/math.hpp"
#include "dflow/stats.hpp"

using namespace dflow;

namespace {

// Independent standard-normal CDF oracle: Taylor series
// Phi(x) = 1/2 + phi(x) * sum x^(2n+1) / (2n+1)!!, swapped to the complement
// for large |x|. Deliberately avoids erf/erfc so it can cross-check the
// implementation path.
double phi_oracle(double x) {
  if (x < 0.0) return 1.0 - phi_oracle(-x);
  if (x > 8.0) return 1.0;  // beyond the precision we test at
  double term = x;
  double sum = x;
  for (int n = 1; n < 200; ++n) {
    term *= x * x / (2.0 * n + 1.0);
    sum += term;
    if (term < 1e-18 * sum) break;
  }
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * kPi);
  return 0.5 + pdf * sum;
}

double invnorm_bisect(double q) {
  double lo = -10.0, hi = 10.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (phi_oracle(mid) < q ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace

TEST_CASE("inverse normal cdf") {
  CHECK(inverse_normal_cdf(0.5) == 0.0);
  CHECK(inverse_normal_cdf(0.975) == doctest::Approx(1.9599640).epsilon(1e-7));

  // Residual |Phi(x) - q| < 1e-9 against the series oracle.
  for (double q : {1e-9, 1e-6, 1e-3, 0.02, 0.1, 0.3, 0.4999, 0.77, 0.9, 0.999, 1 - 1e-7}) {
    const double x = inverse_normal_cdf(q);
    CHECK(std::abs(phi_oracle(x) - q) < 1e-9);
  }
  // Antisymmetry. At dyadic q the complement 1-q is exact and the mirrored
  // computation gives bitwise negation; elsewhere stay away from the extreme
  // tails where forming 1-q itself loses precision.
  for (double q : {0.25, 0.0625, 0.890625}) {
    CHECK(inverse_normal_cdf(1.0 - q) == -inverse_normal_cdf(q));
  }
  for (double q : {1e-3, 0.02, 0.1, 0.3, 0.4999}) {
    const double x = inverse_normal_cdf(q);
    CHECK(inverse_normal_cdf(1.0 - q) == doctest::Approx(-x).epsilon(1e-12));
  }
  // Bisection oracle agreement on interior quantiles.
  for (double q : {0.025, 0.2, 0.63, 0.975})
    CHECK(inverse_normal_cdf(q) == doctest::Approx(invnorm_bisect(q)).epsilon(1e-9));

  CHECK_THROWS_AS(inverse_normal_cdf(0.0), DomainError);
  CHECK_THROWS_AS(inverse_normal_cdf(1.0), DomainError);
  CHECK_THROWS_AS(inverse_normal_cdf(-0.3), DomainError);
}

TEST_CASE("regularized gamma and chi-squared quantile") {
  // P(1/2, x) = erf(sqrt(x)).
  for (double x : {0.1, 0.5, 1.0, 3.0, 10.0})
    CHECK(regularized_gamma_p(0.5, x) == doctest::Approx(std::erf(std::sqrt(x))).epsilon(1e-12));
  // chi-squared(2) has the closed-form quantile -2 log(1 - q).
  for (double q : {0.05, 0.5, 0.9, 0.99})
    CHECK(chi_squared_quantile(2.0, q) == doctest::Approx(-2.0 * std::log1p(-q)).epsilon(1e-10));
  CHECK(chi_squared_quantile(2.0, 0.5) == doctest::Approx(1.3862943611198906).epsilon(1e-10));
  // Median of chi-squared(D) is close to D for large D.
  CHECK(chi_squared_quantile(4096.0, 0.5) == doctest::Approx(4096.0).epsilon(2e-4));
  CHECK_THROWS_AS(chi_squared_quantile(2.0, 0.0), DomainError);
}

TEST_CASE("log_sum_exp") {
  Vector v(3);
  v << -1000.0, -1000.0, -1000.0;
  CHECK(log_sum_exp(v) == doctest::Approx(-1000.0 + std::log(3.0)).epsilon(1e-14));
  Vector w(2);
  w << 0.0, -1e9;
  CHECK(log_sum_exp(w) == doctest::Approx(0.0).epsilon(1e-14));
}

TEST_CASE("sample moments and empirical quantile") {
  std::vector<double> xs;
  for (int i = 1; i <= 100; ++i) xs.push_back(i);
  const Moments m = sample_moments(xs);
  CHECK(m.mean == doctest::Approx(50.5));
  CHECK(m.variance == doctest::Approx((100.0 * 100.0 - 1.0) / 12.0));
  CHECK(m.skewness == doctest::Approx(0.0).epsilon(1e-12));

  // Hazen position check: on 1..100 the level (i - 0.5)/100 recovers i.
  CHECK(empirical_quantile(xs, 0.005) == doctest::Approx(1.0));
  CHECK(empirical_quantile(xs, 0.505) == doctest::Approx(51.0));
  CHECK(empirical_quantile(xs, 0.5) == doctest::Approx(50.5));
  CHECK(empirical_quantile(xs, 0.0) == doctest::Approx(1.0));
  CHECK(empirical_quantile(xs, 1.0) == doctest::Approx(100.0));
}

TEST_CASE("normality test: frozen omnibus oracle values") {
  // Deterministic datasets with externally computed K^2 / z-scores.
  std::vector<double> xs(100);
  for (int i = 0; i < 100; ++i) xs[i] = std::sin(static_cast<double>(i));
  const NormalityResult r = normality_test(xs);
  CHECK(r.z_skew == doctest::Approx(-0.05142455088831695).epsilon(1e-10));
  CHECK(r.z_kurt == doctest::Approx(-14.359035283932043).epsilon(1e-10));
  CHECK(r.statistic == doctest::Approx(206.18453876963943).epsilon(1e-10));

  std::vector<double> ys(1000);
  for (int i = 0; i < 1000; ++i)
    ys[i] = std::sin(i * 0.7) + 0.3 * std::cos(i * 1.3);
  const NormalityResult r2 = normality_test(ys);
  CHECK(r2.z_skew == doctest::Approx(-0.02105323667022443).epsilon(1e-9));
  CHECK(r2.z_kurt == doctest::Approx(-38.48176295565235).epsilon(1e-9));
}

TEST_CASE("normality test: behavioural oracles") {
  // Self-consistency: normal input rejected at about the nominal rate.
  int rejections = 0;
  const int reps = 400;
  for (int rep = 0; rep < reps; ++rep) {
    Rng rng(100 + rep);
    std::vector<double> xs(100000);
    for (auto& x : xs) x = rng.normal();
    if (normality_test(xs).p_value < 0.05) ++rejections;
  }
  const double frac = static_cast<double>(rejections) / reps;
  CHECK(frac >= 0.01);
  CHECK(frac <= 0.12);

  // Exponential(1) samples are decisively rejected.
  Rng rng(3);
  std::vector<double> es(10000);
  for (auto& e : es) e = -std::log(rng.uniform_open());
  CHECK(normality_test(es).p_value < 1e-6);

  // Constant samples degenerate to p = 0 with the flag set.
  std::vector<double> cs(64, 1.5);
  const NormalityResult rc = normality_test(cs);
  CHECK(rc.degenerate);
  CHECK(rc.p_value == 0.0);

  std::vector<double> tiny(10, 0.0);
  CHECK_THROWS_AS(normality_test(tiny), DomainError);
}

TEST_CASE("fnv1a hash is stable") {
  CHECK(fnv1a_hash("") == 0xCBF29CE484222325ull);
  CHECK(fnv1a_hash("a") == fnv1a_hash("a"));
  CHECK(fnv1a_hash("a") != fnv1a_hash("b"));
}
