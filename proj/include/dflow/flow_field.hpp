#pragma once

#include <functional>
#include <memory>

#include "dflow/gaussian_mixture.hpp"
#include "dflow/schedules.hpp"
#include "dflow/types.hpp"

namespace dflow {

/// Time-dependent vector field contract: u_t(x), Jacobian-vector products and
/// divergence. Exact second-order capabilities are optional; analytic fields
/// implement them, everything else reports UnsupportedError.
class FlowField {
 public:
  virtual ~FlowField() = default;

  virtual int dim() const = 0;
  virtual Vector evaluate(double t, const Vector& x) const = 0;

  /// (du/dx) v.
  virtual Vector jvp(double t, const Vector& x, const Vector& v) const {
    (void)t; (void)x; (void)v;
    throw UnsupportedError("FlowField: jvp not available for this field");
  }

  virtual double divergence(double t, const Vector& x) const {
    (void)t; (void)x;
    throw UnsupportedError("FlowField: exact divergence not available for this field");
  }

  virtual bool has_second_order() const { return false; }

  /// Directional derivative of the jvp map: d/dx [ (du/dx) v ] applied to dir.
  virtual Vector jvp_directional(double t, const Vector& x, const Vector& v, const Vector& dir) const {
    (void)t; (void)x; (void)v; (void)dir;
    throw UnsupportedError("FlowField: nested differentiation not available for this field");
  }

  /// Exact div( (du/dx) v ).
  virtual double second_order_divergence(double t, const Vector& x, const Vector& v) const {
    (void)t; (void)x; (void)v;
    throw UnsupportedError("FlowField: exact second-order divergence not available");
  }
};

/// Hutchinson divergence estimate: mean over Rademacher probes of eps . J eps.
inline double hutchinson_divergence(const FlowField& field, double t, const Vector& x, Rng& rng,
                                    int n_probes) {
  if (n_probes < 1) throw DomainError("hutchinson_divergence: n_probes must be >= 1");
  double acc = 0.0;
  for (int i = 0; i < n_probes; ++i) {
    const Vector eps = rng.rademacher_vector(x.size());
    acc += eps.dot(field.jvp(t, x, eps));
  }
  return acc / n_probes;
}

/// Hutchinson estimate of div( (du/dx) v ) via nested differentiation.
inline double hutchinson_second_order_divergence(const FlowField& field, double t, const Vector& x,
                                                 const Vector& v, Rng& rng, int n_probes) {
  if (n_probes < 1) throw DomainError("hutchinson_second_order_divergence: n_probes must be >= 1");
  double acc = 0.0;
  for (int i = 0; i < n_probes; ++i) {
    const Vector eps = rng.rademacher_vector(x.size());
    acc += eps.dot(field.jvp_directional(t, x, v, eps));
  }
  return acc / n_probes;
}

/// u(t, x) = A(t) x + c(t). Test workhorse: all derivative quantities are
/// closed-form and the second-order terms vanish identically.
class LinearField : public FlowField {
 public:
  using MatrixFn = std::function<Matrix(double)>;
  using VectorFn = std::function<Vector(double)>;

  LinearField(int dim, MatrixFn a, VectorFn c = nullptr)
      : dim_(dim), a_(std::move(a)), c_(std::move(c)) {}

  static LinearField constant(Matrix a, Vector c = Vector()) {
    const int d = static_cast<int>(a.rows());
    if (c.size() == 0) c = Vector::Zero(d);
    return LinearField(
        d, [a](double) { return a; }, [c](double) { return c; });
  }

  int dim() const override { return dim_; }

  Vector evaluate(double t, const Vector& x) const override {
    Vector out = a_(t) * x;
    if (c_) out += c_(t);
    return out;
  }

  Vector jvp(double t, const Vector&, const Vector& v) const override { return a_(t) * v; }

  double divergence(double t, const Vector&) const override { return a_(t).trace(); }

  bool has_second_order() const override { return true; }

  Vector jvp_directional(double, const Vector&, const Vector&, const Vector&) const override {
    return Vector::Zero(dim_);
  }

  double second_order_divergence(double, const Vector&, const Vector&) const override { return 0.0; }

 private:
  int dim_;
  MatrixFn a_;
  VectorFn c_;
};

/// Probability-flow ODE field of a diffusion over an analytic mixture target:
/// u_t(x) = f(t) x - (1/2) g^2(t) grad log p_t(x), by composition, with exact
/// jvp, divergence and second-order divergence.
class PfOdeField : public FlowField {
 public:
  PfOdeField(NoiseSchedule schedule, GaussianMixture target)
      : schedule_(std::move(schedule)), target_(std::move(target)) {}

  const NoiseSchedule& schedule() const { return schedule_; }
  const GaussianMixture& target() const { return target_; }

  int dim() const override { return target_.dim(); }

  Vector evaluate(double t, const Vector& x) const override {
    const auto [f, g2] = schedule_.drift_coeffs(t);
    const auto ps = target_.stats(schedule_, t, x);
    return f * x - 0.5 * g2 * (ps.dbar / ps.stilde2);
  }

  Vector jvp(double t, const Vector& x, const Vector& v) const override {
    const auto [f, g2] = schedule_.drift_coeffs(t);
    return f * v - 0.5 * g2 * target_.score_hvp(schedule_, t, x, v);
  }

  double divergence(double t, const Vector& x) const override {
    const auto [f, g2] = schedule_.drift_coeffs(t);
    const auto ps = target_.stats(schedule_, t, x);
    return f * dim() - 0.5 * g2 * GaussianMixture::laplacian_log_density(ps, dim());
  }

  bool has_second_order() const override { return true; }

  Vector jvp_directional(double t, const Vector& x, const Vector& v, const Vector& dir) const override {
    const auto [f, g2] = schedule_.drift_coeffs(t);
    return -0.5 * g2 * target_.hessian_directional(schedule_, t, x, v, dir);
  }

  double second_order_divergence(double t, const Vector& x, const Vector& v) const override {
    const auto [f, g2] = schedule_.drift_coeffs(t);
    return -0.5 * g2 * target_.grad_laplacian_log_density(schedule_, t, x).dot(v);
  }

  // Marginal-model passthroughs used by density tracking and guidance.
  double log_density(double t, const Vector& x) const { return target_.log_density(schedule_, t, x); }
  Vector score(double t, const Vector& x) const { return target_.score(schedule_, t, x); }
  double laplacian(double t, const Vector& x) const {
    return target_.laplacian_log_density(schedule_, t, x);
  }

 private:
  NoiseSchedule schedule_;
  GaussianMixture target_;
};

inline PfOdeField pf_ode_field(const NoiseSchedule& schedule, const GaussianMixture& target) {
  return PfOdeField(schedule, target);
}

}  // namespace dflow
