#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace dflow {

using Scalar = double;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Raised when an argument lies outside an operation's documented domain.
class DomainError : public std::runtime_error {
 public:
  explicit DomainError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Raised when the score vanishes where a guidance correction needs it.
class VanishingScoreError : public std::runtime_error {
 public:
  VanishingScoreError(const std::string& msg, double t) : std::runtime_error(msg), t_(t) {}
  double time() const { return t_; }

 private:
  double t_;
};

/// Raised when an integrator encounters a non-finite state. Carries the time
/// of the last valid node.
class DivergenceFailure : public std::runtime_error {
 public:
  DivergenceFailure(const std::string& msg, double last_valid_t)
      : std::runtime_error(msg), last_valid_t_(last_valid_t) {}
  double last_valid_time() const { return last_valid_t_; }

 private:
  double last_valid_t_;
};

/// Raised when a field lacks a requested capability (e.g. nested
/// differentiation for second-order divergence).
class UnsupportedError : public std::runtime_error {
 public:
  explicit UnsupportedError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Raised on invalid experiment configuration.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

inline uint64_t splitmix64(uint64_t z) {
  z += 0x9E3779B97F4A7C15ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

/// Per-item seed derivation. Items seeded this way give results independent
/// of how work is split across workers.
inline uint64_t derive_seed(uint64_t base, uint64_t index) {
  return splitmix64(base ^ splitmix64(index + 1));
}

/// Deterministic random source: a Mersenne Twister engine with explicit
/// draw mappings, so a (seed, call sequence) pair fixes every output bit.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(splitmix64(seed ^ 0xD1B54A32D192ED03ull)) {}

  uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform in (0, 1].
  double uniform_open() { return 1.0 - uniform(); }

  /// Standard normal via Box-Muller (spare cached).
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = uniform_open();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  Vector normal_vector(Eigen::Index n) {
    Vector v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = normal();
    return v;
  }

  /// Entries drawn uniformly from {-1, +1}.
  Vector rademacher_vector(Eigen::Index n) {
    Vector v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = (next_u64() & 1ull) ? 1.0 : -1.0;
    return v;
  }

  /// Uniform integer in [0, n).
  uint64_t uniform_index(uint64_t n) { return next_u64() % n; }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace dflow
