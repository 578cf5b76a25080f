#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace dlow {

using Rng = std::mt19937_64;

/// Scalar domainness z in [0, 1]: 0 is the source domain, 1 the target.
class DomainnessValue {
 public:
  explicit DomainnessValue(double value);

  double value() const { return value_; }

  friend bool operator==(DomainnessValue, DomainnessValue) = default;

 private:
  double value_;
};

/// Point on the (K-1)-simplex; component k weights target domain k.
class DomainnessVector {
 public:
  /// Tolerance on |sum - 1| before a vector is rejected.
  static constexpr double kSimplexTolerance = 1e-6;

  /// Validates and renormalizes. Throws ValidationError naming the failed
  /// constraint ("range" or "sum").
  explicit DomainnessVector(std::vector<double> values);

  /// One-hot vertex e_k of the K-simplex.
  static DomainnessVector vertex(std::size_t k, std::size_t dim);

  std::size_t size() const { return values_.size(); }
  double operator[](std::size_t k) const { return values_[k]; }
  std::span<const double> values() const { return values_; }

 private:
  std::vector<double> values_;
};

DomainnessVector validate_vector(std::span<const double> values);

/// Curriculum for z: Beta(alpha(t), 1) with alpha growing exponentially
/// from e^-2 at t = 0 to e^2 at t = T.
struct BetaSchedule {
  std::int64_t total_iterations = 1;
  std::uint64_t rng_seed = 0;
  static constexpr double beta = 1.0;
};

double alpha_at(std::int64_t t, const BetaSchedule& schedule);

/// Beta(alpha, beta) density at z.
double beta_pdf(double z, double alpha, double beta);

/// Draw from Beta(alpha_at(t), 1) by inverse CDF: z = u^(1/alpha).
DomainnessValue sample_scalar(std::int64_t t, const BetaSchedule& schedule, Rng& rng);

/// Uniform point on the (K-1)-simplex from normalized exponential spacings.
DomainnessVector sample_vector(std::size_t k, Rng& rng);

/// How the trainer draws per-image z.
enum class ZMode {
  kCurriculum,  // beta schedule
  kUniform,     // U(0, 1), ablation fallback
  kFixed,       // constant value
};

/// Owns its randomness source; one per training run.
class DomainnessSampler {
 public:
  DomainnessSampler(BetaSchedule schedule, ZMode mode, double fixed_value = 1.0);

  DomainnessValue next(std::int64_t t);
  DomainnessVector next_vector(std::size_t k);

  Rng& rng() { return rng_; }
  const Rng& rng() const { return rng_; }
  const BetaSchedule& schedule() const { return schedule_; }
  ZMode mode() const { return mode_; }

 private:
  BetaSchedule schedule_;
  ZMode mode_;
  double fixed_value_;
  Rng rng_;
};

/// Uniform double in [0, 1). Shared by every sampler so draw sequences
/// depend only on the engine state.
double uniform01(Rng& rng);

}  // namespace dlow
