#include "dlow/domainness.hpp"

#include <cmath>
#include <numeric>

#include "dlow/errors.hpp"

namespace dlow {

DomainnessValue::DomainnessValue(double value) : value_(value) {
  if (!(value >= 0.0 && value <= 1.0)) {
    throw ValidationError(cat("domainness out of range [0,1]: ", value));
  }
}

DomainnessVector::DomainnessVector(std::vector<double> values) : values_(std::move(values)) {
  if (values_.empty()) throw ValidationError("domainness vector must have at least one component");
  for (std::size_t k = 0; k < values_.size(); ++k) {
    const double v = values_[k];
    if (!(v >= 0.0 && v <= 1.0)) {
      throw ValidationError(
          cat("domainness vector range violation: component ", k, " = ", v, " is outside [0,1]"));
    }
  }
  const double sum = std::accumulate(values_.begin(), values_.end(), 0.0);
  if (std::abs(sum - 1.0) > kSimplexTolerance) {
    throw ValidationError(
        cat("domainness vector sum violation: components sum to ", sum, " (must be 1 within ", kSimplexTolerance, ")"));
  }
  for (double& v : values_) v /= sum;
}

DomainnessVector DomainnessVector::vertex(std::size_t k, std::size_t dim) {
  if (k >= dim) throw ArgumentError(cat("vertex index ", k, " out of range for K = ", dim));
  std::vector<double> v(dim, 0.0);
  v[k] = 1.0;
  return DomainnessVector(std::move(v));
}

DomainnessVector validate_vector(std::span<const double> values) {
  return DomainnessVector(std::vector<double>(values.begin(), values.end()));
}

double alpha_at(std::int64_t t, const BetaSchedule& schedule) {
  const auto total = schedule.total_iterations;
  if (total < 1) throw ArgumentError("beta schedule needs total_iterations >= 1");
  if (t < 0 || t > total) {
    throw ArgumentError(cat("iteration ", t, " outside schedule range [0, ", total, "]"));
  }
  const double T = static_cast<double>(total);
  return std::exp((static_cast<double>(t) - 0.5 * T) / (0.25 * T));
}

double beta_pdf(double z, double alpha, double beta) {
  if (!(alpha > 0.0) || !(beta > 0.0)) {
    throw ArgumentError(cat("beta shape parameters must be positive, got (", alpha, ", ", beta, ")"));
  }
  if (!(z >= 0.0 && z <= 1.0)) throw ArgumentError(cat("beta_pdf argument ", z, " outside [0,1]"));
  const double log_b = std::lgamma(alpha) + std::lgamma(beta) - std::lgamma(alpha + beta);
  // pow handles the boundary cases (0^0 = 1, 0^positive = 0, 0^negative = inf).
  return std::pow(z, alpha - 1.0) * std::pow(1.0 - z, beta - 1.0) * std::exp(-log_b);
}

// Top 53 bits of one engine draw: exactly representable, never reaches 1.
double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

DomainnessValue sample_scalar(std::int64_t t, const BetaSchedule& schedule, Rng& rng) {
  const double alpha = alpha_at(t, schedule);
  return DomainnessValue(std::pow(uniform01(rng), 1.0 / alpha));
}

DomainnessVector sample_vector(std::size_t k, Rng& rng) {
  if (k < 2) throw ArgumentError(cat("simplex sampling needs K >= 2, got ", k));
  std::vector<double> spacings(k);
  for (double& s : spacings) s = -std::log1p(-uniform01(rng));
  const double sum = std::accumulate(spacings.begin(), spacings.end(), 0.0);
  for (double& s : spacings) s /= sum;
  return DomainnessVector(std::move(spacings));
}

DomainnessSampler::DomainnessSampler(BetaSchedule schedule, ZMode mode, double fixed_value)
    : schedule_(schedule), mode_(mode), fixed_value_(DomainnessValue(fixed_value).value()), rng_(schedule.rng_seed) {}

DomainnessValue DomainnessSampler::next(std::int64_t t) {
  switch (mode_) {
    case ZMode::kCurriculum:
      return sample_scalar(t, schedule_, rng_);
    case ZMode::kUniform:
      return DomainnessValue(uniform01(rng_));
    case ZMode::kFixed:
      return DomainnessValue(fixed_value_);
  }
  throw ArgumentError("unknown z mode");
}

DomainnessVector DomainnessSampler::next_vector(std::size_t k) { return sample_vector(k, rng_); }

}  // namespace dlow
