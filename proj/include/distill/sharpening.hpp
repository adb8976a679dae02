#pragma once

#include "distill/grid.hpp"

namespace distill {

/// Default probability clamp applied before any logit.
inline constexpr double kClampEpsilon = 1e-6;

/// Center and maximum strength of the asymmetric label sharpening operator.
struct SharpeningConfig {
  double center_t = 0.4;
  double max_strength_a0 = 4.0;
  double clamp_epsilon = kClampEpsilon;

  /// Throws ConfigError when an invariant does not hold.
  void validate() const;
};

/// ln(p / (1 - p)). Throws DomainError unless 0 < p < 1.
double logit(double p);

/// Logistic sigmoid, evaluated without overflow for large |z|.
double expit(double z);

inline double clamp_probability(double p, double eps = kClampEpsilon) {
  return p < eps ? eps : (p > 1.0 - eps ? 1.0 - eps : p);
}

/// Map-level strength a = a0 - (a0 - 1) * y_max. Result lies in [1, a0].
double adaptive_strength(double y_max, const SharpeningConfig& config);

/// expit(a * logit(p) + (1 - a) * logit(t)) with p clamped to [eps, 1 - eps].
/// The center t is a fixed point for every strength.
double sharpen_scalar(double p, double strength, const SharpeningConfig& config);

/// Sharpens a teacher probability map: the strength is chosen from the raw
/// map maximum, then each pixel becomes max(sharpen(p), p). Storage is float,
/// arithmetic is double.
ProbabilityMap aals(const ProbabilityMap& pseudo_gt, const SharpeningConfig& config);

}  // namespace distill
