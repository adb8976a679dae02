#include "distill/sharpening.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace distill {

void SharpeningConfig::validate() const {
  if (!(center_t > 0.0 && center_t < 1.0)) {
    throw ConfigError("sharpening center_t must lie in (0,1), got " + std::to_string(center_t));
  }
  if (!(max_strength_a0 >= 1.0) || !std::isfinite(max_strength_a0)) {
    throw ConfigError("sharpening max_strength_a0 must be >= 1, got " +
                      std::to_string(max_strength_a0));
  }
  if (!(clamp_epsilon > 0.0 && clamp_epsilon <= 0.01)) {
    throw ConfigError("sharpening clamp_epsilon must lie in (0, 0.01]");
  }
}

double logit(double p) {
  if (!(p > 0.0 && p < 1.0)) {
    throw DomainError("logit requires 0 < p < 1, got " + std::to_string(p));
  }
  return std::log(p) - std::log1p(-p);
}

double expit(double z) {
  if (z >= 0.0) {
    return 1.0 / (1.0 + std::exp(-z));
  }
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double adaptive_strength(double y_max, const SharpeningConfig& config) {
  const double y = std::clamp(y_max, 0.0, 1.0);
  return config.max_strength_a0 - (config.max_strength_a0 - 1.0) * y;
}

double sharpen_scalar(double p, double strength, const SharpeningConfig& config) {
  // a = 1 is the identity on the raw value; the clamp exists only to keep the
  // logit finite, so it is not applied here.
  if (strength == 1.0) {
    return p;
  }
  const double q = clamp_probability(p, config.clamp_epsilon);
  if (q == config.center_t) {
    return q;
  }
  return expit(strength * logit(q) + (1.0 - strength) * logit(config.center_t));
}

ProbabilityMap aals(const ProbabilityMap& pseudo_gt, const SharpeningConfig& config) {
  config.validate();
  const auto raw = pseudo_gt.values();
  const double y_max = *std::max_element(raw.begin(), raw.end());
  const double strength = adaptive_strength(y_max, config);

  ProbabilityMap out(pseudo_gt.height(), pseudo_gt.width());
  auto dst = out.values();
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const double p = raw[i];
    const double s = sharpen_scalar(p, strength, config);
    dst[i] = static_cast<float>(std::max(s, p));
  }
  return out;
}

}  // namespace distill
