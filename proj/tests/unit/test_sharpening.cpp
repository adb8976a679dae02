#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "distill/error.hpp"
#include "distill/rng.hpp"
#include "distill/sharpening.hpp"

using namespace distill;

// High-precision reference values computed independently (50 digits).
constexpr double kLogit04 = -0.40546510810816438198;
constexpr double kLogit09 = 2.1972245773362193828;
constexpr double kSharpen06 = 0.94470842332613390929;  // S(0.6, a=4, t=0.4)
constexpr double kSharpenEps = 3.3750135000337500675e-24;  // S(1e-6, a=4, t=0.4)

TEST_CASE("logit and expit") {
  CHECK(logit(0.5) == 0.0);
  CHECK(logit(0.4) == doctest::Approx(kLogit04).epsilon(1e-14));
  CHECK(logit(0.9) == doctest::Approx(kLogit09).epsilon(1e-14));
  CHECK_THROWS_AS(logit(0.0), DomainError);
  CHECK_THROWS_AS(logit(1.0), DomainError);
  CHECK_THROWS_AS(logit(-0.2), DomainError);
  CHECK(expit(0.0) == 0.5);
  CHECK(expit(-800.0) >= 0.0);
  CHECK(expit(800.0) == 1.0);
  CHECK(std::isfinite(expit(-800.0)));
}

TEST_CASE("adaptive strength endpoints") {
  SharpeningConfig c;
  CHECK(adaptive_strength(1.0, c) == 1.0);
  CHECK(adaptive_strength(0.0, c) == 4.0);
  CHECK(adaptive_strength(0.5, c) == 2.5);
}

TEST_CASE("sharpen_scalar examples") {
  SharpeningConfig c;
  CHECK(sharpen_scalar(0.4, 7.3, c) == doctest::Approx(0.4).epsilon(1e-15));
  CHECK(std::abs(sharpen_scalar(0.6, 4.0, c) - kSharpen06) < 1e-12);
  CHECK(sharpen_scalar(0.6, 1.0, c) == 0.6);
  CHECK(sharpen_scalar(0.0, 4.0, c) == doctest::Approx(kSharpenEps).epsilon(1e-9));
}

TEST_CASE("config validation") {
  SharpeningConfig c;
  c.center_t = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.max_strength_a0 = 0.5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.clamp_epsilon = 0.7;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("aals examples") {
  SharpeningConfig c;
  const ProbabilityMap zeros(3, 3, 0.0f);
  const ProbabilityMap sharpened_zeros = aals(zeros, c);
  for (float v : sharpened_zeros.values()) CHECK(v == static_cast<float>(kSharpenEps));

  ProbabilityMap confident(2, 2, std::vector<float>{0.3f, 1.0f, 0.0f, 0.8f});
  CHECK(aals(confident, c) == confident);

  // a = 4 - 3 * 0.6 = 2.2; S(0.6) from the independent oracle, other pixels
  // fall below their raw values and keep them.
  const ProbabilityMap m(2, 2, std::vector<float>{0.1f, 0.6f, 0.4f, 0.2f});
  const ProbabilityMap out = aals(m, c);
  CHECK(out(0, 0) == 0.1f);
  CHECK(out(0, 1) == doctest::Approx(0.79876306).epsilon(1e-6));
  CHECK(out(1, 0) == 0.4f);
  CHECK(out(1, 1) == 0.2f);
}

TEST_CASE("sharpening properties over 1000 random cases") {
  Rng rng = make_rng({2024, 1});
  const double tol = 1e-9;
  for (int i = 0; i < 1000; ++i) {
    SharpeningConfig c;
    c.center_t = uniform(rng, 0.05, 0.95);
    c.max_strength_a0 = uniform(rng, 1.0, 16.0);
    const double a = uniform(rng, 1.0, c.max_strength_a0);
    const double p = uniform01(rng);
    const double q = uniform01(rng);

    // fixed point and identity
    CHECK(std::abs(sharpen_scalar(c.center_t, a, c) - c.center_t) < tol);
    CHECK(sharpen_scalar(p, 1.0, c) == p);

    // monotone in p
    const double lo = std::min(p, q), hi = std::max(p, q);
    CHECK(sharpen_scalar(lo, a, c) <= sharpen_scalar(hi, a, c) + tol);

    // strength bounds
    const double y = uniform01(rng);
    const double s = adaptive_strength(y, c);
    CHECK(s >= 1.0 - tol);
    CHECK(s <= c.max_strength_a0 + tol);

    // map-level guard and argmax set; values on a 1/1024 lattice so that
    // ties are common and distinct values stay distinct after rounding.
    const int h = uniform_int(rng, 1, 6), w = uniform_int(rng, 1, 6);
    ProbabilityMap m(h, w, 0.0f);
    for (float& v : m.storage()) v = static_cast<float>(uniform_int(rng, 0, 1024) / 1024.0);
    const ProbabilityMap out = aals(m, c);
    const float raw_max = *std::max_element(m.values().begin(), m.values().end());
    const float out_max = *std::max_element(out.values().begin(), out.values().end());
    for (std::size_t k = 0; k < m.size(); ++k) {
      CHECK(out.storage()[k] >= m.storage()[k]);
      CHECK((m.storage()[k] == raw_max) == (out.storage()[k] == out_max));
    }

    // a0 = 1 leaves any map unchanged
    SharpeningConfig unit = c;
    unit.max_strength_a0 = 1.0;
    CHECK(aals(m, unit) == m);
  }
}
