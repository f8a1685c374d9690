#pragma once

#include <cmath>
#include <numbers>
#include <stdexcept>

#include <boost/math/special_functions/erf.hpp>

#include "ebpmse/rng.hpp"

namespace ebpmse {

inline double normal_pdf(double z) noexcept {
  return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
}

inline double normal_cdf(double z) noexcept {
  return 0.5 * std::erfc(-z / std::numbers::sqrt2);
}

inline double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) {
    if (p == 0.0) return -std::numeric_limits<double>::infinity();
    if (p == 1.0) return std::numeric_limits<double>::infinity();
    throw std::domain_error("normal_quantile: p outside [0, 1]");
  }
  return -std::numbers::sqrt2 * boost::math::erfc_inv(2.0 * p);
}

// log density of N(mean, var) at x.
inline double normal_logpdf(double x, double mean, double var) noexcept {
  const double d = x - mean;
  return -0.5 * (std::log(2.0 * std::numbers::pi * var) + d * d / var);
}

// Draw from N(0, sd^2) truncated to [-bound*sd, bound*sd] by rejection from
// the untruncated normal. sd == 0 returns 0.
inline double truncated_normal(Rng& rng, double sd, double bound) {
  if (sd == 0.0) return 0.0;
  for (;;) {
    const double z = rng.normal();
    if (std::abs(z) <= bound) return sd * z;
  }
}

// Variance of a standard normal truncated symmetrically at +-c.
inline double truncated_normal_variance(double c) noexcept {
  return 1.0 - 2.0 * c * normal_pdf(c) / (2.0 * normal_cdf(c) - 1.0);
}

}  // namespace ebpmse
