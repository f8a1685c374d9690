#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ebpmse/area_params.hpp"
#include "ebpmse/dataset.hpp"
#include "ebpmse/distributions.hpp"
#include "ebpmse/error.hpp"

namespace ebpmse {

enum class IntervalKind { kNaive, kCalibrated, kNormal };

inline const char* to_string(IntervalKind k) {
  switch (k) {
    case IntervalKind::kNaive: return "naive";
    case IntervalKind::kCalibrated: return "calibrated";
    case IntervalKind::kNormal: return "normal";
  }
  return "";
}

struct IntervalReport {
  AreaId area_id = 0;
  std::string parameter;
  IntervalKind kind = IntervalKind::kNaive;
  std::string variant;  // MSE variant for normal intervals
  double nominal = 0.95;
  double lower = 0.0;
  double upper = 0.0;
  double alpha_prime = std::numeric_limits<double>::quiet_NaN();
  bool flag = false;  // calibration could not reach the nominal level

  bool covers(double v) const noexcept { return lower <= v && v <= upper; }
};

inline std::vector<double> sorted_copy(std::span<const double> d) {
  std::vector<double> s(d.begin(), d.end());
  std::sort(s.begin(), s.end());
  return s;
}

inline std::pair<double, double> quantile_interval(std::span<const double> sorted, double alpha) {
  return {quantile_sorted(sorted, alpha / 2.0), quantile_sorted(sorted, 1.0 - alpha / 2.0)};
}

inline IntervalReport naive_ci(std::span<const double> draws, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw ValidationError("naive_ci: alpha must lie in (0, 1)");
  if (static_cast<double>(draws.size()) < 2.0 / alpha)
    throw ValidationError("naive_ci: need at least 2/alpha draws");
  const auto s = sorted_copy(draws);
  IntervalReport r;
  r.kind = IntervalKind::kNaive;
  r.nominal = 1.0 - alpha;
  std::tie(r.lower, r.upper) = quantile_interval(s, alpha);
  return r;
}

// Bootstrap-averaged coverage of the original draws by the (alpha'/2,
// 1 - alpha'/2) quantile intervals of each replicate's draws. All inputs
// sorted ascending.
inline double calibration_coverage(std::span<const double> original,
                                   const std::vector<std::vector<double>>& replicates,
                                   double alpha_prime) {
  double hits = 0.0;
  for (const auto& rep : replicates) {
    const auto [lo, hi] = quantile_interval(rep, alpha_prime);
    const auto first = std::lower_bound(original.begin(), original.end(), lo);
    const auto last = std::upper_bound(original.begin(), original.end(), hi);
    hits += static_cast<double>(last - first);
  }
  return hits / (static_cast<double>(replicates.size()) * static_cast<double>(original.size()));
}

// Largest alpha' on a 1e-4 grid whose bootstrap coverage is at least
// 1 - alpha; the interval itself uses quantiles of the original draws.
inline IntervalReport calibrated_ci(std::span<const double> draws,
                                    const std::vector<std::vector<double>>& sorted_replicates,
                                    double alpha, double grid = 1e-4) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw ValidationError("calibrated_ci: alpha must lie in (0, 1)");
  if (sorted_replicates.empty()) throw ValidationError("calibrated_ci: no bootstrap replicates");
  const auto s = sorted_copy(draws);
  const auto steps = static_cast<long>(std::llround(1.0 / grid));
  const double target = 1.0 - alpha;
  auto cov = [&](long k) { return calibration_coverage(s, sorted_replicates, k * grid); };
  IntervalReport r;
  r.kind = IntervalKind::kCalibrated;
  r.nominal = target;
  long lo = 1, hi = steps - 1;
  if (cov(lo) < target) {
    r.flag = true;
    r.alpha_prime = grid;
    r.lower = s.front();
    r.upper = s.back();
    return r;
  }
  // Invariant: cov(lo) >= target; find the last such grid point.
  while (lo < hi) {
    const long mid = lo + (hi - lo + 1) / 2;
    if (cov(mid) >= target)
      lo = mid;
    else
      hi = mid - 1;
  }
  r.alpha_prime = lo * grid;
  std::tie(r.lower, r.upper) = quantile_interval(s, r.alpha_prime);
  return r;
}

inline IntervalReport calibrated_ci(std::span<const double> draws,
                                    std::span<const Eigen::VectorXd> replicate_draws, double alpha) {
  std::vector<std::vector<double>> reps;
  reps.reserve(replicate_draws.size());
  for (const auto& d : replicate_draws)
    reps.push_back(sorted_copy(std::span<const double>(d.data(), static_cast<std::size_t>(d.size()))));
  return calibrated_ci(draws, reps, alpha);
}

inline IntervalReport normal_ci(double theta_hat, double mse, double alpha) {
  if (std::isinf(mse)) throw UndefinedValueError("normal_ci: infinite MSE estimate");
  if (!(mse >= 0.0)) throw ValidationError("normal_ci: MSE estimate must be finite and nonnegative");
  IntervalReport r;
  r.kind = IntervalKind::kNormal;
  r.nominal = 1.0 - alpha;
  const double half = normal_quantile(1.0 - alpha / 2.0) * std::sqrt(mse);
  r.lower = theta_hat - half;
  r.upper = theta_hat + half;
  return r;
}

}  // namespace ebpmse
