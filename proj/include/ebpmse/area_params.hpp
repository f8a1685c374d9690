#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "ebpmse/error.hpp"

namespace ebpmse {

enum class ParamKind { kMean, kExpMean, kQuantile, kPovertyGap, kGini, kCustom };

// An area-level functional h(y_1, ..., y_N) of the full population vector.
struct AreaParameter {
  ParamKind kind = ParamKind::kMean;
  double constant = 0.0;  // p for quantiles, z for the poverty gap
  std::string name;
  std::function<double(std::span<const double>)> custom;

  static AreaParameter mean() { return {ParamKind::kMean, 0.0, "mean", {}}; }
  static AreaParameter exp_mean() { return {ParamKind::kExpMean, 0.0, "exp_mean", {}}; }
  static AreaParameter quantile(double p) {
    if (!(p > 0.0 && p < 1.0)) throw ValidationError("quantile: p must lie in (0, 1)");
    return {ParamKind::kQuantile, p, "q" + trim_number(100.0 * p), {}};
  }
  static AreaParameter poverty_gap(double z = 155.0) {
    if (!(z > 0.0)) throw ValidationError("poverty_gap: z must be positive");
    return {ParamKind::kPovertyGap, z, z == 155.0 ? "pg" : "pg" + trim_number(z), {}};
  }
  static AreaParameter gini() { return {ParamKind::kGini, 0.0, "gini", {}}; }
  static AreaParameter custom_fn(std::string name, std::function<double(std::span<const double>)> f) {
    return {ParamKind::kCustom, 0.0, std::move(name), std::move(f)};
  }

  bool needs_sort() const noexcept {
    return kind == ParamKind::kQuantile || kind == ParamKind::kGini;
  }

 private:
  static std::string trim_number(double v) {
    std::string s = std::to_string(v);
    s.erase(s.find_last_not_of('0') + 1);
    if (!s.empty() && s.back() == '.') s.pop_back();
    return s;
  }
};

// The six functionals used throughout the simulations.
inline std::vector<AreaParameter> standard_parameters() {
  return {AreaParameter::mean(),        AreaParameter::exp_mean(), AreaParameter::quantile(0.25),
          AreaParameter::quantile(0.75), AreaParameter::poverty_gap(), AreaParameter::gini()};
}

// Quantile of sorted data with j = floor(Np + 1 - p), w = Np + 1 - p - j
// (R type 7). Accepts p in [0, 1].
inline double quantile_sorted(std::span<const double> sorted, double p) {
  const auto n = sorted.size();
  if (n == 0) throw ValidationError("quantile of empty vector");
  const double h = static_cast<double>(n) * p + 1.0 - p;
  auto j = static_cast<std::size_t>(std::floor(h));
  j = std::clamp<std::size_t>(j, 1, n);
  const double w = h - static_cast<double>(j);
  if (j >= n || w == 0.0) return sorted[j - 1];
  return (1.0 - w) * sorted[j - 1] + w * sorted[j];
}

namespace detail {

inline double mean_of(std::span<const double> y) {
  double s = 0.0;
  for (double v : y) s += v;
  return s / static_cast<double>(y.size());
}

inline double exp_mean_of(std::span<const double> y) {
  double s = 0.0;
  for (double v : y) s += std::exp(v);
  return s / static_cast<double>(y.size());
}

inline double poverty_gap_of(std::span<const double> y, double z) {
  double s = 0.0;
  for (double v : y) {
    const double e = std::exp(v);
    if (e < z) s += (z - e) / z;
  }
  return s / static_cast<double>(y.size());
}

// Gini of exp(y) given y sorted ascending (exp preserves the order).
inline double gini_sorted(std::span<const double> sorted) {
  const auto n = sorted.size();
  double total = 0.0, weighted = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const double e = std::exp(sorted[k]);
    total += e;
    weighted += (2.0 * static_cast<double>(k + 1) - static_cast<double>(n) - 1.0) * e;
  }
  if (!(total > 0.0)) throw UndefinedValueError("gini: all exp(y) are zero");
  return weighted / (static_cast<double>(n) * total);
}

inline double eval_prepared(const AreaParameter& par, std::span<const double> y,
                            std::span<const double> sorted) {
  switch (par.kind) {
    case ParamKind::kMean: return mean_of(y);
    case ParamKind::kExpMean: return exp_mean_of(y);
    case ParamKind::kQuantile: return quantile_sorted(sorted, par.constant);
    case ParamKind::kPovertyGap: return poverty_gap_of(y, par.constant);
    case ParamKind::kGini: return gini_sorted(sorted);
    case ParamKind::kCustom: return par.custom(y);
  }
  return 0.0;
}

}  // namespace detail

inline double eval(const AreaParameter& par, std::span<const double> y) {
  if (y.empty()) throw ValidationError("eval: empty area vector");
  std::vector<double> sorted;
  if (par.needs_sort()) {
    sorted.assign(y.begin(), y.end());
    std::sort(sorted.begin(), sorted.end());
  }
  return detail::eval_prepared(par, y, sorted);
}

// Evaluates several functionals on one vector with at most one sort.
// `scratch` is reused between calls to avoid reallocation.
inline void eval_many(std::span<const AreaParameter> pars, std::span<const double> y,
                      std::vector<double>& scratch, std::span<double> out) {
  if (y.empty()) throw ValidationError("eval: empty area vector");
  const bool sort = std::any_of(pars.begin(), pars.end(), [](const auto& p) { return p.needs_sort(); });
  if (sort) {
    scratch.assign(y.begin(), y.end());
    std::sort(scratch.begin(), scratch.end());
  }
  for (std::size_t k = 0; k < pars.size(); ++k)
    out[k] = detail::eval_prepared(pars[k], y, sort ? std::span<const double>(scratch) : y);
}

// Parses "mean", "exp_mean", "quantile:0.25" (or "q25"), "pg" / "pg:155",
// "gini", or a name registered with add().
class ParameterRegistry {
 public:
  void add(const std::string& name, std::function<double(std::span<const double>)> f) {
    custom_[name] = std::move(f);
  }

  AreaParameter parse(const std::string& spec) const {
    const auto colon = spec.find(':');
    const std::string head = spec.substr(0, colon);
    const bool has_arg = colon != std::string::npos;
    auto arg = [&]() -> double {
      try {
        std::size_t used = 0;
        const double v = std::stod(spec.substr(colon + 1), &used);
        if (used != spec.size() - colon - 1) throw std::invalid_argument("trailing");
        return v;
      } catch (const std::exception&) {
        throw ValidationError("bad parameter constant in '" + spec + "'");
      }
    };
    if (head == "mean" && !has_arg) return AreaParameter::mean();
    if (head == "exp_mean" && !has_arg) return AreaParameter::exp_mean();
    if (head == "gini" && !has_arg) return AreaParameter::gini();
    if (head == "pg") return has_arg ? AreaParameter::poverty_gap(arg()) : AreaParameter::poverty_gap();
    if (head == "quantile" && has_arg) return AreaParameter::quantile(arg());
    if (head.size() > 1 && head[0] == 'q' && !has_arg) {
      try {
        std::size_t used = 0;
        const double pct = std::stod(head.substr(1), &used);
        if (used == head.size() - 1) return AreaParameter::quantile(pct / 100.0);
      } catch (const std::invalid_argument&) {
      }
    }
    if (auto it = custom_.find(spec); it != custom_.end())
      return AreaParameter::custom_fn(spec, it->second);
    throw ValidationError("unknown area parameter '" + spec + "'");
  }

 private:
  std::map<std::string, std::function<double(std::span<const double>)>> custom_;
};

}  // namespace ebpmse
