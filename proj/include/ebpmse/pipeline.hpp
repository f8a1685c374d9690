#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ebpmse/area_params.hpp"
#include "ebpmse/dataset.hpp"
#include "ebpmse/ebp.hpp"
#include "ebpmse/informative.hpp"
#include "ebpmse/intervals.hpp"
#include "ebpmse/mse.hpp"
#include "ebpmse/ner_model.hpp"
#include "ebpmse/parallel.hpp"

namespace ebpmse {

enum class PipelineKind { kNoninformative, kInformative };

inline const char* to_string(PipelineKind k) {
  return k == PipelineKind::kInformative ? "informative" : "noninformative";
}

inline PipelineKind parse_pipeline(const std::string& s) {
  if (s == "noninformative") return PipelineKind::kNoninformative;
  if (s == "informative") return PipelineKind::kInformative;
  throw ValidationError("unknown pipeline '" + s + "' (expected noninformative or informative)");
}

enum class MseVariant { kNoBC, kAdd, kMult, kComp, kHM, kStandard };

inline constexpr std::array<MseVariant, 6> kMseVariants{MseVariant::kNoBC, MseVariant::kAdd,
                                                        MseVariant::kMult, MseVariant::kComp,
                                                        MseVariant::kHM,   MseVariant::kStandard};

inline const char* to_string(MseVariant v) {
  switch (v) {
    case MseVariant::kNoBC: return "noBC";
    case MseVariant::kAdd: return "Add";
    case MseVariant::kMult: return "Mult";
    case MseVariant::kComp: return "Comp";
    case MseVariant::kHM: return "HM";
    case MseVariant::kStandard: return "S";
  }
  return "";
}

inline MseVariant parse_variant(const std::string& s) {
  for (auto v : kMseVariants)
    if (s == to_string(v)) return v;
  throw ValidationError("unknown MSE variant '" + s + "'");
}

inline double variant_value(const MseReport& r, MseVariant v) {
  switch (v) {
    case MseVariant::kNoBC: return r.mse_noBC;
    case MseVariant::kAdd: return r.mse_add;
    case MseVariant::kMult: return r.mse_mult;
    case MseVariant::kComp: return r.mse_comp;
    case MseVariant::kHM: return r.mse_hm;
    case MseVariant::kStandard: return r.mse_standard;
  }
  return std::numeric_limits<double>::quiet_NaN();
}

struct PipelineOptions {
  PipelineKind kind = PipelineKind::kNoninformative;
  Eigen::Index L = 500;
  int B = 200;
  std::uint64_t seed = 0;
  std::vector<double> levels{0.90, 0.95, 0.99};
  bool intervals = true;
  bool standard = false;  // full-population bootstrap, noninformative pipeline only
  bool interaction = false;
  SirOptions sir;
  bool common_random_numbers = true;
  unsigned threads = 0;
};

struct PipelineFit {
  PipelineKind kind = PipelineKind::kNoninformative;
  FittedNer ner;
  std::optional<ModelParams> informative;
};

inline PipelineFit fit_pipeline(const SampleDataset& data, const PipelineOptions& opt) {
  PipelineFit out;
  out.kind = opt.kind;
  if (opt.kind == PipelineKind::kInformative) {
    auto f = fit_informative(data, opt.interaction);
    out.ner = std::move(f.ner);
    out.informative = std::move(f.params);
  } else {
    out.ner = fit_ml(data);
  }
  return out;
}

// Point predictions only: [area][k].
inline std::vector<std::vector<EbpPrediction>> predict_pipeline(const PipelineFit& fit,
                                                                const SampleDataset& data,
                                                                std::span<const AreaParameter> pars,
                                                                const PipelineOptions& opt) {
  if (opt.L < 2) throw ValidationError("predict: L must be at least 2");
  std::vector<std::vector<EbpPrediction>> out(data.size());
  parallel_for(data.size(), opt.threads, [&](std::size_t i) {
    const auto& a = data.area(i);
    const auto key = ebp_area_key(opt.seed, a.id);
    const Eigen::MatrixXd d = fit.informative
                                  ? informative_draws(*fit.informative, data, i, pars, opt.L, key, opt.sir)
                                  : ebp_draws(fit.ner.params, a, pars, opt.L, key);
    for (std::size_t k = 0; k < pars.size(); ++k)
      out[i].push_back(summarize_draws(a.id, pars[k].name, d.col(static_cast<Eigen::Index>(k))));
  });
  return out;
}

// Normal interval that never throws: an infinite MSE gives the whole line and
// a negative or missing one gives an empty (NaN) interval. Both are flagged.
inline IntervalReport normal_ci_or_flag(double theta_hat, double mse, double alpha) {
  if (mse >= 0.0 && std::isfinite(mse)) return normal_ci(theta_hat, mse, alpha);
  IntervalReport r;
  r.kind = IntervalKind::kNormal;
  r.nominal = 1.0 - alpha;
  r.flag = true;
  if (std::isinf(mse) && mse > 0.0) {
    r.lower = -kInf;
    r.upper = kInf;
  } else {
    r.lower = r.upper = std::numeric_limits<double>::quiet_NaN();
  }
  return r;
}

inline std::vector<IntervalReport> interval_set(const MseReport& mse,
                                                const Eigen::VectorXd& base,
                                                std::span<const Eigen::VectorXd> replicate_draws,
                                                std::span<const double> levels) {
  std::vector<IntervalReport> out;
  const std::span<const double> d(base.data(), static_cast<std::size_t>(base.size()));
  for (double level : levels) {
    const double alpha = 1.0 - level;
    auto naive = naive_ci(d, alpha);
    auto cal = calibrated_ci(d, replicate_draws, alpha);
    naive.nominal = cal.nominal = level;
    out.push_back(naive);
    out.push_back(cal);
    for (auto v : kMseVariants) {
      const double m = variant_value(mse, v);
      if (v == MseVariant::kStandard && std::isnan(m)) continue;
      auto n = normal_ci_or_flag(mse.theta_hat, m, alpha);
      n.variant = to_string(v);
      out.push_back(n);
    }
  }
  for (auto& r : out) {
    r.area_id = mse.area_id;
    r.parameter = mse.parameter;
  }
  return out;
}

struct AreaOutput {
  MseReport mse;
  std::vector<IntervalReport> intervals;
};

struct PipelineResult {
  PipelineFit fit;
  std::optional<JackknifeCov> cov;
  std::vector<std::string> parameters;
  std::vector<std::vector<AreaOutput>> areas;  // [area][k]
  int dropped = 0;                              // failed bootstrap refits
  long fallbacks = 0;                           // sampler fallbacks
};

inline void check_levels(std::span<const double> levels, Eigen::Index L) {
  for (double level : levels) {
    if (!(level > 0.0 && level < 1.0)) throw ValidationError("nominal level must lie in (0, 1)");
    if (static_cast<double>(L) < 2.0 / (1.0 - level))
      throw ValidationError("L = " + std::to_string(L) + " is too small for nominal level " +
                            std::to_string(level) + " (need L >= 2 / (1 - level))");
  }
}

// Prediction, MSE and intervals for every area and functional.
inline PipelineResult mse_pipeline(const PipelineFit& fit, const SampleDataset& data,
                                   std::span<const AreaParameter> pars, const PipelineOptions& opt) {
  check_bootstrap_sizes(opt.L, opt.B);
  if (opt.intervals) check_levels(opt.levels, opt.L);
  PipelineResult res;
  res.fit = fit;
  for (const auto& p : pars) res.parameters.push_back(p.name);
  res.areas.assign(data.size(), std::vector<AreaOutput>(pars.size()));

  if (fit.informative) {
    InformativeFit ifit{fit.ner, *fit.informative};
    res.cov = jackknife_cov(data, ifit, opt.threads);
    const auto psi_b = param_bootstrap_draws(*fit.informative, *res.cov, opt.B, opt.seed);
    InformativeOptions io;
    io.L = opt.L;
    io.B = opt.B;
    io.seed = opt.seed;
    io.sir = opt.sir;
    io.common_random_numbers = opt.common_random_numbers;
    io.keep_draws = opt.intervals;
    std::vector<long> fb(data.size(), 0);
    parallel_for(data.size(), opt.threads, [&](std::size_t i) {
      auto ab = informative_bootstrap_area(*fit.informative, psi_b, data, i, pars, io);
      fb[i] = ab.fallbacks;
      for (std::size_t k = 0; k < pars.size(); ++k) {
        auto& o = res.areas[i][k];
        o.mse = mse_report(ab, k, pars[k].name);
        if (!opt.intervals) continue;
        std::vector<Eigen::VectorXd> rd;
        for (auto& r : ab.reps[k]) rd.push_back(std::move(r.draws));
        o.intervals = interval_set(o.mse, ab.base[k], rd, opt.levels);
      }
    });
    for (long f : fb) res.fallbacks += f;
    return res;
  }

  const auto fits = bootstrap_refits(fit.ner, data, opt.B, opt.seed, opt.threads);
  res.dropped = fits.dropped;
  std::vector<std::vector<double>> standard;
  if (opt.standard) standard = standard_mr_mse(fit.ner, data, pars, opt.L, opt.B, opt.seed, opt.threads);
  BootstrapOptions bo;
  bo.L = opt.L;
  bo.B = opt.B;
  bo.seed = opt.seed;
  bo.common_random_numbers = opt.common_random_numbers;
  bo.keep_draws = opt.intervals;
  parallel_for(data.size(), opt.threads, [&](std::size_t i) {
    const auto& a = data.area(i);
    const Eigen::MatrixXd base = ebp_draws(fit.ner.params, a, pars, opt.L, ebp_area_key(opt.seed, a.id));
    auto reps = bootstrap_area(fits, a, pars, bo);
    for (std::size_t k = 0; k < pars.size(); ++k) {
      auto& o = res.areas[i][k];
      const EbpDraws d{a.id, pars[k].name, base.col(static_cast<Eigen::Index>(k)), fit.ner.params, opt.seed};
      o.mse = mse_report(d, reps[k], opt.standard ? std::optional<double>(standard[i][k]) : std::nullopt);
      if (!opt.intervals) continue;
      std::vector<Eigen::VectorXd> rd;
      for (auto& r : reps[k]) rd.push_back(std::move(r.draws));
      o.intervals = interval_set(o.mse, d.draws, rd, opt.levels);
    }
  });
  return res;
}

inline PipelineResult run_pipeline(const SampleDataset& data, std::span<const AreaParameter> pars,
                                   const PipelineOptions& opt) {
  return mse_pipeline(fit_pipeline(data, opt), data, pars, opt);
}

}  // namespace ebpmse
