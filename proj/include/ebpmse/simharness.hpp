#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ebpmse/area_params.hpp"
#include "ebpmse/error.hpp"
#include "ebpmse/parallel.hpp"
#include "ebpmse/pipeline.hpp"
#include "ebpmse/population.hpp"
#include "ebpmse/rng.hpp"
#include "ebpmse/sampling.hpp"

namespace ebpmse {

enum class DesignKind { kNoninformative, kInformative };

inline const char* to_string(DesignKind d) {
  return d == DesignKind::kInformative ? "informative" : "noninformative";
}

inline DesignKind parse_design(const std::string& s) {
  if (s == "noninformative") return DesignKind::kNoninformative;
  if (s == "informative") return DesignKind::kInformative;
  throw ValidationError("unknown design '" + s + "' (expected noninformative or informative)");
}

struct SimConfig {
  DesignKind design = DesignKind::kNoninformative;
  Eigen::Index D = 0;  // 0: 100 noninformative, 150 informative
  double r_sigma = 1.0;
  double sigma_e = 0.3;
  Eigen::VectorXd beta = Eigen::Vector2d(5.0, 0.1);
  Eigen::Index N_i = 200;
  double truncation = 2.5;
  std::vector<Eigen::Index> strata_sizes{5, 10, 15};  // noninformative n_i, cycled over areas
  InformativeDesign informative;
  int M = 500;
  Eigen::Index L = 500;
  int B = 200;
  SirOptions sir{SirMethod::kExact, 100, 10000};
  std::uint64_t seed = 1;
  std::vector<AreaParameter> parameters = standard_parameters();
  std::vector<double> levels{0.90, 0.95, 0.99};
  bool standard = false;
  std::optional<PipelineKind> pipeline;  // default follows the design
  MseVariant t_variant = MseVariant::kHM;
  unsigned threads = 0;

  Eigen::Index areas() const {
    if (D > 0) return D;
    return design == DesignKind::kInformative ? 150 : 100;
  }
  double sigma_u() const { return r_sigma * sigma_e; }
  PipelineKind pipeline_kind() const {
    if (pipeline) return *pipeline;
    return design == DesignKind::kInformative ? PipelineKind::kInformative : PipelineKind::kNoninformative;
  }
  std::string scenario() const {
    std::string rs = std::to_string(r_sigma);
    rs.erase(rs.find_last_not_of('0') + 1);
    if (rs.back() == '.') rs.pop_back();
    if (design == DesignKind::kInformative) return "informative{" + rs + "}";
    return "noninformative{" + std::to_string(areas()) + "," + rs + "}";
  }

  void validate() const {
    if (M < 1) throw ValidationError("simulate: M must be at least 1");
    if (L < 2 || B < 2) throw ValidationError("simulate: L and B must be at least 2");
    if (!(r_sigma > 0.0) || !(sigma_e > 0.0)) throw ValidationError("simulate: r_sigma and sigma_e must be positive");
    if (beta.size() != 2) throw ValidationError("simulate: beta must have two entries");
    if (parameters.empty()) throw ValidationError("simulate: no area parameters");
    check_levels(levels, L);
    const auto D = areas();
    const auto& sizes = design == DesignKind::kInformative ? informative.unit_sizes : strata_sizes;
    if (sizes.empty()) throw ValidationError("simulate: no strata sample sizes");
    for (auto n : sizes)
      if (n < 1 || n > N_i) throw ValidationError("simulate: stratum sample size outside [1, N_i]");
    if (design == DesignKind::kInformative) {
      const auto H = informative.areas_selected.size();
      if (H != informative.unit_sizes.size()) throw ValidationError("simulate: strata settings differ in length");
      std::vector<Eigen::Index> members(H, 0);
      for (Eigen::Index i = 0; i < D; ++i) ++members[stratum_of(static_cast<std::size_t>(i), static_cast<std::size_t>(D), H)];
      for (std::size_t h = 0; h < H; ++h)
        if (informative.areas_selected[h] < 1 || informative.areas_selected[h] > members[h])
          throw ValidationError("simulate: stratum " + std::to_string(h + 1) + " has too few areas");
    } else if (D < 3) {
      throw ValidationError("simulate: need at least 3 areas");
    }
  }
};

// Labels of the intervals recorded per replicate, in a fixed order.
inline std::vector<std::string> interval_labels(bool standard) {
  std::vector<std::string> out{"Naive", "Cal"};
  for (auto v : kMseVariants)
    if (v != MseVariant::kStandard || standard) out.push_back(std::string("Norm_") + to_string(v));
  return out;
}

inline std::string interval_label(const IntervalReport& r) {
  switch (r.kind) {
    case IntervalKind::kNaive: return "Naive";
    case IntervalKind::kCalibrated: return "Cal";
    case IntervalKind::kNormal: return "Norm_" + r.variant;
  }
  return "";
}

// Everything one Monte Carlo replicate contributes to the tables.
struct ReplicateRecord {
  int m = 0;
  std::vector<char> sampled;                       // A_im per area
  Eigen::MatrixXd truth;                           // D x K
  Eigen::MatrixXd predictor;                       // D x K
  std::vector<Eigen::MatrixXd> mse;                // per variant, D x K
  std::vector<std::vector<std::vector<char>>> hit; // [interval][level] flattened D x K (i * K + k)
};

struct RbRow {
  std::string domain;
  std::string parameter;
  std::string method;
  double rb = 0.0;
};

struct EcpRow {
  std::string domain;
  std::string parameter;
  std::string interval;
  double level = 0.0;
  double ecp = 0.0;        // pooled over areas and replicates
  double ecp_area_mean = 0.0;
};

struct AreaEcp {
  std::string domain;
  std::string parameter;
  std::string interval;
  double level = 0.0;
  AreaId area_id = 0;
  double ecp = 0.0;
  int count = 0;
};

struct TStat {
  AreaId area_id = 0;
  std::string parameter;
  int replicate = 0;
  bool sampled = true;
  double t = 0.0;
};

struct SimResult {
  std::string scenario;
  int requested = 0;
  int completed = 0;
  int dropped = 0;
  std::vector<std::string> failures;  // "replicate m: message"
  long fallbacks = 0;
  std::vector<std::string> intervals;
  std::vector<ReplicateRecord> replicates;
  std::vector<RbRow> rb;
  std::vector<EcpRow> ecp;
  std::vector<AreaEcp> area_ecp;
  std::vector<TStat> t;
};

enum class RbMode { kAll, kSampled, kNonsampled };

inline const char* to_string(RbMode m) {
  switch (m) {
    case RbMode::kAll: return "all";
    case RbMode::kSampled: return "sampled";
    case RbMode::kNonsampled: return "nonsampled";
  }
  return "";
}

namespace detail {

inline bool in_domain(RbMode mode, double a) {
  return mode == RbMode::kAll || (mode == RbMode::kSampled ? a != 0.0 : a == 0.0);
}

}  // namespace detail

// Relative bias (percent) of each MSE estimator. truth, pred and ledger are
// M x D; est holds one M x D matrix per method. Per area the estimator and
// the empirical MSE are averaged over the replicates in the domain, then both
// are averaged over areas with at least one such replicate. With every
// replicate in the domain this is the pooled (DM)^-1 double sum. A +inf
// estimate makes its RB +inf; NaN estimates give NaN.
inline std::vector<double> aggregate_rb(const Eigen::MatrixXd& truth, const Eigen::MatrixXd& pred,
                                        const std::vector<Eigen::MatrixXd>& est,
                                        const Eigen::MatrixXd& ledger, RbMode mode) {
  const auto M = truth.rows(), D = truth.cols();
  if (pred.rows() != M || pred.cols() != D || ledger.rows() != M || ledger.cols() != D)
    throw ValidationError("aggregate_rb: dimension mismatch");
  for (const auto& e : est)
    if (e.rows() != M || e.cols() != D) throw ValidationError("aggregate_rb: dimension mismatch");
  double mse_dm = 0.0;
  std::vector<double> est_dm(est.size(), 0.0);
  int areas = 0;
  for (Eigen::Index i = 0; i < D; ++i) {
    int c = 0;
    double mse_i = 0.0;
    std::vector<double> e_i(est.size(), 0.0);
    for (Eigen::Index m = 0; m < M; ++m) {
      if (!detail::in_domain(mode, ledger(m, i))) continue;
      ++c;
      const double d = pred(m, i) - truth(m, i);
      mse_i += d * d;
      for (std::size_t t = 0; t < est.size(); ++t) e_i[t] += est[t](m, i);
    }
    if (c == 0) continue;
    ++areas;
    mse_dm += mse_i / c;
    for (std::size_t t = 0; t < est.size(); ++t) est_dm[t] += e_i[t] / c;
  }
  if (areas == 0) throw ValidationError("aggregate_rb: no replicate falls in the " + std::string(to_string(mode)) + " domain");
  mse_dm /= areas;
  if (!(mse_dm > 0.0)) throw NumericalError("aggregate_rb: empirical MSE is zero");
  std::vector<double> out(est.size());
  for (std::size_t t = 0; t < est.size(); ++t) {
    const double mean = est_dm[t] / areas;
    out[t] = std::isinf(mean) && mean > 0.0 ? kInf : 100.0 * (mean - mse_dm) / mse_dm;
  }
  return out;
}

// Sample for one replicate of the design.
inline SampleDataset simulate_sample(const SimConfig& cfg, const Population& pop, const StreamKey& key) {
  if (cfg.design == DesignKind::kInformative)
    return informative_sample(pop, cfg.beta, cfg.sigma_u(), cfg.sigma_e, cfg.informative, key);
  std::vector<std::vector<Eigen::Index>> sel(pop.x.size());
  for (std::size_t i = 0; i < sel.size(); ++i) {
    Rng rng(key.child(i));
    const auto n = cfg.strata_sizes[i % cfg.strata_sizes.size()];
    sel[i] = srs_indices(pop.x[i].rows(), n, rng);
  }
  return make_sample(pop, sel);
}

inline PopulationConfig population_config(const SimConfig& cfg) {
  PopulationConfig pc;
  pc.sizes.assign(static_cast<std::size_t>(cfg.areas()), cfg.N_i);
  pc.beta = cfg.beta;
  pc.sigma_u = cfg.sigma_u();
  pc.sigma_e = cfg.sigma_e;
  pc.truncation = cfg.truncation;
  return pc;
}

inline std::uint64_t replicate_seed(std::uint64_t seed, int m) {
  return StreamKey(seed).child(Stream::kSimReplicate).child(static_cast<std::uint64_t>(m)).value();
}

// One replicate: population, sample, full pipeline. Throws on failure.
inline ReplicateRecord run_replicate(const SimConfig& cfg, const std::vector<Eigen::MatrixXd>& frame, int m,
                                     const std::vector<std::string>& labels, long* fallbacks = nullptr) {
  const auto seed = replicate_seed(cfg.seed, m);
  const auto pop = simulate_population(population_config(cfg), frame, seed);
  const auto data = simulate_sample(cfg, pop, StreamKey(seed).child(Stream::kSampleSelection));
  PipelineOptions po;
  po.kind = cfg.pipeline_kind();
  po.L = cfg.L;
  po.B = cfg.B;
  po.seed = seed;
  po.levels = cfg.levels;
  po.standard = cfg.standard && po.kind == PipelineKind::kNoninformative;
  po.sir = cfg.sir;
  po.threads = 1;
  const auto res = run_pipeline(data, cfg.parameters, po);
  if (fallbacks) *fallbacks = res.fallbacks;

  const auto D = static_cast<Eigen::Index>(data.size());
  const auto K = static_cast<Eigen::Index>(cfg.parameters.size());
  ReplicateRecord r;
  r.m = m;
  r.truth.resize(D, K);
  r.predictor.resize(D, K);
  r.mse.assign(kMseVariants.size(), Eigen::MatrixXd(D, K));
  r.hit.assign(labels.size(), std::vector<std::vector<char>>(cfg.levels.size(),
                                                             std::vector<char>(static_cast<std::size_t>(D * K), 0)));
  std::map<std::string, std::size_t> label_index;
  for (std::size_t s = 0; s < labels.size(); ++s) label_index[labels[s]] = s;
  std::vector<double> scratch, row(static_cast<std::size_t>(K));
  for (Eigen::Index i = 0; i < D; ++i) {
    const auto& a = data.area(static_cast<std::size_t>(i));
    r.sampled.push_back(a.sampled ? 1 : 0);
    // Areas keep frame order, so index i is population area i.
    const auto& y = pop.y[static_cast<std::size_t>(i)];
    eval_many(cfg.parameters, std::span<const double>(y.data(), static_cast<std::size_t>(y.size())), scratch, row);
    for (Eigen::Index k = 0; k < K; ++k) {
      const auto& o = res.areas[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)];
      r.truth(i, k) = row[static_cast<std::size_t>(k)];
      r.predictor(i, k) = o.mse.theta_hat;
      for (std::size_t v = 0; v < kMseVariants.size(); ++v) r.mse[v](i, k) = variant_value(o.mse, kMseVariants[v]);
      for (const auto& iv : o.intervals) {
        const auto it = label_index.find(interval_label(iv));
        if (it == label_index.end()) continue;
        std::size_t lv = 0;
        while (lv < cfg.levels.size() && cfg.levels[lv] != iv.nominal) ++lv;
        if (lv == cfg.levels.size()) continue;
        r.hit[it->second][lv][static_cast<std::size_t>(i * K + k)] = iv.covers(r.truth(i, k)) ? 1 : 0;
      }
    }
  }
  return r;
}

inline void aggregate_study(const SimConfig& cfg, SimResult& res) {
  const auto& reps = res.replicates;
  if (reps.empty()) return;
  const auto M = static_cast<Eigen::Index>(reps.size());
  const auto D = reps.front().truth.rows();
  const auto K = reps.front().truth.cols();
  Eigen::MatrixXd ledger(M, D);
  for (Eigen::Index m = 0; m < M; ++m)
    for (Eigen::Index i = 0; i < D; ++i) ledger(m, i) = reps[static_cast<std::size_t>(m)].sampled[static_cast<std::size_t>(i)];
  std::vector<RbMode> modes;
  if (cfg.design == DesignKind::kInformative) {
    modes = {RbMode::kSampled, RbMode::kNonsampled};
  } else {
    modes = {RbMode::kAll};
  }
  const bool with_s = cfg.standard && cfg.pipeline_kind() == PipelineKind::kNoninformative;
  std::vector<std::size_t> methods;
  for (std::size_t v = 0; v < kMseVariants.size(); ++v)
    if (kMseVariants[v] != MseVariant::kStandard || with_s) methods.push_back(v);
  const auto t_index = static_cast<std::size_t>(std::find(kMseVariants.begin(), kMseVariants.end(), cfg.t_variant) -
                                                kMseVariants.begin());

  for (auto mode : modes) {
    bool any = false;
    for (Eigen::Index m = 0; m < M && !any; ++m)
      for (Eigen::Index i = 0; i < D && !any; ++i) any = detail::in_domain(mode, ledger(m, i));
    if (!any) continue;
    for (Eigen::Index k = 0; k < K; ++k) {
      const auto& name = cfg.parameters[static_cast<std::size_t>(k)].name;
      Eigen::MatrixXd truth(M, D), pred(M, D);
      std::vector<Eigen::MatrixXd> est(methods.size(), Eigen::MatrixXd(M, D));
      for (Eigen::Index m = 0; m < M; ++m) {
        const auto& r = reps[static_cast<std::size_t>(m)];
        truth.row(m) = r.truth.col(k).transpose();
        pred.row(m) = r.predictor.col(k).transpose();
        for (std::size_t t = 0; t < methods.size(); ++t) est[t].row(m) = r.mse[methods[t]].col(k).transpose();
      }
      const auto rb = aggregate_rb(truth, pred, est, ledger, mode);
      for (std::size_t t = 0; t < methods.size(); ++t)
        res.rb.push_back({to_string(mode), name, to_string(kMseVariants[methods[t]]), rb[t]});

      for (std::size_t s = 0; s < res.intervals.size(); ++s) {
        for (std::size_t lv = 0; lv < cfg.levels.size(); ++lv) {
          long hits = 0, total = 0;
          double area_sum = 0.0;
          int area_count = 0;
          for (Eigen::Index i = 0; i < D; ++i) {
            int h = 0, c = 0;
            for (Eigen::Index m = 0; m < M; ++m) {
              if (!detail::in_domain(mode, ledger(m, i))) continue;
              ++c;
              h += reps[static_cast<std::size_t>(m)].hit[s][lv][static_cast<std::size_t>(i * K + k)];
            }
            if (c == 0) continue;
            hits += h;
            total += c;
            area_sum += static_cast<double>(h) / c;
            ++area_count;
            res.area_ecp.push_back({to_string(mode), name, res.intervals[s], cfg.levels[lv],
                                    static_cast<AreaId>(i + 1), static_cast<double>(h) / c, c});
          }
          res.ecp.push_back({to_string(mode), name, res.intervals[s], cfg.levels[lv],
                             static_cast<double>(hits) / static_cast<double>(total), area_sum / area_count});
        }
      }
    }
  }
  for (const auto& r : reps)
    for (Eigen::Index i = 0; i < D; ++i)
      for (Eigen::Index k = 0; k < K; ++k) {
        const double d = r.predictor(i, k) - r.truth(i, k);
        res.t.push_back({static_cast<AreaId>(i + 1), cfg.parameters[static_cast<std::size_t>(k)].name, r.m,
                         r.sampled[static_cast<std::size_t>(i)] != 0, d / std::sqrt(r.mse[t_index](i, k))});
      }
}

// Runs M replicates (in parallel over replicates) and aggregates. Failed
// replicates are dropped and reported; if none survive the study fails.
inline SimResult run_study(const SimConfig& cfg, const std::function<void(int, int)>& progress = {}) {
  cfg.validate();
  SimResult res;
  res.scenario = cfg.scenario();
  res.requested = cfg.M;
  res.intervals = interval_labels(cfg.standard && cfg.pipeline_kind() == PipelineKind::kNoninformative);
  const auto frame = uniform_covariates(population_config(cfg).sizes, cfg.seed);
  std::vector<std::optional<ReplicateRecord>> slot(static_cast<std::size_t>(cfg.M));
  std::vector<std::string> error(slot.size());
  std::vector<long> fb(slot.size(), 0);
  std::mutex progress_mutex;
  int done = 0;
  parallel_for(slot.size(), cfg.threads, [&](std::size_t m) {
    try {
      slot[m] = run_replicate(cfg, frame, static_cast<int>(m) + 1, res.intervals, &fb[m]);
    } catch (const NumericalError& e) {
      error[m] = e.what();
    }
    if (progress) {
      std::lock_guard lock(progress_mutex);
      progress(++done, cfg.M);
    }
  });
  for (std::size_t m = 0; m < slot.size(); ++m) {
    res.fallbacks += fb[m];
    if (slot[m]) {
      res.replicates.push_back(std::move(*slot[m]));
    } else {
      ++res.dropped;
      res.failures.push_back("replicate " + std::to_string(m + 1) + ": " + error[m]);
    }
  }
  res.completed = static_cast<int>(res.replicates.size());
  if (res.completed == 0) throw EstimationError("simulate: every replicate failed");
  aggregate_study(cfg, res);
  return res;
}

}  // namespace ebpmse
