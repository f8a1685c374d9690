#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ebpmse/area_params.hpp"
#include "ebpmse/dataset.hpp"
#include "ebpmse/ner_model.hpp"
#include "ebpmse/parallel.hpp"
#include "ebpmse/rng.hpp"

namespace ebpmse {

struct EbpDraws {
  AreaId area_id = 0;
  std::string parameter;
  Eigen::VectorXd draws;  // theta^(l), l = 1..L
  NerParams params_used;
  std::uint64_t seed = 0;
};

struct EbpPrediction {
  AreaId area_id = 0;
  std::string parameter;
  double theta_hat = 0.0;
  Eigen::Index L = 0;
  double mc_se = 0.0;
};

// Stream for the EBP draws of one area. Replicate 0 is the original fit;
// bootstrap replicates share it when common random numbers are on.
inline StreamKey ebp_area_key(std::uint64_t seed, AreaId id, std::uint64_t replicate = 0) {
  return StreamKey(seed).child(Stream::kEbpDraws).child({replicate, static_cast<std::uint64_t>(id)});
}

// Draws the nonsampled part of one area from its Gaussian conditional
// distribution given the sample: one shared u per draw, then unit errors.
class ConditionalGenerator {
 public:
  ConditionalGenerator(const NerParams& par, const Area& a) : area_(&a) {
    const auto [m, v] = conditional_effect(par, a);
    u_mean_ = m;
    u_sd_ = std::sqrt(v);
    const auto ns = a.nonsampled();
    mu_ = a.x.bottomRows(ns) * par.beta;
    sd_ = (par.sigma2_e / a.v.tail(ns).array()).sqrt();
  }

  // Fills `full` (length N) with observed y followed by simulated values.
  void draw(Rng& rng, std::span<double> full) const {
    const auto n = area_->n();
    for (Eigen::Index j = 0; j < n; ++j) full[static_cast<std::size_t>(j)] = area_->y(j);
    const double u = rng.normal(u_mean_, u_sd_);
    for (Eigen::Index j = 0; j < mu_.size(); ++j)
      full[static_cast<std::size_t>(n + j)] = rng.normal(mu_(j) + u, sd_(j));
  }

 private:
  const Area* area_;
  double u_mean_ = 0.0;
  double u_sd_ = 0.0;
  Eigen::VectorXd mu_;
  Eigen::ArrayXd sd_;
};

inline Eigen::VectorXd draw_conditional_population(const NerParams& par, const Area& a, Rng& rng) {
  if (a.N() == 0) throw MissingPopulationError(a.id);
  Eigen::VectorXd full(a.N());
  ConditionalGenerator(par, a).draw(rng, std::span<double>(full.data(), full.size()));
  return full;
}

inline Eigen::VectorXd draw_conditional_population(const FittedNer& fit, const SampleDataset& data,
                                                   AreaId id, Rng& rng) {
  return draw_conditional_population(fit.params, data.area(data.index_of(id)), rng);
}

// L x K matrix of draws theta^(l) for K functionals; draw l uses stream
// key.child(l), so draws are reproducible one by one.
template <class Generator>
Eigen::MatrixXd draw_functionals(const Generator& gen, Eigen::Index N,
                                 std::span<const AreaParameter> pars, Eigen::Index L,
                                 const StreamKey& key) {
  Eigen::MatrixXd out(L, static_cast<Eigen::Index>(pars.size()));
  std::vector<double> full(static_cast<std::size_t>(N)), scratch, row(pars.size());
  for (Eigen::Index l = 0; l < L; ++l) {
    Rng rng(key.child(static_cast<std::uint64_t>(l)));
    gen.draw(rng, full);
    eval_many(pars, full, scratch, row);
    for (std::size_t k = 0; k < pars.size(); ++k) out(l, static_cast<Eigen::Index>(k)) = row[k];
  }
  return out;
}

inline Eigen::MatrixXd ebp_draws(const NerParams& par, const Area& a,
                                 std::span<const AreaParameter> pars, Eigen::Index L,
                                 const StreamKey& key) {
  if (a.N() == 0) throw MissingPopulationError(a.id);
  return draw_functionals(ConditionalGenerator(par, a), a.N(), pars, L, key);
}

// Mean taken relative to the first draw, so identical draws give exactly
// that value back.
inline double draw_mean(std::span<const double> d) {
  double s = 0.0;
  for (double v : d) s += v - d.front();
  return d.front() + s / static_cast<double>(d.size());
}

inline double draw_mean(const Eigen::Ref<const Eigen::VectorXd>& d) {
  return draw_mean(std::span<const double>(d.data(), static_cast<std::size_t>(d.size())));
}

inline EbpPrediction summarize_draws(AreaId id, const std::string& name,
                                     const Eigen::Ref<const Eigen::VectorXd>& d) {
  EbpPrediction p;
  p.area_id = id;
  p.parameter = name;
  p.L = d.size();
  p.theta_hat = draw_mean(d);
  const double ss = (d.array() - p.theta_hat).square().sum();
  p.mc_se = std::sqrt(ss / static_cast<double>(d.size() - 1) / static_cast<double>(d.size()));
  return p;
}

struct EbpResult {
  EbpPrediction prediction;
  EbpDraws draws;
};

// EBP of one functional for every area of the dataset.
inline std::vector<EbpResult> predict(const FittedNer& fit, const SampleDataset& data,
                                      const AreaParameter& par, Eigen::Index L,
                                      std::uint64_t seed, unsigned threads = 0) {
  if (L < 2) throw ValidationError("predict: L must be at least 2");
  std::vector<EbpResult> out(data.size());
  const std::span<const AreaParameter> pars(&par, 1);
  parallel_for(data.size(), threads, [&](std::size_t i) {
    const auto& a = data.area(i);
    const Eigen::VectorXd d = ebp_draws(fit.params, a, pars, L, ebp_area_key(seed, a.id)).col(0);
    out[i].prediction = summarize_draws(a.id, par.name, d);
    out[i].draws = {a.id, par.name, d, fit.params, seed};
  });
  return out;
}

}  // namespace ebpmse
