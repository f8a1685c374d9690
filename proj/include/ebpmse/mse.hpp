#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ebpmse/ebp.hpp"
#include "ebpmse/ner_model.hpp"
#include "ebpmse/parallel.hpp"

namespace ebpmse {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

// Sample variance of the EBP draws (L - 1 divisor).
inline double m1_hat(std::span<const double> d) {
  if (d.size() < 2) throw ValidationError("m1_hat: need at least 2 draws");
  const double mean = draw_mean(d);
  double ss = 0.0;
  for (double v : d) ss += (v - mean) * (v - mean);
  return ss / static_cast<double>(d.size() - 1);
}

inline double m1_hat(const Eigen::Ref<const Eigen::VectorXd>& d) {
  return m1_hat(std::span<const double>(d.data(), static_cast<std::size_t>(d.size())));
}

inline double m2_hat(std::span<const double> theta_b, double theta_hat) {
  if (theta_b.size() < 2) throw ValidationError("m2_hat: need at least 2 replicates");
  double ss = 0.0;
  for (double t : theta_b) ss += (t - theta_hat) * (t - theta_hat);
  return ss / static_cast<double>(theta_b.size());
}

struct BiasCorrected {
  double add = 0.0;
  double mult = 0.0;
  double comp = 0.0;
  double hm = 0.0;
  bool infinite_mult = false;
};

inline BiasCorrected bias_corrected_m1(double m1, double m1_bar) {
  if (m1 < 0.0 || m1_bar < 0.0) throw ValidationError("bias_corrected_m1: negative input");
  BiasCorrected r;
  if (m1_bar == 0.0) {
    if (m1 == 0.0) return r;
    r.add = 2.0 * m1;
    r.mult = kInf;
    r.infinite_mult = true;
    r.comp = r.hm = r.add;
    return r;
  }
  r.add = 2.0 * m1 - m1_bar;
  r.mult = m1 * m1 / m1_bar;
  if (m1 >= m1_bar) {
    r.comp = r.hm = r.add;
  } else {
    r.comp = r.mult;
    r.hm = m1 * std::exp(-(m1_bar - m1) / m1_bar);
  }
  return r;
}

struct BootstrapReplicate {
  int b = 0;
  NerParams psi_hat_b;
  double theta_hat_b = 0.0;
  double m1_b = 0.0;
  Eigen::VectorXd draws;  // theta^(l,b); kept only when intervals need them
};

struct MseReport {
  AreaId area_id = 0;
  std::string parameter;
  double theta_hat = 0.0;
  double m1 = 0.0;
  double m2 = 0.0;
  double m1_bar_star = 0.0;
  double bias_add = 0.0;  // m1 - m1_bar_star
  double mse_noBC = 0.0;
  double mse_add = 0.0;
  double mse_mult = 0.0;
  double mse_comp = 0.0;
  double mse_hm = 0.0;
  double mse_standard = std::numeric_limits<double>::quiet_NaN();  // NaN: not computed
  bool negative_add = false;
  bool infinite_mult = false;
  int replicates = 0;
};

inline MseReport mse_report(AreaId id, const std::string& parameter, double theta_hat, double m1,
                            std::span<const double> theta_b, std::span<const double> m1_b,
                            std::optional<double> standard = std::nullopt) {
  if (theta_b.size() != m1_b.size()) throw ValidationError("mse_report: replicate size mismatch");
  MseReport r;
  r.area_id = id;
  r.parameter = parameter;
  r.theta_hat = theta_hat;
  r.m1 = m1;
  r.m2 = m2_hat(theta_b, theta_hat);
  double s = 0.0;
  for (double v : m1_b) s += v;
  r.m1_bar_star = s / static_cast<double>(m1_b.size());
  r.bias_add = m1 - r.m1_bar_star;
  const auto bc = bias_corrected_m1(m1, r.m1_bar_star);
  r.mse_noBC = m1 + r.m2;
  r.mse_add = bc.add + r.m2;
  r.mse_mult = bc.mult + r.m2;
  r.mse_comp = bc.comp + r.m2;
  r.mse_hm = bc.hm + r.m2;
  r.negative_add = r.mse_add < 0.0;
  r.infinite_mult = bc.infinite_mult;
  r.replicates = static_cast<int>(theta_b.size());
  if (standard) r.mse_standard = *standard;
  return r;
}

inline MseReport mse_report(const EbpDraws& draws, std::span<const BootstrapReplicate> reps,
                            std::optional<double> standard = std::nullopt) {
  std::vector<double> tb, mb;
  for (const auto& r : reps) {
    tb.push_back(r.theta_hat_b);
    mb.push_back(r.m1_b);
  }
  return mse_report(draws.area_id, draws.parameter, draw_mean(draws.draws), m1_hat(draws.draws), tb, mb,
                    standard);
}

// Responses for the sampled units only, drawn from the fitted model.
inline std::vector<Eigen::VectorXd> bootstrap_sample(const NerParams& par, const SampleDataset& data,
                                                     const StreamKey& key) {
  std::vector<Eigen::VectorXd> y(data.size());
  const double su = std::sqrt(par.sigma2_u);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& a = data.area(i);
    y[i].resize(a.n());
    if (a.n() == 0) continue;
    Rng rng(key.child(static_cast<std::uint64_t>(a.id)));
    const double u = rng.normal(0.0, su);
    for (Eigen::Index j = 0; j < a.n(); ++j)
      y[i](j) = a.x.row(j).dot(par.beta) + u + rng.normal(0.0, std::sqrt(par.sigma2_e / a.v(j)));
  }
  return y;
}

struct BootstrapFits {
  std::vector<int> index;         // replicate number b of each surviving fit
  std::vector<NerParams> params;  // psi^(b)
  int dropped = 0;
};

// Steps 1-2 of the bootstrap: simulate sampled responses and refit. Failed
// refits are dropped; more than 10% failures is an error.
inline BootstrapFits bootstrap_refits(const FittedNer& fit, const SampleDataset& data, int B,
                                      std::uint64_t seed, unsigned threads = 0) {
  if (B < 2) throw ValidationError("bootstrap: B must be at least 2");
  std::vector<std::optional<NerParams>> slot(static_cast<std::size_t>(B));
  const StreamKey key = StreamKey(seed).child(Stream::kBootstrapSample);
  parallel_for(slot.size(), threads, [&](std::size_t b) {
    const auto y = bootstrap_sample(fit.params, data, key.child(b));
    try {
      slot[b] = fit_ml_stats(suff_stats(data, {}, &y)).params;
    } catch (const EstimationError&) {
    }
  });
  BootstrapFits out;
  for (std::size_t b = 0; b < slot.size(); ++b) {
    if (slot[b]) {
      out.index.push_back(static_cast<int>(b));
      out.params.push_back(*slot[b]);
    } else {
      ++out.dropped;
    }
  }
  if (out.dropped * 10 > B)
    throw EstimationError("bootstrap: " + std::to_string(out.dropped) + " of " + std::to_string(B) +
                          " refits failed");
  if (out.params.size() < 2) throw EstimationError("bootstrap: fewer than 2 surviving replicates");
  return out;
}

struct BootstrapOptions {
  Eigen::Index L = 500;
  int B = 200;
  std::uint64_t seed = 0;
  // Replicates reuse the EBP random streams of the original fit, so the
  // spread of theta^(b) reflects parameter variation rather than new
  // simulation noise.
  bool common_random_numbers = true;
  bool keep_draws = false;
  unsigned threads = 0;
};

// Step 3 for one area: EBP draws under each psi^(b) with the original data.
// Returns one vector of replicates per functional.
inline std::vector<std::vector<BootstrapReplicate>> bootstrap_area(
    const BootstrapFits& fits, const Area& a, std::span<const AreaParameter> pars,
    const BootstrapOptions& opt) {
  std::vector<std::vector<BootstrapReplicate>> out(pars.size());
  for (std::size_t r = 0; r < fits.params.size(); ++r) {
    const auto b = static_cast<std::uint64_t>(fits.index[r]);
    const auto key = ebp_area_key(opt.seed, a.id, opt.common_random_numbers ? 0 : b + 1);
    const Eigen::MatrixXd d = ebp_draws(fits.params[r], a, pars, opt.L, key);
    for (std::size_t k = 0; k < pars.size(); ++k) {
      BootstrapReplicate rep;
      rep.b = fits.index[r];
      rep.psi_hat_b = fits.params[r];
      const auto col = d.col(static_cast<Eigen::Index>(k));
      rep.theta_hat_b = draw_mean(col);
      rep.m1_b = m1_hat(col);
      if (opt.keep_draws) rep.draws = col;
      out[k].push_back(std::move(rep));
    }
  }
  return out;
}

// Full bootstrap for one functional: replicates[area][b].
inline std::vector<std::vector<BootstrapReplicate>> bootstrap_noninf(
    const FittedNer& fit, const SampleDataset& data, const AreaParameter& par,
    const BootstrapOptions& opt) {
  const auto fits = bootstrap_refits(fit, data, opt.B, opt.seed, opt.threads);
  std::vector<std::vector<BootstrapReplicate>> out(data.size());
  const std::span<const AreaParameter> pars(&par, 1);
  parallel_for(data.size(), opt.threads, [&](std::size_t i) {
    out[i] = std::move(bootstrap_area(fits, data.area(i), pars, opt).front());
  });
  return out;
}

// Parametric bootstrap of the whole population: mean over b of
// (EBP on the bootstrap sample - bootstrap true value)^2. Result is
// [area][functional].
inline std::vector<std::vector<double>> standard_mr_mse(const FittedNer& fit,
                                                        const SampleDataset& data,
                                                        std::span<const AreaParameter> pars,
                                                        Eigen::Index L, int B, std::uint64_t seed,
                                                        unsigned threads = 0) {
  if (B < 2) throw ValidationError("standard_mr_mse: B must be at least 2");
  const auto K = pars.size();
  std::vector<std::vector<std::vector<double>>> err(
      static_cast<std::size_t>(B), std::vector<std::vector<double>>(data.size()));
  std::vector<char> ok(static_cast<std::size_t>(B), 0);
  const StreamKey key = StreamKey(seed).child(Stream::kStandardBootstrap);
  const auto& par = fit.params;
  parallel_for(static_cast<std::size_t>(B), threads, [&](std::size_t b) {
    const StreamKey kb = key.child(b);
    std::vector<Eigen::VectorXd> ys(data.size());
    std::vector<std::vector<double>> truth(data.size(), std::vector<double>(K));
    std::vector<double> scratch;
    for (std::size_t i = 0; i < data.size(); ++i) {
      const auto& a = data.area(i);
      Rng rng(kb.child({0, static_cast<std::uint64_t>(a.id)}));
      const double u = rng.normal(0.0, std::sqrt(par.sigma2_u));
      Eigen::VectorXd y(a.N());
      for (Eigen::Index j = 0; j < a.N(); ++j)
        y(j) = a.x.row(j).dot(par.beta) + u + rng.normal(0.0, std::sqrt(par.sigma2_e / a.v(j)));
      eval_many(pars, std::span<const double>(y.data(), static_cast<std::size_t>(y.size())), scratch,
                truth[i]);
      ys[i] = y.head(a.n());
    }
    NerParams pb;
    try {
      pb = fit_ml_stats(suff_stats(data, {}, &ys)).params;
    } catch (const EstimationError&) {
      return;
    }
    const SampleDataset boot = data.with_responses(ys);
    for (std::size_t i = 0; i < data.size(); ++i) {
      const auto& a = boot.area(i);
      const Eigen::MatrixXd d =
          ebp_draws(pb, a, pars, L, kb.child({1, static_cast<std::uint64_t>(a.id)}));
      err[b][i].resize(K);
      for (std::size_t k = 0; k < K; ++k) {
        const double diff = draw_mean(d.col(static_cast<Eigen::Index>(k))) - truth[i][k];
        err[b][i][k] = diff * diff;
      }
    }
    ok[b] = 1;
  });
  int good = 0;
  for (char c : ok) good += c;
  if ((B - good) * 10 > B) throw EstimationError("standard_mr_mse: too many failed refits");
  std::vector<std::vector<double>> out(data.size(), std::vector<double>(K, 0.0));
  for (std::size_t b = 0; b < static_cast<std::size_t>(B); ++b) {
    if (!ok[b]) continue;
    for (std::size_t i = 0; i < data.size(); ++i)
      for (std::size_t k = 0; k < K; ++k) out[i][k] += err[b][i][k] / good;
  }
  return out;
}

}  // namespace ebpmse
