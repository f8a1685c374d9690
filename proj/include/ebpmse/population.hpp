#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "ebpmse/distributions.hpp"
#include "ebpmse/error.hpp"
#include "ebpmse/rng.hpp"

namespace ebpmse {

struct PopulationConfig {
  std::vector<Eigen::Index> sizes;  // N_i per area
  Eigen::VectorXd beta = Eigen::Vector2d(5.0, 0.1);
  double sigma_u = 0.3;
  double sigma_e = 0.3;
  // Errors are truncated at +-truncation standard deviations; <= 0 disables.
  double truncation = 2.5;
};

struct Population {
  std::vector<Eigen::MatrixXd> x;  // N_i x p, first column 1
  std::vector<Eigen::VectorXd> y;
  std::vector<Eigen::VectorXd> e;
  Eigen::VectorXd u;
};

// Intercept plus one U(0, 1) covariate per unit. Drawn from its own stream so
// the same frame can be held fixed over all Monte Carlo replicates.
inline std::vector<Eigen::MatrixXd> uniform_covariates(const std::vector<Eigen::Index>& sizes,
                                                       std::uint64_t seed) {
  std::vector<Eigen::MatrixXd> x(sizes.size());
  const StreamKey key = StreamKey(seed).child(Stream::kCovariates);
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    Rng rng(key.child(i));
    x[i].resize(sizes[i], 2);
    for (Eigen::Index j = 0; j < sizes[i]; ++j) {
      x[i](j, 0) = 1.0;
      x[i](j, 1) = rng.uniform();
    }
  }
  return x;
}

inline double draw_error(Rng& rng, double sd, double truncation) {
  return truncation > 0.0 ? truncated_normal(rng, sd, truncation) : rng.normal(0.0, sd);
}

inline Population simulate_population(const PopulationConfig& cfg,
                                      const std::vector<Eigen::MatrixXd>& x,
                                      std::uint64_t seed) {
  if (x.size() != cfg.sizes.size()) throw ValidationError("simulate_population: frame size mismatch");
  if (cfg.sigma_u < 0.0 || cfg.sigma_e < 0.0)
    throw ValidationError("simulate_population: negative standard deviation");
  Population pop;
  pop.x = x;
  pop.y.resize(x.size());
  pop.e.resize(x.size());
  pop.u.resize(static_cast<Eigen::Index>(x.size()));
  const StreamKey key = StreamKey(seed).child(Stream::kPopulation);
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i].rows() != cfg.sizes[i] || x[i].cols() != cfg.beta.size())
      throw ValidationError("simulate_population: covariate frame has wrong shape");
    Rng rng(key.child(i));
    const double u = draw_error(rng, cfg.sigma_u, cfg.truncation);
    pop.u(static_cast<Eigen::Index>(i)) = u;
    pop.e[i].resize(cfg.sizes[i]);
    for (Eigen::Index j = 0; j < cfg.sizes[i]; ++j) pop.e[i](j) = draw_error(rng, cfg.sigma_e, cfg.truncation);
    pop.y[i] = (x[i] * cfg.beta).array() + u + pop.e[i].array();
  }
  return pop;
}

inline Population simulate_population(const PopulationConfig& cfg, std::uint64_t seed,
                                      std::uint64_t covariate_seed) {
  return simulate_population(cfg, uniform_covariates(cfg.sizes, covariate_seed), seed);
}

}  // namespace ebpmse
