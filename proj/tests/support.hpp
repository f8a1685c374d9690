#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <utility>
#include <vector>

#include "ebpmse/ebp.hpp"
#include "ebpmse/informative.hpp"
#include "ebpmse/mse.hpp"
#include "ebpmse/population.hpp"
#include "ebpmse/sampling.hpp"

namespace testing_support {

// Nested error data with SRS of n units out of N in each of D areas.
inline std::pair<ebpmse::SampleDataset, ebpmse::Population> simulate_with_population(
    int D, int n, int N, double sigma_u, double sigma_e, std::uint64_t seed, double truncation = 0.0) {
  ebpmse::PopulationConfig cfg;
  cfg.sizes.assign(static_cast<std::size_t>(D), N);
  cfg.sigma_u = sigma_u;
  cfg.sigma_e = sigma_e;
  cfg.truncation = truncation;
  const auto pop = ebpmse::simulate_population(cfg, seed, seed + 1000003);
  std::vector<std::vector<Eigen::Index>> sel(static_cast<std::size_t>(D));
  ebpmse::Rng rng(ebpmse::StreamKey(seed).child(ebpmse::Stream::kSampleSelection));
  for (auto& s : sel) s = ebpmse::srs_indices(N, n, rng);
  return {ebpmse::make_sample(pop, sel), pop};
}

inline ebpmse::SampleDataset simulate_dataset(int D, int n, int N, double sigma_u, double sigma_e,
                                              std::uint64_t seed, double truncation = 0.0) {
  return simulate_with_population(D, n, N, sigma_u, sigma_e, seed, truncation).first;
}

// Two-stage informative design on D areas of N units each.
inline std::pair<ebpmse::SampleDataset, ebpmse::Population> informative_with_population(
    int D, int N, double sigma_u, std::uint64_t seed, const ebpmse::InformativeDesign& design = {},
    double sigma_e = 0.3) {
  ebpmse::PopulationConfig cfg;
  cfg.sizes.assign(static_cast<std::size_t>(D), N);
  cfg.sigma_u = sigma_u;
  cfg.sigma_e = sigma_e;
  const auto pop = ebpmse::simulate_population(cfg, seed, seed + 1000003);
  const auto key = ebpmse::StreamKey(seed).child(ebpmse::Stream::kSampleSelection);
  return {ebpmse::informative_sample(pop, cfg.beta, sigma_u, sigma_e, design, key), pop};
}

// Copy of the data with unit and area weights replaced. unit(i, j, area)
// gives the weight of sampled unit j of area index i; area(i, area) the area
// weight (nullopt leaves it unset).
template <class UnitFn, class AreaFn>
ebpmse::SampleDataset reweight(const ebpmse::SampleDataset& data, UnitFn unit, AreaFn area) {
  auto areas = data.areas();
  for (std::size_t i = 0; i < areas.size(); ++i) {
    auto& a = areas[i];
    a.w.resize(a.n());
    for (Eigen::Index j = 0; j < a.n(); ++j) a.w(j) = unit(i, j, a);
    a.weight = a.sampled ? area(i, a) : std::nullopt;
  }
  return ebpmse::SampleDataset(std::move(areas));
}

// Copy of the data with the sample removed from the listed area indices.
inline ebpmse::SampleDataset drop_samples(const ebpmse::SampleDataset& data,
                                          const std::vector<std::size_t>& which) {
  auto areas = data.areas();
  for (auto i : which) {
    auto& a = areas[i];
    a.sampled = false;
    a.y.resize(0);
    a.w.resize(0);
    a.weight.reset();
  }
  return ebpmse::SampleDataset(std::move(areas));
}

// A dataset, a poverty line z and an area whose nonsampled draws (common
// random numbers, seed `seed`) fall below log z under the original fit but
// never under any bootstrap refit. PG then has a positive leading term and a
// zero bootstrap average for that area.
struct PgDegenerateCase {
  ebpmse::SampleDataset data;
  double z = 0.0;
  std::size_t area = 0;
};

inline PgDegenerateCase pg_degenerate_case(Eigen::Index L, int B, std::uint64_t seed) {
  using namespace ebpmse;
  for (std::uint64_t s = 1; s < 50; ++s) {
    const auto data = simulate_dataset(30, 5, 40, 0.3, 0.3, s);
    const auto fit = fit_ml(data);
    const auto fits = bootstrap_refits(fit, data, B, seed, 1);
    for (std::size_t i = 0; i < data.size(); ++i) {
      const auto& a = data.area(i);
      const auto n = static_cast<std::size_t>(a.n());
      const std::vector<AreaParameter> lowest{AreaParameter::custom_fn("min_ns", [n](std::span<const double> y) {
        return *std::min_element(y.begin() + static_cast<std::ptrdiff_t>(n), y.end());
      })};
      const double base = ebp_draws(fit.params, a, lowest, L, ebp_area_key(seed, a.id)).minCoeff();
      double boot = std::numeric_limits<double>::infinity();
      for (const auto& par : fits.params)
        boot = std::min(boot, ebp_draws(par, a, lowest, L, ebp_area_key(seed, a.id)).minCoeff());
      if (base < boot) return {data, std::exp(0.5 * (base + boot)), i};
    }
  }
  throw std::runtime_error("pg_degenerate_case: no candidate found");
}

// Informative parameters with a flat weight model: no response or covariate
// effect, every area at log_kappa.
inline ebpmse::ModelParams flat_params(const ebpmse::NerParams& ner, const ebpmse::SampleDataset& data, double log_kappa) {
  ebpmse::ModelParams m;
  m.ner = ner;
  m.weight.gamma1 = Eigen::VectorXd::Zero(data.p());
  m.weight.log_kappa = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(data.size()), log_kappa);
  return m;
}

// Six identical sampled areas plus one nonsampled copy.
inline ebpmse::SampleDataset identical_areas() {
  ebpmse::Area t;
  t.sampled = true;
  t.weight = 4.0;
  t.x.resize(8, 2);
  t.x.col(0).setOnes();
  t.x.col(1) << 0.1, 0.5, 0.3, 0.9, 0.7, 0.2, 0.4, 0.6;
  t.v = Eigen::VectorXd::Ones(8);
  t.y.resize(5);
  t.y << 5.1, 4.8, 5.3, 5.0, 4.9;
  t.w.resize(5);
  t.w << 2.0, 1.5, 3.0, 2.2, 1.8;
  for (int j = 0; j < 8; ++j) t.unit_ids.push_back(j + 1);
  std::vector<ebpmse::Area> areas;
  for (int i = 0; i < 6; ++i) {
    areas.push_back(t);
    areas.back().id = i + 1;
  }
  ebpmse::Area ns = t;
  ns.id = 7;
  ns.sampled = false;
  ns.y.resize(0);
  ns.w.resize(0);
  ns.weight.reset();
  areas.push_back(ns);
  return ebpmse::SampleDataset(std::move(areas));
}

}  // namespace testing_support
