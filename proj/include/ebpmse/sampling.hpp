#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "ebpmse/dataset.hpp"
#include "ebpmse/error.hpp"
#include "ebpmse/population.hpp"
#include "ebpmse/rng.hpp"

namespace ebpmse {

// k distinct indices from [0, N) by simple random sampling, ascending.
inline std::vector<Eigen::Index> srs_indices(Eigen::Index N, Eigen::Index k, Rng& rng) {
  if (k > N || k < 0) throw ValidationError("srs: sample size exceeds population size");
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(N));
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  for (Eigen::Index j = 0; j < k; ++j) {
    const auto r = j + static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(N - j)));
    std::swap(idx[static_cast<std::size_t>(j)], idx[static_cast<std::size_t>(r)]);
  }
  idx.resize(static_cast<std::size_t>(k));
  std::sort(idx.begin(), idx.end());
  return idx;
}

namespace detail {

// Units whose size would give inclusion probability >= 1 are taken with
// certainty; the remaining sample is spread over the rest. Returns the
// certainty flags and the sample size left for the noncertainty units.
inline std::pair<std::vector<char>, std::size_t> certainty_units(std::span<const double> sizes,
                                                                 std::size_t k) {
  std::vector<char> certain(sizes.size(), 0);
  for (;;) {
    double total = 0.0;
    for (std::size_t j = 0; j < sizes.size(); ++j)
      if (!certain[j]) total += sizes[j];
    bool changed = false;
    if (k == 0 || total <= 0.0) break;
    for (std::size_t j = 0; j < sizes.size(); ++j) {
      if (!certain[j] && sizes[j] > 0.0 && static_cast<double>(k) * sizes[j] / total >= 1.0) {
        certain[j] = 1;
        --k;
        changed = true;
        if (k == 0) break;
      }
    }
    if (!changed) break;
  }
  return {certain, k};
}

inline void check_sizes(std::span<const double> sizes, std::size_t k) {
  std::size_t positive = 0;
  for (double s : sizes) {
    if (!(s >= 0.0) || !std::isfinite(s)) throw ValidationError("systematic_pps: invalid size");
    positive += s > 0.0;
  }
  if (k > positive) throw ValidationError("systematic_pps: more draws than units with positive size");
}

}  // namespace detail

// First-order inclusion probabilities of systematic PPS with certainty units.
inline std::vector<double> pps_inclusion_probabilities(std::span<const double> sizes, std::size_t k) {
  detail::check_sizes(sizes, k);
  const auto [certain, rest] = detail::certainty_units(sizes, k);
  double total = 0.0;
  for (std::size_t j = 0; j < sizes.size(); ++j)
    if (!certain[j]) total += sizes[j];
  std::vector<double> pi(sizes.size());
  for (std::size_t j = 0; j < sizes.size(); ++j)
    pi[j] = certain[j] ? 1.0 : (total > 0.0 ? static_cast<double>(rest) * sizes[j] / total : 0.0);
  return pi;
}

// Systematic PPS in frame order with one uniform random start. Returns the
// selected indices in ascending order.
inline std::vector<std::size_t> systematic_pps(std::span<const double> sizes, std::size_t k, Rng& rng) {
  detail::check_sizes(sizes, k);
  const auto [certain, rest] = detail::certainty_units(sizes, k);
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < sizes.size(); ++j)
    if (certain[j]) out.push_back(j);
  if (rest > 0) {
    double total = 0.0;
    for (std::size_t j = 0; j < sizes.size(); ++j)
      if (!certain[j]) total += sizes[j];
    const double start = rng.uniform();
    double cum = 0.0;
    std::size_t m = 0;
    for (std::size_t j = 0; j < sizes.size() && m < rest; ++j) {
      if (certain[j]) continue;
      const double next = cum + static_cast<double>(rest) * sizes[j] / total;
      if (start + static_cast<double>(m) <= next && start + static_cast<double>(m) > cum) {
        out.push_back(j);
        ++m;
      }
      cum = next;
    }
    // Rounding in the cumulation can leave the last point just past the end.
    for (std::size_t j = sizes.size(); m < rest && j-- > 0;) {
      if (!certain[j] && sizes[j] > 0.0 && std::find(out.begin(), out.end(), j) == out.end()) {
        out.push_back(j);
        ++m;
      }
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

inline long long round_half_even(double v) {
  return static_cast<long long>(std::nearbyint(v));  // default rounding mode is to-nearest-even
}

// Area-stage size measure, larger for areas with negative effects.
inline double informative_area_size(double u, double sigma_u) {
  return static_cast<double>(round_half_even(1000.0 * std::exp(-u / 8.0 / sigma_u)));
}

// Unit-stage size measure from the model residual y - x'beta and a N(0, 1)
// noise draw delta.
inline double informative_unit_size(double residual, double sigma_e, double delta) {
  return std::exp((-residual / sigma_e + delta / 5.0) / 3.0);
}

// Builds the sample data set from a population and per-area selected unit
// indices (empty for nonsampled areas). Weights are 1/pi when given.
inline SampleDataset make_sample(const Population& pop,
                                 const std::vector<std::vector<Eigen::Index>>& selected,
                                 const std::vector<std::vector<double>>* unit_pi = nullptr,
                                 const std::vector<double>* area_pi = nullptr,
                                 AreaId first_id = 1) {
  std::vector<Area> areas(pop.x.size());
  for (std::size_t i = 0; i < areas.size(); ++i) {
    auto& a = areas[i];
    const auto& sel = selected[i];
    const auto N = pop.x[i].rows();
    const auto n = static_cast<Eigen::Index>(sel.size());
    a.id = first_id + static_cast<AreaId>(i);
    a.sampled = n > 0;
    std::vector<char> in(static_cast<std::size_t>(N), 0);
    for (auto j : sel) in[static_cast<std::size_t>(j)] = 1;
    a.x.resize(N, pop.x[i].cols());
    a.v = Eigen::VectorXd::Ones(N);
    a.y.resize(n);
    if (unit_pi && n > 0) a.w.resize(n);
    Eigen::Index row = 0;
    for (auto j : sel) {
      a.x.row(row) = pop.x[i].row(j);
      a.y(row) = pop.y[i](j);
      if (unit_pi && n > 0) a.w(row) = 1.0 / (*unit_pi)[i][static_cast<std::size_t>(j)];
      a.unit_ids.push_back(j + 1);
      ++row;
    }
    for (Eigen::Index j = 0; j < N; ++j) {
      if (in[static_cast<std::size_t>(j)]) continue;
      a.x.row(row++) = pop.x[i].row(j);
      a.unit_ids.push_back(j + 1);
    }
    if (area_pi && n > 0) a.weight = 1.0 / (*area_pi)[i];
  }
  return SampleDataset(std::move(areas));
}

// Two-stage informative design: areas split into contiguous equal strata,
// systematic PPS of areas within strata on z_i, then systematic PPS of units
// within selected areas on z_ij.
struct InformativeDesign {
  std::vector<Eigen::Index> areas_selected{30, 30, 30};  // per stratum
  std::vector<Eigen::Index> unit_sizes{5, 10, 15};       // per stratum
};

inline std::size_t stratum_of(std::size_t i, std::size_t D, std::size_t H) { return i * H / D; }

inline SampleDataset informative_sample(const Population& pop, const Eigen::VectorXd& beta,
                                        double sigma_u, double sigma_e,
                                        const InformativeDesign& design, const StreamKey& key) {
  const auto D = pop.x.size();
  const auto H = design.areas_selected.size();
  if (H == 0 || design.unit_sizes.size() != H)
    throw ValidationError("informative design: strata settings have different lengths");
  if (!(sigma_u > 0.0) || !(sigma_e > 0.0))
    throw ValidationError("informative design: standard deviations must be positive");
  std::vector<std::vector<std::size_t>> members(H);
  for (std::size_t i = 0; i < D; ++i) members[stratum_of(i, D, H)].push_back(i);

  std::vector<double> area_pi(D, 0.0);
  std::vector<std::vector<Eigen::Index>> selected(D);
  std::vector<std::vector<double>> unit_pi(D);
  for (std::size_t h = 0; h < H; ++h) {
    std::vector<double> z;
    for (auto i : members[h]) z.push_back(informative_area_size(pop.u(static_cast<Eigen::Index>(i)), sigma_u));
    const auto k = static_cast<std::size_t>(design.areas_selected[h]);
    const auto pi = pps_inclusion_probabilities(z, k);
    Rng rng(key.child({0, h}));
    for (auto m : systematic_pps(z, k, rng)) {
      const auto i = members[h][m];
      area_pi[i] = pi[m];
      Rng ur(key.child({1, i}));
      const auto N = pop.x[i].rows();
      const Eigen::VectorXd resid = pop.y[i] - pop.x[i] * beta;
      std::vector<double> zu(static_cast<std::size_t>(N));
      for (Eigen::Index j = 0; j < N; ++j)
        zu[static_cast<std::size_t>(j)] = informative_unit_size(resid(j), sigma_e, ur.normal());
      const auto n = static_cast<std::size_t>(design.unit_sizes[h]);
      unit_pi[i] = pps_inclusion_probabilities(zu, n);
      for (auto j : systematic_pps(zu, n, ur)) selected[i].push_back(static_cast<Eigen::Index>(j));
    }
  }
  return make_sample(pop, selected, &unit_pi, &area_pi);
}

}  // namespace ebpmse
