#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <set>
#include <vector>

#include "ebpmse/sampling.hpp"

using namespace ebpmse;

TEST(Srs, DistinctSortedIndices) {
  Rng rng(StreamKey(60).child(Stream::kTest));
  for (int t = 0; t < 100; ++t) {
    const auto s = srs_indices(30, 10, rng);
    ASSERT_EQ(s.size(), 10u);
    EXPECT_TRUE(std::is_sorted(s.begin(), s.end()));
    EXPECT_EQ(std::set<Eigen::Index>(s.begin(), s.end()).size(), 10u);
  }
}

TEST(SystematicPps, EqualSizesGiveEqualInclusion) {
  const std::vector<double> sizes(20, 3.0);
  std::vector<int> hits(sizes.size(), 0);
  Rng rng(StreamKey(61).child(Stream::kTest));
  const int runs = 100000;
  for (int r = 0; r < runs; ++r)
    for (auto j : systematic_pps(sizes, 5, rng)) ++hits[j];
  for (int h : hits) EXPECT_NEAR(h / double(runs), 0.25, 0.01);
}

TEST(SystematicPps, InclusionProportionalToSize) {
  Rng rng(StreamKey(62).child(Stream::kTest));
  std::vector<double> sizes(40);
  for (auto& s : sizes) s = 1.0 + 9.0 * rng.uniform();
  const std::size_t k = 6;
  const double total = std::accumulate(sizes.begin(), sizes.end(), 0.0);
  std::vector<int> hits(sizes.size(), 0);
  const int runs = 100000;
  for (int r = 0; r < runs; ++r) {
    const auto sel = systematic_pps(sizes, k, rng);
    ASSERT_EQ(sel.size(), k);
    for (auto j : sel) ++hits[j];
  }
  for (std::size_t j = 0; j < sizes.size(); ++j) {
    const double pi = k * sizes[j] / total;
    EXPECT_NEAR(hits[j] / double(runs) / pi, 1.0, 0.02 + 3.0 * std::sqrt((1 - pi) / (pi * runs)));
  }
}

TEST(SystematicPps, CertaintyUnitAlwaysSelected) {
  const std::vector<double> sizes{1, 1, 50, 1, 1, 1};
  Rng rng(StreamKey(63).child(Stream::kTest));
  for (int r = 0; r < 1000; ++r) {
    const auto sel = systematic_pps(sizes, 3, rng);
    ASSERT_EQ(sel.size(), 3u);
    EXPECT_NE(std::find(sel.begin(), sel.end(), 2u), sel.end());
  }
  const auto pi = pps_inclusion_probabilities(sizes, 3);
  EXPECT_EQ(pi[2], 1.0);
  EXPECT_NEAR(std::accumulate(pi.begin(), pi.end(), 0.0), 3.0, 1e-12);
}

TEST(SystematicPps, RejectsInvalidSizes) {
  Rng rng(1);
  EXPECT_THROW(systematic_pps(std::vector<double>{1, -1, 2}, 1, rng), ValidationError);
  EXPECT_THROW(systematic_pps(std::vector<double>{1, 0, 0}, 2, rng), ValidationError);
}

TEST(InformativeSizes, AreaStage) {
  EXPECT_EQ(informative_area_size(0.0, 0.3), 1000.0);
  EXPECT_EQ(informative_area_size(8 * 0.3, 0.3), 368.0);
  EXPECT_EQ(round_half_even(2.5), 2);
  EXPECT_EQ(round_half_even(3.5), 4);
}

TEST(InformativeSizes, UnitStageDecreasesInResidual) {
  Rng rng(StreamKey(64).child(Stream::kTest));
  const int n = 10000;
  std::vector<double> r(n), z(n);
  for (int j = 0; j < n; ++j) {
    r[j] = rng.normal(0.0, 0.3);
    z[j] = informative_unit_size(r[j], 0.3, rng.normal());
  }
  const double mr = std::accumulate(r.begin(), r.end(), 0.0) / n;
  const double mz = std::accumulate(z.begin(), z.end(), 0.0) / n;
  double cov = 0.0;
  for (int j = 0; j < n; ++j) cov += (r[j] - mr) * (z[j] - mz);
  EXPECT_LT(cov, 0.0);
}
