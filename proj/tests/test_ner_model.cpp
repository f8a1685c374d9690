#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "ebpmse/ner_model.hpp"
#include "ebpmse/population.hpp"
#include "support.hpp"

using namespace ebpmse;

namespace {

Area make_area(AreaId id, const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
  Area a;
  a.id = id;
  a.sampled = y.size() > 0;
  a.x = x;
  a.v = Eigen::VectorXd::Ones(x.rows());
  a.y = y;
  for (Eigen::Index j = 0; j < x.rows(); ++j) a.unit_ids.push_back(j + 1);
  return a;
}

// Intercept-only balanced data: closed-form ML of the one-way model.
struct BalancedOracle {
  double mu, s2u, s2e;
};

BalancedOracle balanced_ml(const std::vector<Eigen::VectorXd>& y) {
  const double D = static_cast<double>(y.size());
  const double n = static_cast<double>(y.front().size());
  double grand = 0.0;
  for (const auto& v : y) grand += v.sum();
  grand /= D * n;
  double ssw = 0.0, ssb = 0.0;
  for (const auto& v : y) {
    const double m = v.mean();
    ssw += (v.array() - m).square().sum();
    ssb += n * (m - grand) * (m - grand);
  }
  const double s2e = ssw / (D * (n - 1.0));
  const double s2u = std::max(0.0, (ssb / D - s2e) / n);
  return {grand, s2u, s2u > 0.0 ? s2e : (ssw + ssb) / (D * n)};
}

}  // namespace

TEST(FitMl, BalancedInterceptOnlyMatchesClosedForm) {
  Rng rng(StreamKey(11).child(Stream::kTest));
  for (int t = 0; t < 20; ++t) {
    const int D = 5 + static_cast<int>(rng.index(20));
    const int n = 2 + static_cast<int>(rng.index(8));
    std::vector<Area> areas;
    std::vector<Eigen::VectorXd> ys;
    for (int i = 0; i < D; ++i) {
      const double u = rng.normal(0.0, 0.5);
      Eigen::VectorXd y(n);
      for (auto& v : y) v = 2.0 + u + rng.normal(0.0, 1.0);
      ys.push_back(y);
      areas.push_back(make_area(i + 1, Eigen::MatrixXd::Ones(n, 1), y));
    }
    const auto fit = fit_ml(SampleDataset(areas));
    const auto o = balanced_ml(ys);
    EXPECT_NEAR(fit.params.beta(0), o.mu, 1e-8);
    EXPECT_NEAR(fit.params.sigma2_u, o.s2u, 1e-8);
    EXPECT_NEAR(fit.params.sigma2_e, o.s2e, 1e-8);
    EXPECT_EQ(fit.boundary, o.s2u == 0.0);
  }
}

TEST(FitMl, AllResponsesEqualIsDegenerate) {
  std::vector<Area> areas;
  for (int i = 0; i < 4; ++i) {
    Eigen::MatrixXd x(3, 2);
    x << 1, 0.1 * i, 1, 0.5, 1, 0.9;
    areas.push_back(make_area(i + 1, x, Eigen::VectorXd::Constant(3, 4.2)));
  }
  const auto fit = fit_ml(SampleDataset(areas));
  EXPECT_TRUE(fit.degenerate);
  EXPECT_EQ(fit.params.sigma2_u, 0.0);
  EXPECT_NEAR(fit.params.beta(0), 4.2, 1e-12);
  EXPECT_NEAR(fit.params.beta(1), 0.0, 1e-12);
  EXPECT_LE(fit.params.sigma2_e, 1e-12);
  EXPECT_GT(fit.params.sigma2_e, 0.0);
}

TEST(FitMl, RecoversSimulationTruth) {
  const int reps = 200;
  Eigen::MatrixXd est(reps, 4);
  for (int r = 0; r < reps; ++r) {
    const auto data = testing_support::simulate_dataset(100, 10, 10, 0.3, 0.3, 500 + r);
    const auto fit = fit_ml(data);
    est.row(r) << fit.params.beta(0), fit.params.beta(1), fit.params.sigma2_u, fit.params.sigma2_e;
  }
  const Eigen::Vector4d truth(5.0, 0.1, 0.09, 0.09);
  const Eigen::RowVectorXd mean = est.colwise().mean();
  for (int k = 0; k < 4; ++k) {
    const double sd = std::sqrt((est.col(k).array() - mean(k)).square().sum() / (reps - 1));
    EXPECT_LT(std::abs(mean(k) - truth(k)), 3.0 * sd / std::sqrt(double(reps))) << "component " << k;
  }
}

TEST(FitMl, LocalMaximum) {
  const auto data = testing_support::simulate_dataset(30, 6, 6, 0.3, 0.3, 77);
  const auto fit = fit_ml(data);
  const auto st = suff_stats(data);
  const double best = ner_loglik(st, fit.params);
  EXPECT_NEAR(best, fit.loglik, 1e-9 * std::abs(best));
  Rng rng(StreamKey(12).child(Stream::kTest));
  for (int t = 0; t < 50; ++t) {
    NerParams q = fit.params;
    for (auto& b : q.beta) b += rng.normal(0.0, 1e-3);
    q.sigma2_u *= std::exp(rng.normal(0.0, 1e-2));
    q.sigma2_e *= std::exp(rng.normal(0.0, 1e-2));
    EXPECT_LE(ner_loglik(st, q), best);
  }
}

TEST(FitMl, PermutationInvariant) {
  const auto data = testing_support::simulate_dataset(40, 7, 7, 0.3, 0.3, 78);
  const auto fit = fit_ml(data);
  Rng rng(StreamKey(13).child(Stream::kTest));
  std::vector<Area> areas = data.areas();
  std::shuffle(areas.begin(), areas.end(), rng);
  for (auto& a : areas) {
    std::vector<Eigen::Index> perm(static_cast<std::size_t>(a.n()));
    for (Eigen::Index j = 0; j < a.n(); ++j) perm[static_cast<std::size_t>(j)] = j;
    std::shuffle(perm.begin(), perm.end(), rng);
    Area b = a;
    for (Eigen::Index j = 0; j < a.n(); ++j) {
      const auto src = perm[static_cast<std::size_t>(j)];
      b.x.row(j) = a.x.row(src);
      b.y(j) = a.y(src);
      b.unit_ids[static_cast<std::size_t>(j)] = a.unit_ids[static_cast<std::size_t>(src)];
    }
    a = b;
  }
  const auto refit = fit_ml(SampleDataset(areas));
  EXPECT_NEAR(refit.params.beta(0), fit.params.beta(0), 1e-8);
  EXPECT_NEAR(refit.params.beta(1), fit.params.beta(1), 1e-8);
  EXPECT_NEAR(refit.params.sigma2_u, fit.params.sigma2_u, 1e-8);
  EXPECT_NEAR(refit.params.sigma2_e, fit.params.sigma2_e, 1e-8);
}

TEST(FitMl, WeakBetweenAreaSignalHitsBoundary) {
  // Area means are identical, so the ML estimate of sigma2_u is 0.
  std::vector<Area> areas;
  for (int i = 0; i < 6; ++i) {
    Eigen::VectorXd y(4);
    y << 1.0, 2.0 + 0.01 * i, 3.0, 4.0 - 0.01 * i;
    areas.push_back(make_area(i + 1, Eigen::MatrixXd::Ones(4, 1), y));
  }
  const auto fit = fit_ml(SampleDataset(areas));
  EXPECT_TRUE(fit.boundary);
  EXPECT_EQ(fit.params.sigma2_u, 0.0);
  EXPECT_EQ(fit.v2_hat(0), 0.0);
}

TEST(FitMl, Preconditions) {
  std::vector<Area> one{make_area(1, Eigen::MatrixXd::Ones(5, 1), Eigen::VectorXd::LinSpaced(5, 0, 1))};
  EXPECT_THROW(fit_ml(SampleDataset(one)), ValidationError);

  std::vector<Area> collinear;
  for (int i = 0; i < 3; ++i) {
    Eigen::MatrixXd x(3, 2);
    x << 1, 1, 1, 1, 1, 1;
    collinear.push_back(make_area(i + 1, x, Eigen::VectorXd::LinSpaced(3, i, i + 2)));
  }
  EXPECT_THROW(fit_ml(SampleDataset(collinear)), EstimationError);

  const auto data = testing_support::simulate_dataset(10, 5, 5, 0.3, 0.3, 79);
  FitOptions opt;
  opt.max_iterations = 0;
  try {
    fit_ml(data, opt);
    FAIL() << "expected EstimationError";
  } catch (const EstimationError& e) {
    EXPECT_TRUE(e.has_last_iterate());
    EXPECT_GT(e.last_sigma2_e(), 0.0);
  }
}

TEST(ConditionalEffect, ZeroVarianceGivesZero) {
  Area a = make_area(1, Eigen::MatrixXd::Ones(3, 1), Eigen::Vector3d(1, 2, 3));
  const auto [m, v] = conditional_effect(NerParams{Eigen::VectorXd::Zero(1), 0.0, 1.0}, a);
  EXPECT_EQ(m, 0.0);
  EXPECT_EQ(v, 0.0);
}

TEST(ConditionalEffect, UnsampledAreaGetsPrior) {
  Area a = make_area(1, Eigen::MatrixXd::Ones(3, 1), Eigen::VectorXd());
  const auto [m, v] = conditional_effect(NerParams{Eigen::VectorXd::Zero(1), 0.7, 1.0}, a);
  EXPECT_EQ(m, 0.0);
  EXPECT_EQ(v, 0.7);
}

TEST(ConditionalEffect, LargeAreaApproachesDirectResidual) {
  const Eigen::Index n = 1000000;
  Rng rng(StreamKey(14).child(Stream::kTest));
  Eigen::VectorXd y(n);
  for (auto& v : y) v = 1.5 + rng.normal(0.0, 1.0);
  Area a = make_area(1, Eigen::MatrixXd::Ones(n, 1), y);
  const NerParams par{Eigen::VectorXd::Constant(1, 1.0), 0.09, 0.09};
  const auto [m, v] = conditional_effect(par, a);
  EXPECT_NEAR(m, y.mean() - 1.0, 1e-3);
  EXPECT_LT(v, 1e-6);
}

TEST(ConditionalEffect, SingleUnitMatchesBivariateNormalConditioning) {
  Rng rng(StreamKey(15).child(Stream::kTest));
  for (int t = 0; t < 50; ++t) {
    const double s2u = std::exp(rng.normal()), s2e = std::exp(rng.normal());
    const double xb = rng.normal(), y = rng.normal(xb, 2.0);
    Area a = make_area(1, Eigen::MatrixXd::Ones(1, 1), Eigen::VectorXd::Constant(1, y));
    const auto [m, v] = conditional_effect(NerParams{Eigen::VectorXd::Constant(1, xb), s2u, s2e}, a);
    // (u, y) jointly normal: cov = s2u, var y = s2u + s2e.
    EXPECT_NEAR(m, s2u / (s2u + s2e) * (y - xb), 1e-12);
    EXPECT_NEAR(v, s2u - s2u * s2u / (s2u + s2e), 1e-12);
  }
}

TEST(ConditionalEffect, VarianceBoundedByPrior) {
  const auto data = testing_support::simulate_dataset(20, 4, 30, 0.3, 0.5, 80);
  const auto fit = fit_ml(data);
  for (Eigen::Index i = 0; i < fit.v2_hat.size(); ++i) {
    EXPECT_GE(fit.v2_hat(i), 0.0);
    EXPECT_LE(fit.v2_hat(i), fit.params.sigma2_u);
  }
}

TEST(GeneralizedResiduals, KnownValues) {
  Eigen::MatrixXd x = Eigen::MatrixXd::Ones(2, 1);
  std::vector<Area> areas{make_area(1, x, Eigen::Vector2d(0.0, 0.0)),
                          make_area(2, x, Eigen::Vector2d(1.96, -1.96))};
  FittedNer fit;
  fit.params = {Eigen::VectorXd::Zero(1), 0.0, 1.0};
  const SampleDataset data(areas);
  const auto r = generalized_residuals(fit, data);
  EXPECT_DOUBLE_EQ(r[0](0), 0.5);
  EXPECT_NEAR(r[1](0), 0.975, 1e-4);
  EXPECT_NEAR(r[1](1), 0.025, 1e-4);
}

TEST(GeneralizedResiduals, MonotoneInResponse) {
  auto data = testing_support::simulate_dataset(10, 5, 5, 0.3, 0.3, 81);
  const auto fit = fit_ml(data);
  const double before = generalized_residuals(fit, data)[3](2);
  auto areas = data.areas();
  areas[3].y(2) += 0.05;
  const double after = generalized_residuals(fit, SampleDataset(areas))[3](2);
  EXPECT_GT(after, before);
}

TEST(GeneralizedResiduals, UniformUnderCorrectModel) {
  int passed = 0;
  for (int r = 0; r < 100; ++r) {
    const auto data = testing_support::simulate_dataset(50, 10, 10, 0.3, 0.3, 900 + r);
    const auto res = generalized_residuals(fit_ml(data), data);
    std::vector<double> all;
    for (const auto& v : res) all.insert(all.end(), v.data(), v.data() + v.size());
    std::sort(all.begin(), all.end());
    const double n = static_cast<double>(all.size());
    double ks = 0.0;
    for (std::size_t k = 0; k < all.size(); ++k)
      ks = std::max({ks, (k + 1) / n - all[k], all[k] - k / n});
    passed += ks < 1.628 / std::sqrt(n);
  }
  EXPECT_GE(passed, 95);
}

TEST(SimulatePopulation, TruncationBounds) {
  PopulationConfig cfg;
  cfg.sizes.assign(200, 50);
  const auto pop = simulate_population(cfg, 3, 4);
  for (std::size_t i = 0; i < cfg.sizes.size(); ++i) {
    EXPECT_LE(std::abs(pop.u(static_cast<Eigen::Index>(i))), 2.5 * cfg.sigma_u);
    EXPECT_LE(pop.e[i].cwiseAbs().maxCoeff(), 2.5 * cfg.sigma_e);
    const Eigen::VectorXd lin = pop.x[i] * cfg.beta;
    EXPECT_NEAR((pop.y[i] - lin - pop.e[i]).array().maxCoeff(), pop.u(static_cast<Eigen::Index>(i)), 1e-12);
  }
}

TEST(SimulatePopulation, ZeroAreaVariance) {
  PopulationConfig cfg;
  cfg.sizes.assign(10, 5);
  cfg.sigma_u = 0.0;
  const auto pop = simulate_population(cfg, 5, 6);
  EXPECT_EQ(pop.u.cwiseAbs().maxCoeff(), 0.0);
}

TEST(SimulatePopulation, TruncatedVarianceMatchesAnalyticMoment) {
  PopulationConfig cfg;
  cfg.sizes.assign(100000, 1);
  const auto pop = simulate_population(cfg, 7, 8);
  const double m = pop.u.mean();
  const double var = (pop.u.array() - m).square().sum() / (pop.u.size() - 1);
  const double analytic = 0.09 * truncated_normal_variance(2.5);
  EXPECT_NEAR(var / analytic, 1.0, 0.02);
}

TEST(SimulatePopulation, CovariatesFixedAcrossReplicates) {
  PopulationConfig cfg;
  cfg.sizes.assign(3, 4);
  const auto a = simulate_population(cfg, 1, 99);
  const auto b = simulate_population(cfg, 2, 99);
  EXPECT_EQ(a.x[2], b.x[2]);
  EXPECT_NE(a.y[2], b.y[2]);
}
