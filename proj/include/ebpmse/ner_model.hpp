#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/tools/toms748_solve.hpp>

#include "ebpmse/dataset.hpp"
#include "ebpmse/distributions.hpp"
#include "ebpmse/error.hpp"

namespace ebpmse {

struct NerParams {
  Eigen::VectorXd beta;
  double sigma2_u = 0.0;
  double sigma2_e = 1.0;
};

// Within-area sufficient statistics of one sampled area. Sums are weighted by
// the variance scales v and centered at the weighted means, which keeps the
// likelihood accurate when the between-area signal is small.
struct AreaSuffStats {
  std::size_t area = 0;  // index into the dataset
  double n = 0.0;
  double ntilde = 0.0;  // sum of v
  double sum_log_v = 0.0;
  double ybar = 0.0;
  Eigen::VectorXd xbar;
  Eigen::MatrixXd wxx;
  Eigen::VectorXd wxy;
  double wyy = 0.0;
};

inline AreaSuffStats area_suff_stats(const Area& a, const Eigen::VectorXd& y, std::size_t index) {
  AreaSuffStats s;
  s.area = index;
  const Eigen::Index n = y.size();
  const auto xs = a.x.topRows(n);
  const auto vs = a.v.head(n);
  s.n = static_cast<double>(n);
  s.ntilde = vs.sum();
  s.sum_log_v = vs.array().log().sum();
  s.ybar = vs.dot(y) / s.ntilde;
  s.xbar = xs.transpose() * vs / s.ntilde;
  const Eigen::MatrixXd xc = xs.rowwise() - s.xbar.transpose();
  const Eigen::VectorXd yc = y.array() - s.ybar;
  const Eigen::MatrixXd vxc = xc.array().colwise() * vs.array();
  s.wxx = xc.transpose() * vxc;
  s.wxy = vxc.transpose() * yc;
  s.wyy = (yc.array().square() * vs.array()).sum();
  return s;
}

// Sufficient statistics for the sampled areas listed in `areas` (all sampled
// areas when empty). `y` optionally replaces the observed responses.
inline std::vector<AreaSuffStats> suff_stats(const SampleDataset& data,
                                             std::span<const std::size_t> areas = {},
                                             const std::vector<Eigen::VectorXd>* y = nullptr) {
  std::vector<std::size_t> all;
  if (areas.empty()) {
    all = data.sampled_indices();
    areas = all;
  }
  std::vector<AreaSuffStats> out;
  out.reserve(areas.size());
  for (auto i : areas) {
    const auto& a = data.area(i);
    if (!a.sampled) continue;
    out.push_back(area_suff_stats(a, y ? (*y)[i] : a.y, i));
  }
  return out;
}

namespace detail {

inline double total_n(const std::vector<AreaSuffStats>& st) {
  double n = 0.0;
  for (const auto& s : st) n += s.n;
  return n;
}

// Likelihood profiled over beta and sigma2_e for a fixed variance ratio
// rho = sigma2_u / sigma2_e. Both have closed forms given rho.
struct RatioProfile {
  double rho = 0.0;
  Eigen::VectorXd beta;
  double sigma2_e = 0.0;
  double loglik = -std::numeric_limits<double>::infinity();
  double score = 0.0;  // d loglik / d rho
  bool ok = false;
};

// Evaluates the profile at any rho from pooled within-area sums computed once.
class RatioProfiler {
 public:
  explicit RatioProfiler(const std::vector<AreaSuffStats>& st) {
    const auto p = st.front().xbar.size();
    const auto d = static_cast<Eigen::Index>(st.size());
    wxx_ = Eigen::MatrixXd::Zero(p, p);
    wxy_ = Eigen::VectorXd::Zero(p);
    xbar_.resize(p, d);
    ybar_.resize(d);
    nt_.resize(d);
    for (Eigen::Index k = 0; k < d; ++k) {
      const auto& s = st[static_cast<std::size_t>(k)];
      wxx_ += s.wxx;
      wxy_ += s.wxy;
      wyy_ += s.wyy;
      slv_ += s.sum_log_v;
      n_ += s.n;
      xbar_.col(k) = s.xbar;
      ybar_(k) = s.ybar;
      nt_(k) = s.ntilde;
    }
  }

  RatioProfile operator()(double rho) const {
    RatioProfile pt;
    pt.rho = rho;
    if (!(rho >= 0.0) || !std::isfinite(rho)) return pt;
    const Eigen::ArrayXd a = 1.0 / (1.0 + rho * nt_.array());
    const Eigen::ArrayXd c = nt_.array() * a;
    const Eigen::MatrixXd xtx = wxx_ + xbar_ * c.matrix().asDiagonal() * xbar_.transpose();
    const Eigen::VectorXd xty = wxy_ + xbar_ * (c * ybar_.array()).matrix();
    Eigen::LDLT<Eigen::MatrixXd> ldlt(xtx);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) return pt;
    pt.beta = ldlt.solve(xty);
    const Eigen::ArrayXd rbar = ybar_.array() - (xbar_.transpose() * pt.beta).array();
    const double wrr = std::max(0.0, wyy_ - 2.0 * pt.beta.dot(wxy_) + pt.beta.dot(wxx_ * pt.beta));
    const double quad = wrr + (c * rbar.square()).sum();
    const double logdet = -slv_ - a.log().sum();
    pt.sigma2_e = quad / n_;
    if (!(pt.sigma2_e > 0.0)) return pt;
    pt.loglik = -0.5 * (n_ * std::log(2.0 * std::numbers::pi) + n_ * std::log(pt.sigma2_e) + logdet + n_);
    pt.score = -0.5 * (c - (c * rbar).square() / pt.sigma2_e).sum();
    pt.ok = std::isfinite(pt.loglik);
    return pt;
  }

 private:
  Eigen::MatrixXd wxx_;
  Eigen::VectorXd wxy_;
  double wyy_ = 0.0, slv_ = 0.0, n_ = 0.0;
  Eigen::MatrixXd xbar_;
  Eigen::VectorXd ybar_, nt_;
};

inline RatioProfile profile_ratio(const std::vector<AreaSuffStats>& st, double rho) {
  return RatioProfiler(st)(rho);
}

}  // namespace detail

struct FitOptions {
  // Cap on root-finding iterations after the grid bracket.
  int max_iterations = 500;
  // sigma2_e reported when every residual is exactly zero.
  double degenerate_sigma2_e = 1e-12;
};

struct FittedNer {
  NerParams params;
  double loglik = 0.0;
  int iterations = 0;
  double gradient_norm = 0.0;
  bool boundary = false;    // sigma2_u estimated at 0
  bool degenerate = false;  // zero residual variance, sigma2_e floored
  // Conditional mean and variance of u_i for every area of the dataset the
  // model was fitted on (indexed like data.areas()).
  Eigen::VectorXd u_hat;
  Eigen::VectorXd v2_hat;
};

// Conditional distribution of u_i given the area's sample. Unsampled areas get
// the prior (0, sigma2_u).
inline std::pair<double, double> conditional_effect(const NerParams& par, const Area& a) {
  if (a.n() == 0 || par.sigma2_u == 0.0) return {0.0, par.sigma2_u};
  const auto vs = a.v.head(a.n());
  const double nt = vs.sum();
  const double ybar = vs.dot(a.y) / nt;
  const Eigen::VectorXd xbar = a.x.topRows(a.n()).transpose() * vs / nt;
  const double gamma = par.sigma2_u / (par.sigma2_u + par.sigma2_e / nt);
  return {gamma * (ybar - xbar.dot(par.beta)), par.sigma2_u * (1.0 - gamma)};
}

inline void set_conditional_effects(FittedNer& fit, const SampleDataset& data) {
  fit.u_hat.resize(static_cast<Eigen::Index>(data.size()));
  fit.v2_hat.resize(static_cast<Eigen::Index>(data.size()));
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto [m, v] = conditional_effect(fit.params, data.area(i));
    fit.u_hat(static_cast<Eigen::Index>(i)) = m;
    fit.v2_hat(static_cast<Eigen::Index>(i)) = v;
  }
}

inline std::pair<double, double> conditional_effect(const FittedNer& fit,
                                                    const SampleDataset& data, AreaId id) {
  const auto i = static_cast<Eigen::Index>(data.index_of(id));
  return {fit.u_hat(i), fit.v2_hat(i)};
}

// Gaussian log-likelihood of the sampled data at arbitrary parameters.
inline double ner_loglik(const std::vector<AreaSuffStats>& st, const NerParams& par) {
  double ll = 0.0;
  for (const auto& s : st) {
    const double a = par.sigma2_e / (par.sigma2_e + par.sigma2_u * s.ntilde);
    const double rbar = s.ybar - s.xbar.dot(par.beta);
    const double wrr = std::max(0.0, s.wyy - 2.0 * par.beta.dot(s.wxy) +
                                         par.beta.dot(s.wxx * par.beta));
    ll += -0.5 * (s.n * std::log(2.0 * std::numbers::pi) + s.n * std::log(par.sigma2_e) -
                  s.sum_log_v - std::log(a) + (wrr + s.ntilde * a * rbar * rbar) / par.sigma2_e);
  }
  return ll;
}

inline double ner_loglik(const SampleDataset& data, const NerParams& par) {
  return ner_loglik(suff_stats(data), par);
}

// Maximum likelihood for the nested error model from sufficient statistics.
// beta and sigma2_e are profiled out in closed form given the ratio
// rho = sigma2_u / sigma2_e. A log-spaced grid over rho brackets the best
// point and the analytic score is then solved to full precision inside the
// bracket, so the estimate does not depend on the order of the data.
inline FittedNer fit_ml_stats(const std::vector<AreaSuffStats>& st, const FitOptions& opt = {}) {
  if (st.size() < 2) throw ValidationError("fit_ml: need at least 2 sampled areas");
  const auto p = st.front().xbar.size();
  const double n = detail::total_n(st);
  if (n < static_cast<double>(p) + 2.0)
    throw ValidationError("fit_ml: total sample size must be at least p + 2");
  {
    Eigen::MatrixXd xtx = Eigen::MatrixXd::Zero(p, p);
    for (const auto& s : st) xtx += s.wxx + s.ntilde * s.xbar * s.xbar.transpose();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(xtx);
    const double top = eig.eigenvalues().maxCoeff();
    if (!(top > 0.0) || eig.eigenvalues().minCoeff() <= 1e-12 * top)
      throw EstimationError("fit_ml: singular design matrix");
  }

  FittedNer fit;
  const detail::RatioProfiler profile(st);
  const auto at_zero = profile(0.0);
  double scale = 0.0;
  for (const auto& s : st) scale += s.wyy + s.ntilde * s.ybar * s.ybar;
  if (!at_zero.ok || !(at_zero.sigma2_e > 1e-20 * scale / n)) {
    fit.params = {at_zero.beta, 0.0, opt.degenerate_sigma2_e};
    fit.boundary = fit.degenerate = true;
    fit.loglik = ner_loglik(st, fit.params);
    return fit;
  }

  constexpr double kLogLo = -23.0, kLogHi = 16.0, kStep = 0.5;
  std::vector<detail::RatioProfile> grid{at_zero};
  for (double t = kLogLo; t <= kLogHi + 1e-9; t += kStep) grid.push_back(profile(std::exp(t)));
  std::size_t best = 0;
  for (std::size_t k = 1; k < grid.size(); ++k)
    if (grid[k].ok && grid[k].loglik > grid[best].loglik) best = k;
  fit.iterations = static_cast<int>(grid.size());

  auto finish = [&](const detail::RatioProfile& pt) {
    fit.params = {pt.beta, pt.rho * pt.sigma2_e, pt.sigma2_e};
    fit.loglik = pt.loglik;
    fit.boundary = pt.rho == 0.0;
    fit.gradient_norm = std::abs(pt.score);
    return fit;
  };
  if (best == 0 && at_zero.score <= 0.0) return finish(at_zero);
  if (best + 1 == grid.size())
    throw EstimationError("fit_ml: sigma2_e tends to zero", grid[best].beta,
                          grid[best].rho * grid[best].sigma2_e, grid[best].sigma2_e);

  // The maximum lies between the grid neighbours of the best point.
  const auto& lo = grid[best == 0 ? 0 : best - 1];
  const auto& hi = grid[best == 0 ? 1 : best + 1];
  auto score = [&](double rho) { return profile(rho).score; };
  const double s_lo = score(lo.rho), s_hi = score(hi.rho);
  detail::RatioProfile pt = grid[best];
  if (s_lo > 0.0 && s_hi < 0.0) {
    boost::uintmax_t iters = static_cast<boost::uintmax_t>(std::max(opt.max_iterations, 0));
    const auto root = boost::math::tools::toms748_solve(
        score, lo.rho, hi.rho, s_lo, s_hi, boost::math::tools::eps_tolerance<double>(52), iters);
    fit.iterations += static_cast<int>(iters);
    const double rho = 0.5 * (root.first + root.second);
    auto cand = profile(rho);
    if (!cand.ok || iters >= static_cast<boost::uintmax_t>(opt.max_iterations))
      throw EstimationError("fit_ml: no convergence after " + std::to_string(iters) + " iterations",
                            cand.ok ? cand.beta : pt.beta, rho * pt.sigma2_e, pt.sigma2_e);
    if (cand.loglik >= pt.loglik) pt = cand;
  } else if (!(s_lo >= 0.0 && s_hi <= 0.0)) {
    throw EstimationError("fit_ml: score does not bracket the maximum", pt.beta,
                          pt.rho * pt.sigma2_e, pt.sigma2_e);
  }
  // The boundary wins ties: sigma2_u = 0 whenever it is at least as likely.
  if (at_zero.score <= 0.0 && at_zero.loglik >= pt.loglik) return finish(at_zero);
  return finish(pt);
}

inline FittedNer fit_ml(const SampleDataset& data, const FitOptions& opt = {}) {
  auto fit = fit_ml_stats(suff_stats(data), opt);
  set_conditional_effects(fit, data);
  return fit;
}

// Probability integral transform residuals of the sampled units, one vector
// per area (empty for unsampled areas).
inline std::vector<Eigen::VectorXd> generalized_residuals(const FittedNer& fit,
                                                          const SampleDataset& data) {
  std::vector<Eigen::VectorXd> out(data.size());
  const double se = std::sqrt(fit.params.sigma2_e);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& a = data.area(i);
    const double u = conditional_effect(fit.params, a).first;
    out[i].resize(a.n());
    for (Eigen::Index j = 0; j < a.n(); ++j) {
      const double r = a.y(j) - a.x.row(j).dot(fit.params.beta) - u;
      out[i](j) = normal_cdf(r * std::sqrt(a.v(j)) / se);
    }
  }
  return out;
}

}  // namespace ebpmse
