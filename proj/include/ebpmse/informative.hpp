#pragma once

#include <algorithm>
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
#include "ebpmse/error.hpp"
#include "ebpmse/mse.hpp"
#include "ebpmse/nelder_mead.hpp"
#include "ebpmse/ner_model.hpp"
#include "ebpmse/parallel.hpp"
#include "ebpmse/rng.hpp"

namespace ebpmse {

// E[w_ij | y, x, selected] = kappa_i exp(x'gamma1 + gamma2 y + (x'gamma3) y).
struct WeightModelParams {
  Eigen::VectorXd gamma1;     // length p, zero for columns constant over the sample
  double gamma2 = 0.0;
  Eigen::VectorXd gamma3;     // length p, or empty without the interaction
  Eigen::VectorXd log_kappa;  // one per dataset area, NaN for areas without a sample

  bool interaction() const noexcept { return gamma3.size() > 0; }
};

// log w_i | u_i ~ N(lambda0 + lambda1 u_i, tau2) for sampled areas.
struct AreaWeightParams {
  double lambda0 = 0.0;
  double lambda1 = 0.0;
  double tau2 = 1.0;
};

struct ModelParams {
  NerParams ner;
  WeightModelParams weight;
  std::optional<AreaWeightParams> area_weight;
};

inline constexpr double kTau2Floor = 1e-10;

namespace detail {

// Columns of x that vary over the sampled units of the included areas.
inline std::vector<Eigen::Index> varying_columns(const SampleDataset& data,
                                                 const std::vector<char>& include) {
  std::vector<Eigen::Index> cols;
  for (Eigen::Index c = 0; c < data.p(); ++c) {
    std::optional<double> first;
    bool varies = false;
    for (std::size_t i = 0; i < data.size() && !varies; ++i) {
      const auto& a = data.area(i);
      if (!include[i]) continue;
      for (Eigen::Index j = 0; j < a.n(); ++j) {
        if (!first) first = a.x(j, c);
        if (a.x(j, c) != *first) {
          varies = true;
          break;
        }
      }
    }
    if (varies) cols.push_back(c);
  }
  return cols;
}

inline std::vector<char> sampled_mask(const SampleDataset& data) {
  std::vector<char> m(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) m[i] = data.area(i).sampled;
  return m;
}

// Least squares for log w with area fixed effects, by within-area demeaning.
// Means are taken relative to each area's first row so that an area with
// constant rows demeans to exact zeros.
inline WeightModelParams fit_weight_model(const SampleDataset& data, const std::vector<char>& include,
                                          const std::vector<Eigen::Index>& cols, bool interaction) {
  const auto q = static_cast<Eigen::Index>(cols.size());
  const Eigen::Index k = q + 1 + (interaction ? q : 0);
  Eigen::Index rows = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (!include[i]) continue;
    const auto& a = data.area(i);
    if (!a.has_unit_weights())
      throw ValidationError("weight model: area " + std::to_string(a.id) + " lacks unit weights");
    if ((a.w.array() <= 0.0).any())
      throw ValidationError("weight model: nonpositive unit weight in area " + std::to_string(a.id));
    rows += a.n();
  }
  auto regressors = [&](const Area& a, Eigen::Index j, Eigen::Ref<Eigen::RowVectorXd> z) {
    for (Eigen::Index c = 0; c < q; ++c) z(c) = a.x(j, cols[c]);
    z(q) = a.y(j);
    if (interaction)
      for (Eigen::Index c = 0; c < q; ++c) z(q + 1 + c) = a.x(j, cols[c]) * a.y(j);
  };

  Eigen::MatrixXd Z(rows, k);
  Eigen::VectorXd r(rows);
  std::vector<Eigen::RowVectorXd> zbar(data.size());
  std::vector<double> lbar(data.size(), 0.0);
  Eigen::RowVectorXd z0(k), z(k);
  Eigen::Index row = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (!include[i]) continue;
    const auto& a = data.area(i);
    const auto n = a.n();
    regressors(a, 0, z0);
    const double l0 = std::log(a.w(0));
    Eigen::RowVectorXd zs = Eigen::RowVectorXd::Zero(k);
    double ls = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
      regressors(a, j, z);
      Z.row(row + j) = z - z0;
      r(row + j) = std::log(a.w(j)) - l0;
      zs += Z.row(row + j);
      ls += r(row + j);
    }
    zs /= static_cast<double>(n);
    ls /= static_cast<double>(n);
    for (Eigen::Index j = 0; j < n; ++j) {
      Z.row(row + j) -= zs;
      r(row + j) -= ls;
    }
    zbar[i] = z0 + zs;
    lbar[i] = l0 + ls;
    row += n;
  }

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Z);
  qr.setThreshold(1e-10);
  if (qr.rank() < k) throw EstimationError("weight model: collinear regressors");
  const Eigen::VectorXd coef = qr.solve(r);

  // Smearing factor: E[exp(error)] pooled over all units, so that kappa
  // targets the mean weight rather than the mean log weight.
  const Eigen::VectorXd resid = r - Z * coef;
  const double smear = std::log(resid.array().exp().mean());

  WeightModelParams out;
  const auto p = data.p();
  out.gamma1 = Eigen::VectorXd::Zero(p);
  for (Eigen::Index c = 0; c < q; ++c) out.gamma1(cols[c]) = coef(c);
  out.gamma2 = coef(q);
  if (interaction) {
    out.gamma3 = Eigen::VectorXd::Zero(p);
    for (Eigen::Index c = 0; c < q; ++c) out.gamma3(cols[c]) = coef(q + 1 + c);
  }
  out.log_kappa = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(data.size()),
                                            std::numeric_limits<double>::quiet_NaN());
  for (std::size_t i = 0; i < data.size(); ++i)
    if (include[i]) out.log_kappa(static_cast<Eigen::Index>(i)) = lbar[i] - zbar[i].dot(coef) + smear;
  return out;
}

// Marginal likelihood of log area weights: lw_k ~ N(l0 + l1 u_k, l1^2 v2_k + tau2).
// lambda0 is profiled out in closed form.
struct AreaWeightObjective {
  std::vector<double> lw, u, v2;

  std::pair<double, double> eval(double l1, double tau2) const {
    double sw = 0.0, sr = 0.0;
    for (std::size_t k = 0; k < lw.size(); ++k) {
      const double s2 = l1 * l1 * v2[k] + tau2;
      sw += 1.0 / s2;
      sr += (lw[k] - l1 * u[k]) / s2;
    }
    const double l0 = sr / sw;
    double nll = 0.0;
    for (std::size_t k = 0; k < lw.size(); ++k) {
      const double s2 = l1 * l1 * v2[k] + tau2;
      const double e = lw[k] - l0 - l1 * u[k];
      nll += 0.5 * (std::log(s2) + e * e / s2);
    }
    return {nll, l0};
  }
};

inline double mean_rel(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x - v.front();
  return v.front() + s / static_cast<double>(v.size());
}

inline AreaWeightParams fit_area_weight(const AreaWeightObjective& obj) {
  const auto m = obj.lw.size();
  if (m < 3) throw ValidationError("area weight model: need at least 3 sampled areas with weights");
  const double lbar = mean_rel(obj.lw), ubar = mean_rel(obj.u);
  double sll = 0.0, suu = 0.0, slu = 0.0;
  for (std::size_t k = 0; k < m; ++k) {
    sll += (obj.lw[k] - lbar) * (obj.lw[k] - lbar);
    suu += (obj.u[k] - ubar) * (obj.u[k] - ubar);
    slu += (obj.lw[k] - lbar) * (obj.u[k] - ubar);
  }
  // lambda1 = 0 has a closed form and is the only candidate when u carries
  // no information.
  AreaWeightParams best{lbar, 0.0, std::max(sll / static_cast<double>(m), kTau2Floor)};
  double best_nll = obj.eval(0.0, best.tau2).first;
  if (!(suu > 0.0)) return best;

  const double log_floor = std::log(kTau2Floor);
  auto f = [&](const Eigen::VectorXd& t) {
    return obj.eval(t(0), std::exp(std::max(t(1), log_floor))).first;
  };
  const double l1 = slu / suu;
  const double t0 = std::max((sll - l1 * slu) / static_cast<double>(m), kTau2Floor);
  Eigen::VectorXd start(2);
  start << l1, std::log(t0);
  NelderMeadOptions opt;
  opt.max_iterations = 2000;
  opt.initial_step = 0.25;
  auto res = nelder_mead(f, start, opt);
  for (int restart = 0; restart < 3; ++restart) {
    opt.initial_step *= 0.2;
    auto again = nelder_mead(f, res.x, opt);
    const bool improved = again.value < res.value - 1e-12 * (1.0 + std::abs(res.value));
    res = std::move(again);
    if (!improved) break;
  }
  if (res.value < best_nll) {
    const double tau2 = std::exp(std::max(res.x(1), log_floor));
    best = {obj.eval(res.x(0), tau2).second, res.x(0), tau2};
    best_nll = res.value;
  }
  return best;
}

inline AreaWeightObjective area_weight_objective(const SampleDataset& data, const FittedNer& fit,
                                                 std::optional<std::size_t> skip = std::nullopt) {
  AreaWeightObjective obj;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& a = data.area(i);
    if (!a.sampled || (skip && *skip == i)) continue;
    if (!a.weight)
      throw ValidationError("area weight model: sampled area " + std::to_string(a.id) +
                            " has no area weight");
    if (!(*a.weight > 0.0))
      throw ValidationError("area weight model: nonpositive weight for area " + std::to_string(a.id));
    obj.lw.push_back(std::log(*a.weight));
    obj.u.push_back(fit.u_hat(static_cast<Eigen::Index>(i)));
    obj.v2.push_back(fit.v2_hat(static_cast<Eigen::Index>(i)));
  }
  return obj;
}

}  // namespace detail

inline WeightModelParams fit_weight_model(const SampleDataset& data, bool interaction = false) {
  const auto include = detail::sampled_mask(data);
  return detail::fit_weight_model(data, include, detail::varying_columns(data, include), interaction);
}

inline AreaWeightParams fit_area_weight_model(const SampleDataset& data, const FittedNer& fit) {
  return detail::fit_area_weight(detail::area_weight_objective(data, fit));
}

struct InformativeFit {
  FittedNer ner;
  ModelParams params;
};

// Fits all model pieces. The area weight model is fitted only when the data
// carry area weights and some area has no sample.
inline InformativeFit fit_informative(const SampleDataset& data, bool interaction = false,
                                      const FitOptions& opt = {}) {
  InformativeFit out;
  out.ner = fit_ml(data, opt);
  out.params.ner = out.ner.params;
  out.params.weight = fit_weight_model(data, interaction);
  bool any_nonsampled = false, any_weight = false;
  for (const auto& a : data.areas()) {
    any_nonsampled |= !a.sampled;
    any_weight |= a.sampled && a.weight.has_value();
  }
  if (any_nonsampled && any_weight) out.params.area_weight = fit_area_weight_model(data, out.ner);
  return out;
}

// ---------------------------------------------------------------------------
// Parameter vector layout: psi_s = (beta, sigma2_u, sigma2_e, gamma1, gamma2,
// gamma3) and psi_ns = (lambda0, lambda1, tau2). kappa is held fixed.

inline Eigen::VectorXd psi_s_vector(const ModelParams& m) {
  const auto p = m.ner.beta.size();
  const auto q = m.weight.gamma1.size();
  const auto r = m.weight.gamma3.size();
  Eigen::VectorXd v(p + 2 + q + 1 + r);
  v << m.ner.beta, m.ner.sigma2_u, m.ner.sigma2_e, m.weight.gamma1, m.weight.gamma2, m.weight.gamma3;
  return v;
}

inline Eigen::VectorXd psi_ns_vector(const ModelParams& m) {
  if (!m.area_weight) return {};
  return Eigen::Vector3d(m.area_weight->lambda0, m.area_weight->lambda1, m.area_weight->tau2);
}

inline Eigen::VectorXd psi_vector(const ModelParams& m) {
  const auto s = psi_s_vector(m);
  const auto ns = psi_ns_vector(m);
  Eigen::VectorXd v(s.size() + ns.size());
  v << s, ns;
  return v;
}

// Positions of the variance components (log scale in the bootstrap).
inline std::vector<Eigen::Index> positive_positions(const ModelParams& m) {
  const auto p = m.ner.beta.size();
  std::vector<Eigen::Index> pos{p, p + 1};
  if (m.area_weight) pos.push_back(psi_s_vector(m).size() + 2);
  return pos;
}

inline ModelParams with_psi_vector(const ModelParams& like, const Eigen::VectorXd& v) {
  ModelParams m = like;
  const auto p = like.ner.beta.size();
  const auto q = like.weight.gamma1.size();
  const auto r = like.weight.gamma3.size();
  if (v.size() != psi_vector(like).size()) throw ValidationError("parameter vector has wrong length");
  m.ner.beta = v.head(p);
  m.ner.sigma2_u = v(p);
  m.ner.sigma2_e = v(p + 1);
  m.weight.gamma1 = v.segment(p + 2, q);
  m.weight.gamma2 = v(p + 2 + q);
  m.weight.gamma3 = v.segment(p + 3 + q, r);
  if (m.area_weight) {
    const auto o = p + 3 + q + r;
    m.area_weight = AreaWeightParams{v(o), v(o + 1), v(o + 2)};
  }
  return m;
}

// g(psi): logs of the variance components, identity elsewhere.
inline Eigen::VectorXd transform_psi(const ModelParams& m) {
  Eigen::VectorXd g = psi_vector(m);
  for (auto k : positive_positions(m)) g(k) = std::log(g(k));
  return g;
}

inline ModelParams inverse_transform_psi(const ModelParams& like, const Eigen::VectorXd& g) {
  Eigen::VectorXd v = g;
  for (auto k : positive_positions(like)) v(k) = std::exp(v(k));
  return with_psi_vector(like, v);
}

// ---------------------------------------------------------------------------
// Leave-one-area-out jackknife.

struct JackknifeCov {
  Eigen::MatrixXd v_s;
  Eigen::MatrixXd v_ns;
  Eigen::VectorXd jacobian_diag;  // d g / d psi at the full-sample estimate
  int d = 0;

  Eigen::MatrixXd full() const {
    Eigen::MatrixXd v = Eigen::MatrixXd::Zero(v_s.rows() + v_ns.rows(), v_s.cols() + v_ns.cols());
    v.topLeftCorner(v_s.rows(), v_s.cols()) = v_s;
    v.bottomRightCorner(v_ns.rows(), v_ns.cols()) = v_ns;
    return v;
  }
};

namespace detail {

// (d-1)/d times the centered sum of outer products. The mean is taken
// relative to the first estimate, so identical estimates give exact zeros.
inline Eigen::MatrixXd jackknife_spread(const std::vector<Eigen::VectorXd>& est) {
  const auto d = static_cast<double>(est.size());
  const auto k = est.front().size();
  Eigen::VectorXd shift = Eigen::VectorXd::Zero(k);
  for (const auto& e : est) shift += e - est.front();
  shift /= d;
  Eigen::MatrixXd v = Eigen::MatrixXd::Zero(k, k);
  for (const auto& e : est) {
    const Eigen::VectorXd c = (e - est.front()) - shift;
    v.noalias() += c * c.transpose();
  }
  v *= (d - 1.0) / d;
  return 0.5 * (v + v.transpose());
}

}  // namespace detail

inline Eigen::VectorXd jacobian_diag(const ModelParams& m) {
  const Eigen::VectorXd v = psi_vector(m);
  Eigen::VectorXd j = Eigen::VectorXd::Ones(v.size());
  // A variance component estimated at exactly zero is held at zero.
  for (auto k : positive_positions(m)) j(k) = v(k) > 0.0 ? 1.0 / v(k) : 0.0;
  return j;
}

inline JackknifeCov jackknife_cov(const SampleDataset& data, const InformativeFit& fit,
                                  unsigned threads = 0) {
  const auto sampled = data.sampled_indices();
  const auto d = sampled.size();
  if (d < 3) throw ValidationError("jackknife: need at least 3 sampled areas");
  const auto all_stats = suff_stats(data);
  const auto all_mask = detail::sampled_mask(data);
  const auto cols = detail::varying_columns(data, all_mask);
  const bool interaction = fit.params.weight.interaction();
  const bool with_ns = fit.params.area_weight.has_value();

  std::vector<Eigen::VectorXd> est_s(d), est_ns(d);
  std::vector<char> failed(d, 0);
  parallel_for(d, threads, [&](std::size_t t) {
    try {
      std::vector<AreaSuffStats> st;
      st.reserve(d - 1);
      for (std::size_t k = 0; k < d; ++k)
        if (k != t) st.push_back(all_stats[k]);
      ModelParams m = fit.params;
      m.ner = fit_ml_stats(st).params;
      auto mask = all_mask;
      mask[sampled[t]] = 0;
      m.weight = detail::fit_weight_model(data, mask, cols, interaction);
      est_s[t] = psi_s_vector(m);
      if (with_ns)
        est_ns[t] = psi_ns_vector(
            {m.ner, m.weight,
             detail::fit_area_weight(detail::area_weight_objective(data, fit.ner, sampled[t]))});
    } catch (const std::exception&) {
      failed[t] = 1;
    }
  });
  std::string bad;
  for (std::size_t t = 0; t < d; ++t)
    if (failed[t]) bad += (bad.empty() ? "" : ", ") + std::to_string(data.area(sampled[t]).id);
  if (!bad.empty()) throw EstimationError("jackknife: leave-one-out refit failed for areas " + bad);

  JackknifeCov out;
  out.d = static_cast<int>(d);
  out.v_s = detail::jackknife_spread(est_s);
  out.v_ns = with_ns ? detail::jackknife_spread(est_ns) : Eigen::MatrixXd(0, 0);
  out.jacobian_diag = jacobian_diag(fit.params);
  return out;
}

// Draws psi^(b) from N(g(psi_hat), J V J') on the transformed scale and maps
// back. Positive components are returned as psi_hat * exp(delta), which is
// exp(log psi_hat + delta) written so that delta = 0 returns psi_hat exactly.
inline std::vector<ModelParams> param_bootstrap_draws(const ModelParams& psi_hat,
                                                      const JackknifeCov& cov, int B,
                                                      std::uint64_t seed) {
  if (B < 1) throw ValidationError("param_bootstrap_draws: B must be positive");
  const Eigen::VectorXd psi = psi_vector(psi_hat);
  const Eigen::MatrixXd v = cov.full();
  if (v.rows() != psi.size() || cov.jacobian_diag.size() != psi.size())
    throw ValidationError("param_bootstrap_draws: covariance does not match the parameter vector");
  const Eigen::VectorXd& j = cov.jacobian_diag;
  const Eigen::MatrixXd c = j.asDiagonal() * v * j.asDiagonal();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (c + c.transpose()));
  const Eigen::MatrixXd root =
      eig.eigenvectors() * eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
  const auto positive = positive_positions(psi_hat);

  std::vector<ModelParams> out;
  out.reserve(static_cast<std::size_t>(B));
  const StreamKey key = StreamKey(seed).child(Stream::kParameterDraws);
  Eigen::VectorXd z(psi.size());
  for (int b = 0; b < B; ++b) {
    Rng rng(key.child(static_cast<std::uint64_t>(b)));
    for (Eigen::Index k = 0; k < z.size(); ++k) z(k) = rng.normal();
    const Eigen::VectorXd delta = root * z;
    Eigen::VectorXd draw = psi + delta;
    for (auto k : positive) draw(k) = psi(k) * std::exp(delta(k));
    out.push_back(with_psi_vector(psi_hat, draw));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Draws from the population distribution of nonsampled units.

enum class SirMethod {
  kPool,   // sampling importance resampling from a candidate pool
  kExact,  // exact draws from the tilted normal target by rejection
};

struct SirOptions {
  SirMethod method = SirMethod::kPool;
  int pool_size = 100;
  int max_attempts = 10000;  // rejection attempts before falling back (kExact)
};

// Index picked with probability proportional to w, or w.size() when every
// weight is zero.
inline std::size_t sir_select(std::span<const double> w, double u) {
  double total = 0.0;
  for (double x : w) total += x;
  if (!(total > 0.0)) return w.size();
  const double target = u * total;
  double cum = 0.0;
  for (std::size_t k = 0; k < w.size(); ++k) {
    cum += w[k];
    if (target < cum) return k;
  }
  for (std::size_t k = w.size(); k-- > 0;)
    if (w[k] > 0.0) return k;
  return w.size();
}

class InformativeGenerator {
 public:
  // `log_kappa` is used for sampled areas only.
  InformativeGenerator(const ModelParams& par, const Area& a, double log_kappa, const SirOptions& opt)
      : area_(&a), opt_(opt) {
    if (a.N() == 0) throw MissingPopulationError(a.id);
    if (opt.method == SirMethod::kPool && opt.pool_size < 1)
      throw ValidationError("SIR pool size must be positive");
    const auto first = a.n();
    const auto m = a.N() - first;
    const auto rows = a.x.bottomRows(m);
    mu_ = rows * par.ner.beta;
    sd_ = (par.ner.sigma2_e / a.v.tail(m).array()).sqrt();
    slope_ = Eigen::VectorXd::Constant(m, par.weight.gamma2);
    if (par.weight.interaction()) slope_ += rows * par.weight.gamma3;
    if (a.sampled) {
      if (!std::isfinite(log_kappa))
        throw ValidationError("no weight-model intercept for sampled area " + std::to_string(a.id));
      eta_ = (rows * par.weight.gamma1).array() + log_kappa;
      const auto [um, uv] = conditional_effect(par.ner, a);
      u_mean_ = um;
      u_sd_ = std::sqrt(uv);
    } else {
      if (!par.area_weight)
        throw ValidationError("area " + std::to_string(a.id) +
                              " has no sample and no area weight model is available");
      aw_ = *par.area_weight;
      u_mean_ = 0.0;
      u_sd_ = std::sqrt(par.ner.sigma2_u);
    }
  }

  void draw(Rng& rng, std::span<double> full) const {
    const auto n = area_->n();
    for (Eigen::Index j = 0; j < n; ++j) full[static_cast<std::size_t>(j)] = area_->y(j);
    auto out = full.subspan(static_cast<std::size_t>(n));
    if (area_->sampled) {
      const double b = rng.normal(u_mean_, u_sd_);
      for (Eigen::Index j = 0; j < mu_.size(); ++j)
        out[static_cast<std::size_t>(j)] = complement_unit(rng, j, b);
    } else {
      const double u = area_effect(rng);
      for (Eigen::Index j = 0; j < mu_.size(); ++j)
        out[static_cast<std::size_t>(j)] = tilted_unit(rng, j, u);
    }
  }

  long fallbacks() const noexcept { return fallbacks_; }

 private:
  // y ~ (omega(y) - 1)_+ f_s(y | x, b), with omega = exp(eta + c y).
  double complement_unit(Rng& rng, Eigen::Index j, double b) const {
    const double m = mu_(j) + b, s = sd_(j), c = slope_(j), eta = eta_(j);
    if (opt_.method == SirMethod::kExact) {
      // Propose from f_s tilted by exp(c y); accept with 1 - 1/omega(y).
      const double shifted = m + c * s * s;
      for (int t = 0; t < opt_.max_attempts; ++t) {
        const double y = rng.normal(shifted, s);
        const double lo = eta + c * y;
        if (lo > 0.0 && rng.uniform() < -std::expm1(-lo)) return y;
      }
      ++fallbacks_;
      return rng.normal(m, s);
    }
    pool_.resize(static_cast<std::size_t>(opt_.pool_size));
    weight_.resize(pool_.size());
    for (std::size_t k = 0; k < pool_.size(); ++k) {
      pool_[k] = rng.normal(m, s);
      weight_[k] = std::max(std::expm1(eta + c * pool_[k]), 0.0);
    }
    return pick(rng);
  }

  // y ~ omega(y) f_s(y | x, u) / E[omega | x, u]: a normal shifted by c s^2.
  double tilted_unit(Rng& rng, Eigen::Index j, double u) const {
    const double m = mu_(j) + u, s = sd_(j), c = slope_(j);
    if (opt_.method == SirMethod::kExact) return rng.normal(m + c * s * s, s);
    pool_.resize(static_cast<std::size_t>(opt_.pool_size));
    weight_.resize(pool_.size());
    double top = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < pool_.size(); ++k) {
      pool_[k] = rng.normal(m, s);
      top = std::max(top, c * pool_[k]);
    }
    for (std::size_t k = 0; k < pool_.size(); ++k) weight_[k] = std::exp(c * pool_[k] - top);
    return pick(rng);
  }

  // u ~ (exp(l0 + l1 u + tau2/2) - 1)_+ N(u; 0, sigma2_u).
  double area_effect(Rng& rng) const {
    const double base = aw_.lambda0 + 0.5 * aw_.tau2;
    if (opt_.method == SirMethod::kExact) {
      const double shifted = aw_.lambda1 * u_sd_ * u_sd_;
      for (int t = 0; t < opt_.max_attempts; ++t) {
        const double u = rng.normal(shifted, u_sd_);
        const double lo = base + aw_.lambda1 * u;
        if (lo > 0.0 && rng.uniform() < -std::expm1(-lo)) return u;
      }
      ++fallbacks_;
      return rng.normal(0.0, u_sd_);
    }
    pool_.resize(static_cast<std::size_t>(opt_.pool_size));
    weight_.resize(pool_.size());
    for (std::size_t k = 0; k < pool_.size(); ++k) {
      pool_[k] = rng.normal(0.0, u_sd_);
      weight_[k] = std::max(std::expm1(base + aw_.lambda1 * pool_[k]), 0.0);
    }
    return pick(rng);
  }

  double pick(Rng& rng) const {
    const auto k = sir_select(weight_, rng.uniform());
    if (k == weight_.size()) {
      ++fallbacks_;
      return pool_.front();
    }
    return pool_[k];
  }

  const Area* area_;
  SirOptions opt_;
  Eigen::VectorXd mu_;
  Eigen::ArrayXd sd_;
  Eigen::VectorXd slope_;
  Eigen::ArrayXd eta_;
  AreaWeightParams aw_;
  double u_mean_ = 0.0;
  double u_sd_ = 0.0;
  mutable std::vector<double> pool_, weight_;
  mutable long fallbacks_ = 0;
};

inline InformativeGenerator informative_generator(const ModelParams& par, const SampleDataset& data,
                                                  std::size_t i, const SirOptions& opt) {
  const double lk = data.area(i).sampled && par.weight.log_kappa.size() > static_cast<Eigen::Index>(i)
                        ? par.weight.log_kappa(static_cast<Eigen::Index>(i))
                        : std::numeric_limits<double>::quiet_NaN();
  return InformativeGenerator(par, data.area(i), lk, opt);
}

// One draw of the nonsampled units of a sampled area.
inline Eigen::VectorXd sir_draw_sampled_area(const ModelParams& par, const SampleDataset& data,
                                             AreaId id, const SirOptions& opt, Rng& rng) {
  const auto i = data.index_of(id);
  const auto& a = data.area(i);
  if (!a.sampled) throw ValidationError("area " + std::to_string(id) + " has no sample");
  Eigen::VectorXd full(a.N());
  informative_generator(par, data, i, opt).draw(rng, std::span<double>(full.data(), full.size()));
  return full.tail(a.nonsampled());
}

// One draw of every unit of an area without sample.
inline Eigen::VectorXd sir_draw_nonsampled_area(const ModelParams& par, const SampleDataset& data,
                                                AreaId id, const SirOptions& opt, Rng& rng) {
  const auto i = data.index_of(id);
  const auto& a = data.area(i);
  if (a.sampled) throw ValidationError("area " + std::to_string(id) + " is sampled");
  Eigen::VectorXd full(a.N());
  informative_generator(par, data, i, opt).draw(rng, std::span<double>(full.data(), full.size()));
  return full;
}

// ---------------------------------------------------------------------------
// Prediction and MSE under the informative design.

struct InformativeOptions {
  Eigen::Index L = 500;
  int B = 200;
  std::uint64_t seed = 0;
  SirOptions sir;
  bool common_random_numbers = true;
  bool keep_draws = false;
  unsigned threads = 0;
};

// Base draws and bootstrap replicates of one area, per functional.
struct AreaBootstrap {
  AreaId area_id = 0;
  std::vector<Eigen::VectorXd> base;                    // [k] draws under psi_hat
  std::vector<std::vector<BootstrapReplicate>> reps;    // [k][b]
  long fallbacks = 0;
};

inline Eigen::MatrixXd informative_draws(const ModelParams& par, const SampleDataset& data,
                                         std::size_t i, std::span<const AreaParameter> pars,
                                         Eigen::Index L, const StreamKey& key, const SirOptions& opt,
                                         long* fallbacks = nullptr) {
  const auto gen = informative_generator(par, data, i, opt);
  auto d = draw_functionals(gen, data.area(i).N(), pars, L, key);
  if (fallbacks) *fallbacks += gen.fallbacks();
  return d;
}

inline std::vector<EbpResult> predict_informative(const ModelParams& par, const SampleDataset& data,
                                                  const AreaParameter& fn, Eigen::Index L,
                                                  std::uint64_t seed, const SirOptions& opt = {},
                                                  unsigned threads = 0) {
  if (L < 2) throw ValidationError("predict: L must be at least 2");
  std::vector<EbpResult> out(data.size());
  const std::span<const AreaParameter> pars(&fn, 1);
  parallel_for(data.size(), threads, [&](std::size_t i) {
    const auto id = data.area(i).id;
    const Eigen::VectorXd d = informative_draws(par, data, i, pars, L, ebp_area_key(seed, id), opt).col(0);
    out[i].prediction = summarize_draws(id, fn.name, d);
    out[i].draws = {id, fn.name, d, par.ner, seed};
  });
  return out;
}

// One area: L draws under psi_hat, then L draws under each psi^(b) with the
// original data.
inline AreaBootstrap informative_bootstrap_area(const ModelParams& par,
                                                std::span<const ModelParams> psi_b,
                                                const SampleDataset& data, std::size_t i,
                                                std::span<const AreaParameter> pars,
                                                const InformativeOptions& opt) {
  AreaBootstrap r;
  r.area_id = data.area(i).id;
  const Eigen::MatrixXd base =
      informative_draws(par, data, i, pars, opt.L, ebp_area_key(opt.seed, r.area_id), opt.sir,
                        &r.fallbacks);
  r.base.resize(pars.size());
  r.reps.assign(pars.size(), {});
  for (std::size_t k = 0; k < pars.size(); ++k) r.base[k] = base.col(static_cast<Eigen::Index>(k));
  for (std::size_t b = 0; b < psi_b.size(); ++b) {
    const auto key = ebp_area_key(opt.seed, r.area_id, opt.common_random_numbers ? 0 : b + 1);
    const Eigen::MatrixXd d = informative_draws(psi_b[b], data, i, pars, opt.L, key, opt.sir, &r.fallbacks);
    for (std::size_t k = 0; k < pars.size(); ++k) {
      const auto col = d.col(static_cast<Eigen::Index>(k));
      BootstrapReplicate rep;
      rep.b = static_cast<int>(b);
      rep.psi_hat_b = psi_b[b].ner;
      rep.theta_hat_b = draw_mean(col);
      rep.m1_b = m1_hat(col);
      if (opt.keep_draws) rep.draws = col;
      r.reps[k].push_back(std::move(rep));
    }
  }
  return r;
}

inline void check_bootstrap_sizes(Eigen::Index L, int B) {
  if (L < 2) throw ValidationError("bootstrap: L must be at least 2");
  if (B < 2) throw ValidationError("bootstrap: B must be at least 2");
}

inline std::vector<AreaBootstrap> informative_bootstrap(const ModelParams& par,
                                                        const JackknifeCov& cov,
                                                        const SampleDataset& data,
                                                        std::span<const AreaParameter> pars,
                                                        const InformativeOptions& opt) {
  check_bootstrap_sizes(opt.L, opt.B);
  const auto psi_b = param_bootstrap_draws(par, cov, opt.B, opt.seed);
  std::vector<AreaBootstrap> out(data.size());
  parallel_for(data.size(), opt.threads, [&](std::size_t i) {
    out[i] = informative_bootstrap_area(par, psi_b, data, i, pars, opt);
  });
  return out;
}

inline MseReport mse_report(const AreaBootstrap& ab, std::size_t k, const std::string& name) {
  std::vector<double> tb, mb;
  for (const auto& rep : ab.reps[k]) {
    tb.push_back(rep.theta_hat_b);
    mb.push_back(rep.m1_b);
  }
  return mse_report(ab.area_id, name, draw_mean(ab.base[k]), m1_hat(ab.base[k]), tb, mb);
}

inline std::vector<MseReport> mse_informative(const ModelParams& par, const JackknifeCov& cov,
                                              const SampleDataset& data, const AreaParameter& fn,
                                              const InformativeOptions& opt) {
  const auto boot = informative_bootstrap(par, cov, data, std::span<const AreaParameter>(&fn, 1), opt);
  std::vector<MseReport> out;
  out.reserve(boot.size());
  for (const auto& ab : boot) out.push_back(mse_report(ab, 0, fn.name));
  return out;
}

}  // namespace ebpmse
