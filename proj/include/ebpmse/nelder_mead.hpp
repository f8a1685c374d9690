#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include <Eigen/Dense>

namespace ebpmse {

struct NelderMeadOptions {
  int max_iterations = 500;
  // Stop when the spread of objective values across the simplex, relative to
  // the best value, falls below this.
  double relative_tolerance = 1e-10;
  double absolute_tolerance = 1e-14;
  double initial_step = 0.5;
};

struct NelderMeadResult {
  Eigen::VectorXd x;
  double value = 0.0;
  int iterations = 0;
  bool converged = false;
};

// Minimizes f with the standard Nelder-Mead simplex (reflection 1,
// expansion 2, contraction 0.5, shrink 0.5).
template <class F>
NelderMeadResult nelder_mead(F&& f, const Eigen::VectorXd& start,
                             const NelderMeadOptions& opt = {}) {
  const auto k = start.size();
  std::vector<Eigen::VectorXd> pts(k + 1, start);
  std::vector<double> vals(k + 1);
  for (Eigen::Index i = 0; i < k; ++i) pts[i + 1](i) += opt.initial_step;
  for (Eigen::Index i = 0; i <= k; ++i) vals[i] = f(pts[i]);

  std::vector<std::size_t> order(k + 1);
  NelderMeadResult res;
  for (int it = 0;; ++it) {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](auto a, auto b) { return vals[a] < vals[b]; });
    const auto best = order.front();
    const auto worst = order.back();
    const auto second = order[k - 1];
    const double spread = vals[worst] - vals[best];
    if (spread <= opt.relative_tolerance * std::abs(vals[best]) + opt.absolute_tolerance) {
      res.converged = true;
      res.iterations = it;
      break;
    }
    if (it >= opt.max_iterations) {
      res.iterations = it;
      break;
    }

    Eigen::VectorXd centroid = Eigen::VectorXd::Zero(k);
    for (auto idx : order)
      if (idx != worst) centroid += pts[idx];
    centroid /= static_cast<double>(k);

    const Eigen::VectorXd reflected = centroid + (centroid - pts[worst]);
    const double fr = f(reflected);
    if (fr < vals[best]) {
      const Eigen::VectorXd expanded = centroid + 2.0 * (centroid - pts[worst]);
      const double fe = f(expanded);
      if (fe < fr) {
        pts[worst] = expanded;
        vals[worst] = fe;
      } else {
        pts[worst] = reflected;
        vals[worst] = fr;
      }
      continue;
    }
    if (fr < vals[second]) {
      pts[worst] = reflected;
      vals[worst] = fr;
      continue;
    }
    const bool outside = fr < vals[worst];
    const Eigen::VectorXd contracted =
        outside ? Eigen::VectorXd(centroid + 0.5 * (reflected - centroid))
                : Eigen::VectorXd(centroid + 0.5 * (pts[worst] - centroid));
    const double fc = f(contracted);
    if (fc < (outside ? fr : vals[worst])) {
      pts[worst] = contracted;
      vals[worst] = fc;
      continue;
    }
    for (auto idx : order) {
      if (idx == best) continue;
      pts[idx] = pts[best] + 0.5 * (pts[idx] - pts[best]);
      vals[idx] = f(pts[idx]);
    }
  }
  const auto best = *std::min_element(order.begin(), order.end(),
                                      [&](auto a, auto b) { return vals[a] < vals[b]; });
  res.x = pts[best];
  res.value = vals[best];
  return res;
}

}  // namespace ebpmse
