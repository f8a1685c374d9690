#pragma once

#include <optional>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace ebpmse {

// Input that violates a documented precondition or file schema.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Population covariates needed for prediction are missing for an area.
class MissingPopulationError : public ValidationError {
 public:
  explicit MissingPopulationError(long long area_id)
      : ValidationError("area " + std::to_string(area_id) +
                        " has no population covariate rows"),
        area_id_(area_id) {}
  long long area_id() const noexcept { return area_id_; }

 private:
  long long area_id_;
};

// Generic numerical failure (exit code 3 in the CLI).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A functional is undefined for the given input (e.g. Gini of all zeros).
class UndefinedValueError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

// Model estimation failed. When the optimizer ran out of iterations the last
// iterate (beta, sigma2_u, sigma2_e) is attached.
class EstimationError : public NumericalError {
 public:
  explicit EstimationError(const std::string& what) : NumericalError(what) {}
  EstimationError(const std::string& what, Eigen::VectorXd beta, double sigma2_u,
                  double sigma2_e)
      : NumericalError(what),
        last_beta_(std::move(beta)),
        last_sigma2_u_(sigma2_u),
        last_sigma2_e_(sigma2_e) {}

  bool has_last_iterate() const noexcept { return last_beta_.has_value(); }
  const Eigen::VectorXd& last_beta() const { return *last_beta_; }
  double last_sigma2_u() const noexcept { return last_sigma2_u_; }
  double last_sigma2_e() const noexcept { return last_sigma2_e_; }

 private:
  std::optional<Eigen::VectorXd> last_beta_;
  double last_sigma2_u_ = 0.0;
  double last_sigma2_e_ = 0.0;
};

}  // namespace ebpmse
