#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "carbon/core_data.hpp"

namespace carbon {

/// Two-factor model with random-walk coefficients for one stock:
///   R(t)   = alpha(t) + beta_mkt(t) R_mkt(t) + beta_bmg(t) R_bmg(t) + eps(t)
///   s(t)   = s(t-1) + eta(t),  s = (alpha, beta_mkt, beta_bmg)
/// The prior describes the state at the first date of the series.
struct StateSpaceSpec {
  double measurement_var = 2.5e-3;
  Eigen::Vector3d state_var = Eigen::Vector3d::Constant(1e-4);  // alpha, beta_mkt, beta_bmg
  Eigen::Vector3d prior_mean = Eigen::Vector3d(0.0, 1.0, 0.0);
  Eigen::Matrix3d prior_cov = Eigen::Matrix3d::Identity();

  /// Throws ValidationError on negative variances or a prior covariance that
  /// is not symmetric positive semidefinite.
  void validate() const;
};

/// Filtered state path. Rows of `means` are (alpha, beta_mkt, beta_bmg).
struct BetaPath {
  Eigen::MatrixX3d means;
  std::vector<Eigen::Matrix3d> covariances;
  Eigen::VectorXd innovation;      // NaN on missing observations
  Eigen::VectorXd innovation_var;  // NaN on missing observations
  Eigen::VectorXd step_loglik;     // 0 on missing observations
  double loglik = 0.0;

  std::size_t size() const noexcept { return static_cast<std::size_t>(means.rows()); }
};

/// Predict/update recursion with identity transition and observation vector
/// [1, R_mkt(t), R_bmg(t)]. NaN observations give predict-only steps. The
/// covariance update uses the Joseph form.
BetaPath kalman_filter(const Eigen::VectorXd& returns, const Eigen::VectorXd& r_mkt, const Eigen::VectorXd& r_bmg,
                       const StateSpaceSpec& spec);

struct HyperSearchOptions {
  double lower = 1e-10;  // box on each variance
  double upper = 1e-1;
  int max_iterations = 2000;
  double size_tolerance = 1e-4;  // simplex size in log units
  double initial_step = 1.0;     // log units
};

struct HyperparameterFit {
  StateSpaceSpec spec;
  double loglik = 0.0;
  double initial_loglik = 0.0;
  int iterations = 0;
  bool converged = false;  // false: best point found within the iteration budget
};

/// Maximises the prediction-error log-likelihood over the measurement and the
/// three state variances with a Nelder-Mead search in log-variance space.
/// Requires at least 24 observations.
HyperparameterFit estimate_hyperparameters(const Eigen::VectorXd& returns, const Eigen::VectorXd& r_mkt,
                                           const Eigen::VectorXd& r_bmg, const StateSpaceSpec& init,
                                           const HyperSearchOptions& options = {});

struct OlsFit {
  Eigen::Vector3d coefficients;  // alpha, beta_mkt, beta_bmg
  Eigen::Vector3d std_errors;
  double residual_var = 0.0;  // denominator n - 3
  std::size_t observations = 0;
};

/// Constant-coefficient two-factor regression over the non-missing months.
OlsFit static_ols(const Eigen::VectorXd& returns, const Eigen::VectorXd& r_mkt, const Eigen::VectorXd& r_bmg);

struct AssetBetaEstimate {
  std::string asset;
  std::size_t first = 0;  // panel rows covered by `path`: [first, first + path.size())
  BetaPath path;
  StateSpaceSpec spec;
  bool converged = true;
  std::size_t observations = 0;
};

struct PanelEstimationOptions {
  bool estimate_variances = true;
  StateSpaceSpec base;  // prior, and the variances used when not estimating
  HyperSearchOptions search;
  unsigned threads = 0;  // 0: hardware concurrency
};

/// Runs each asset independently over its span from first to last observed
/// month. Results are ordered like panel.assets.
std::vector<AssetBetaEstimate> estimate_panel_betas(const ReturnsPanel& panel, const FactorSeries& factors,
                                                    const PanelEstimationOptions& options);

}  // namespace carbon
