#pragma once

#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace carbon {

/// Two uncorrelated factors (market, brown-minus-green) plus idiosyncratic
/// risk:  Sigma_ij = b_mkt,i b_mkt,j s2_mkt + b_bmg,i b_bmg,j s2_bmg + 1{i=j} s2_i.
struct FactorCovarianceModel {
  Eigen::VectorXd beta_mkt;
  Eigen::VectorXd beta_bmg;
  Eigen::VectorXd idio_var;
  double var_mkt = 0.0;
  double var_bmg = 0.0;

  std::size_t size() const noexcept { return static_cast<std::size_t>(beta_mkt.size()); }
  void validate() const;
};

/// Idiosyncratic variances below this are raised to it during assembly.
inline constexpr double kIdioVarFloor = 1e-8;

/// Dense covariance. Throws when any idiosyncratic variance is <= 0.
Eigen::MatrixXd assemble_covariance(const FactorCovarianceModel& model);

enum class ExclusionRule {
  high_intensity,  // x_i = 0 when CI_i >= CI+
  literal,         // x_i = 0 when CI_i <= CI+ (the inequality as printed)
};

struct PortfolioConstraints {
  bool long_only = true;
  std::optional<double> beta_cap;  // beta_bmg(x) <= cap
  std::optional<double> waci_cap;  // WACI(x) <= cap
  std::optional<double> ci_exclusion;
  ExclusionRule exclusion_rule = ExclusionRule::high_intensity;
  std::optional<Eigen::VectorXd> lower;  // optional per-asset bounds
  std::optional<Eigen::VectorXd> upper;
};

/// Per-asset exposures used by constraints and diagnostics. Empty vectors are
/// allowed when no constraint or diagnostic needs them.
struct AssetExposures {
  Eigen::VectorXd beta_mkt;
  Eigen::VectorXd beta_bmg;
  Eigen::VectorXd carbon_intensity;
};

struct Thresholds {
  double beta_mkt = 0.0;  // infinite when the market term vanishes
  double beta_bmg = 0.0;  // infinite when the carbon term vanishes
};

/// Weights smaller than this do not count toward the support size.
inline constexpr double kSupportTolerance = 1e-8;

struct OptimizedPortfolio {
  Eigen::VectorXd weights;
  double variance = 0.0;
  double beta_bmg = std::numeric_limits<double>::quiet_NaN();
  double beta_mkt = std::numeric_limits<double>::quiet_NaN();
  double waci = std::numeric_limits<double>::quiet_NaN();
  std::size_t support = 0;
  std::vector<std::string> active_constraints;
  std::vector<bool> excluded;
  std::optional<Thresholds> thresholds;
  bool one_factor_fallback = false;
  double kkt_residual = 0.0;
  int iterations = 0;
};

/// Fills variance-independent diagnostics (betas, WACI, support) from
/// exposures; entries with empty exposure vectors stay NaN.
void describe(OptimizedPortfolio& portfolio, const AssetExposures& exposures);

std::size_t support_size(const Eigen::VectorXd& weights);

/// x* = Sigma^{-1} 1 / (1' Sigma^{-1} 1); variance 1 / (1' Sigma^{-1} 1).
OptimizedPortfolio gmv_closed_form(const Eigen::MatrixXd& sigma);

/// One-factor analytic form x_i = s2(x*) / s2_i (1 - b_i / b*).
OptimizedPortfolio gmv_one_factor(const Eigen::VectorXd& beta_mkt, const Eigen::VectorXd& idio_var, double var_mkt);

/// Two-factor analytic form
///   x_i = s2(x*) / s2_i (1 - b_mkt,i / b*_mkt - b_bmg,i / b*_bmg),
/// with the thresholds and s2(x*) solved from the 2x2 factor system. Falls
/// back to the one-factor form (flagged) when the carbon term vanishes.
OptimizedPortfolio gmv_analytic_two_factor(const FactorCovarianceModel& model);

/// Minimum variance under the budget constraint plus any of: long-only,
/// per-asset bounds, carbon-beta cap, WACI cap and carbon-intensity
/// exclusion. Throws InfeasibleError when the constraints admit no portfolio.
OptimizedPortfolio minimum_variance(const Eigen::MatrixXd& sigma, const AssetExposures& exposures,
                                    const PortfolioConstraints& constraints);

/// Same on a factor model; also recovers the thresholds of the analytic form
/// from the solution.
OptimizedPortfolio minimum_variance(const FactorCovarianceModel& model, const Eigen::VectorXd& carbon_intensity,
                                    const PortfolioConstraints& constraints);

/// Least-squares fit of  s2_i x_i / s2(x) - 1 = -(b_mkt,i c_mkt + b_bmg,i c_bmg)
/// over the support; thresholds are 1/c. nullopt when the support is too
/// small to identify both coefficients.
std::optional<Thresholds> recover_thresholds(const FactorCovarianceModel& model, const Eigen::VectorXd& weights,
                                             double variance);

/// Sum of elementwise minima of two long-only portfolios.
double weight_overlap(const Eigen::VectorXd& x, const Eigen::VectorXd& y);

}  // namespace carbon
