#include "carbon/mv_optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "carbon/errors.hpp"
#include "carbon/qp.hpp"

namespace carbon {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

Eigen::VectorXd floored(const Eigen::VectorXd& idio) { return idio.cwiseMax(kIdioVarFloor); }

double reciprocal_or_inf(double c) { return c == 0.0 ? kInf : 1.0 / c; }

}  // namespace

void FactorCovarianceModel::validate() const {
  const auto n = beta_mkt.size();
  if (beta_bmg.size() != n || idio_var.size() != n) throw ValidationError("factor model: inconsistent sizes");
  if (n == 0) throw ValidationError("factor model: no assets");
  if (!(var_mkt >= 0.0) || !(var_bmg >= 0.0)) throw ValidationError("factor model: factor variances must be >= 0");
  if (!beta_mkt.allFinite() || !beta_bmg.allFinite() || !idio_var.allFinite()) {
    throw ValidationError("factor model: non-finite input");
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!(idio_var(i) > 0.0)) {
      throw ValidationError(fmt::format("factor model: idiosyncratic variance of asset {} is {} (must be > 0)", i,
                                        idio_var(i)));
    }
  }
}

Eigen::MatrixXd assemble_covariance(const FactorCovarianceModel& model) {
  model.validate();
  Eigen::MatrixXd sigma = model.var_mkt * model.beta_mkt * model.beta_mkt.transpose() +
                          model.var_bmg * model.beta_bmg * model.beta_bmg.transpose();
  sigma.diagonal() += floored(model.idio_var);
  return sigma;
}

std::size_t support_size(const Eigen::VectorXd& weights) {
  return static_cast<std::size_t>((weights.array() > kSupportTolerance).count());
}

void describe(OptimizedPortfolio& p, const AssetExposures& e) {
  const auto n = p.weights.size();
  if (e.beta_bmg.size() == n) p.beta_bmg = p.weights.dot(e.beta_bmg);
  if (e.beta_mkt.size() == n) p.beta_mkt = p.weights.dot(e.beta_mkt);
  if (e.carbon_intensity.size() == n) p.waci = p.weights.dot(e.carbon_intensity);
  p.support = support_size(p.weights);
}

OptimizedPortfolio gmv_closed_form(const Eigen::MatrixXd& sigma) {
  const auto n = sigma.rows();
  if (n == 0 || sigma.cols() != n) throw ValidationError("gmv_closed_form: covariance must be square and nonempty");
  Eigen::LLT<Eigen::MatrixXd> llt(sigma);
  if (llt.info() != Eigen::Success) throw NumericalError("gmv_closed_form: covariance is not positive definite");
  const Eigen::VectorXd w = llt.solve(Eigen::VectorXd::Ones(n));
  const double total = w.sum();
  if (!(total > 0.0) || !std::isfinite(total)) throw NumericalError("gmv_closed_form: singular covariance");
  OptimizedPortfolio p;
  p.weights = w / total;
  p.variance = 1.0 / total;
  p.support = support_size(p.weights);
  return p;
}

OptimizedPortfolio gmv_one_factor(const Eigen::VectorXd& beta_mkt, const Eigen::VectorXd& idio_var, double var_mkt) {
  if (beta_mkt.size() != idio_var.size() || beta_mkt.size() == 0) throw ValidationError("gmv_one_factor: bad sizes");
  if ((idio_var.array() <= 0.0).any()) throw ValidationError("gmv_one_factor: idiosyncratic variances must be > 0");
  const Eigen::VectorXd psi = floored(idio_var);
  const Eigen::ArrayXd inv = psi.array().inverse();
  const double a = (beta_mkt.array() * inv).sum();
  const double b2 = (beta_mkt.array().square() * inv).sum();
  // Threshold beta* = (1/s2_mkt + sum b^2/s2_i) / (sum b/s2_i).
  const double threshold = a == 0.0 ? kInf : (1.0 / var_mkt + b2) / a;
  const Eigen::ArrayXd slope = 1.0 - beta_mkt.array() / threshold;
  const double variance = 1.0 / (slope * inv).sum();
  OptimizedPortfolio p;
  p.weights = (variance * slope * inv).matrix();
  p.variance = variance;
  p.thresholds = Thresholds{threshold, kInf};
  p.support = support_size(p.weights);
  return p;
}

OptimizedPortfolio gmv_analytic_two_factor(const FactorCovarianceModel& model) {
  model.validate();
  if (model.var_bmg == 0.0 || (model.beta_bmg.array() == 0.0).all()) {
    auto p = gmv_one_factor(model.beta_mkt, model.idio_var, model.var_mkt);
    p.one_factor_fallback = true;
    p.beta_mkt = p.weights.dot(model.beta_mkt);
    p.beta_bmg = p.weights.dot(model.beta_bmg);
    return p;
  }
  const auto n = static_cast<Eigen::Index>(model.size());
  const Eigen::VectorXd inv = floored(model.idio_var).cwiseInverse();
  Eigen::MatrixXd B(n, 2);
  B.col(0) = model.beta_mkt;
  B.col(1) = model.beta_bmg;
  const Eigen::Matrix2d D = Eigen::Vector2d(model.var_mkt, model.var_bmg).asDiagonal();
  // Woodbury: Sigma^{-1} 1 = Psi^{-1} (1 - B c) with (I + D B'Psi^{-1}B) c = D B'Psi^{-1} 1.
  const Eigen::Matrix2d M = Eigen::Matrix2d::Identity() + D * (B.transpose() * inv.asDiagonal() * B);
  const Eigen::Vector2d rhs = D * (B.transpose() * inv);
  const Eigen::Vector2d c = M.fullPivLu().solve(rhs);
  const Eigen::VectorXd slope = Eigen::VectorXd::Ones(n) - B * c;
  const double total = slope.dot(inv);
  if (!(total > 0.0) || !std::isfinite(total)) throw NumericalError("gmv_analytic_two_factor: degenerate system");
  OptimizedPortfolio p;
  p.variance = 1.0 / total;
  p.weights = p.variance * slope.cwiseProduct(inv);
  p.thresholds = Thresholds{reciprocal_or_inf(c(0)), reciprocal_or_inf(c(1))};
  p.beta_mkt = p.weights.dot(model.beta_mkt);
  p.beta_bmg = p.weights.dot(model.beta_bmg);
  p.support = support_size(p.weights);
  return p;
}

OptimizedPortfolio minimum_variance(const Eigen::MatrixXd& sigma, const AssetExposures& exposures,
                                    const PortfolioConstraints& constraints) {
  const auto n = sigma.rows();
  if (n == 0 || sigma.cols() != n) throw ValidationError("minimum_variance: covariance must be square and nonempty");
  auto need = [&](const Eigen::VectorXd& v, const char* what) {
    if (v.size() != n) throw ValidationError(fmt::format("minimum_variance: {} required with {} entries", what, n));
    if (!v.allFinite()) throw ValidationError(fmt::format("minimum_variance: {} has non-finite entries", what));
  };
  if (constraints.beta_cap) need(exposures.beta_bmg, "carbon betas");
  if (constraints.waci_cap || constraints.ci_exclusion) need(exposures.carbon_intensity, "carbon intensities");
  for (auto cap : {constraints.beta_cap, constraints.waci_cap, constraints.ci_exclusion}) {
    if (cap && !std::isfinite(*cap)) throw ValidationError("minimum_variance: caps must be finite");
  }
  if ((constraints.lower && constraints.lower->size() != n) || (constraints.upper && constraints.upper->size() != n)) {
    throw ValidationError("minimum_variance: bound vectors have wrong size");
  }

  std::vector<bool> excluded(static_cast<std::size_t>(n), false);
  std::vector<Eigen::Index> eligible;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (constraints.ci_exclusion) {
      const double ci = exposures.carbon_intensity(i);
      const bool out = constraints.exclusion_rule == ExclusionRule::high_intensity ? ci >= *constraints.ci_exclusion
                                                                                   : ci <= *constraints.ci_exclusion;
      excluded[static_cast<std::size_t>(i)] = out;
      if (out) continue;
    }
    eligible.push_back(i);
  }
  if (eligible.empty()) throw InfeasibleError("minimum_variance: the carbon-intensity exclusion removes every asset");
  const auto m = static_cast<Eigen::Index>(eligible.size());

  auto sub = [&](const Eigen::VectorXd& v) {
    Eigen::VectorXd out(m);
    for (Eigen::Index k = 0; k < m; ++k) out(k) = v(eligible[k]);
    return out;
  };

  const bool plain_long_only = constraints.long_only && !constraints.lower && !constraints.upper;
  if (plain_long_only && constraints.beta_cap) {
    const double lowest = sub(exposures.beta_bmg).minCoeff();
    if (lowest > *constraints.beta_cap) {
      throw InfeasibleError(fmt::format(
          "infeasible constraints: carbon beta cap {} is below the smallest eligible carbon beta {}",
          *constraints.beta_cap, lowest));
    }
  }
  if (plain_long_only && constraints.waci_cap) {
    const double lowest = sub(exposures.carbon_intensity).minCoeff();
    if (lowest > *constraints.waci_cap) {
      throw InfeasibleError(
          fmt::format("infeasible constraints: WACI cap {} is below the smallest eligible carbon intensity {}",
                      *constraints.waci_cap, lowest));
    }
  }

  qp::Problem problem;
  problem.hessian.resize(m, m);
  for (Eigen::Index a = 0; a < m; ++a)
    for (Eigen::Index b = 0; b < m; ++b) problem.hessian(a, b) = sigma(eligible[a], eligible[b]);
  problem.linear = Eigen::VectorXd::Zero(m);
  problem.equalities.push_back({Eigen::VectorXd::Ones(m), 1.0, "budget"});
  if (constraints.beta_cap) {
    problem.inequalities.push_back(
        {sub(exposures.beta_bmg), *constraints.beta_cap, fmt::format("carbon beta cap {}", *constraints.beta_cap)});
  }
  if (constraints.waci_cap) {
    problem.inequalities.push_back(
        {sub(exposures.carbon_intensity), *constraints.waci_cap, fmt::format("WACI cap {}", *constraints.waci_cap)});
  }
  if (constraints.long_only || constraints.lower) {
    problem.lower = constraints.lower ? sub(*constraints.lower) : Eigen::VectorXd::Constant(m, -kInf);
    if (constraints.long_only) problem.lower = problem.lower.cwiseMax(0.0);
  }
  if (constraints.upper) problem.upper = sub(*constraints.upper);

  const auto solution = qp::solve(problem);

  OptimizedPortfolio p;
  p.weights = Eigen::VectorXd::Zero(n);
  for (Eigen::Index k = 0; k < m; ++k) p.weights(eligible[k]) = solution.x(k);
  p.variance = p.weights.dot(sigma * p.weights);
  p.excluded = std::move(excluded);
  p.active_constraints = solution.active;
  p.kkt_residual = qp::kkt_residual(problem, solution);
  p.iterations = solution.iterations;
  describe(p, exposures);
  return p;
}

OptimizedPortfolio minimum_variance(const FactorCovarianceModel& model, const Eigen::VectorXd& carbon_intensity,
                                    const PortfolioConstraints& constraints) {
  const Eigen::MatrixXd sigma = assemble_covariance(model);
  AssetExposures exposures{model.beta_mkt, model.beta_bmg, carbon_intensity};
  auto p = minimum_variance(sigma, exposures, constraints);
  p.thresholds = recover_thresholds(model, p.weights, p.variance);
  return p;
}

std::optional<Thresholds> recover_thresholds(const FactorCovarianceModel& model, const Eigen::VectorXd& weights,
                                             double variance) {
  const Eigen::VectorXd psi = floored(model.idio_var);
  std::vector<Eigen::Index> support;
  for (Eigen::Index i = 0; i < weights.size(); ++i) {
    if (weights(i) > kSupportTolerance) support.push_back(i);
  }
  const auto k = static_cast<Eigen::Index>(support.size());
  if (k < 2 || !(variance > 0.0)) return std::nullopt;
  Eigen::MatrixXd X(k, 2);
  Eigen::VectorXd y(k);
  for (Eigen::Index r = 0; r < k; ++r) {
    const auto i = support[static_cast<std::size_t>(r)];
    X(r, 0) = -model.beta_mkt(i);
    X(r, 1) = -model.beta_bmg(i);
    y(r) = psi(i) * weights(i) / variance - 1.0;
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
  if (qr.rank() < 2) return std::nullopt;
  const Eigen::Vector2d c = qr.solve(y);
  return Thresholds{reciprocal_or_inf(c(0)), reciprocal_or_inf(c(1))};
}

double weight_overlap(const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
  if (x.size() != y.size()) throw ValidationError("weight_overlap: portfolios are on different asset lists");
  return x.cwiseMin(y).sum();
}

}  // namespace carbon
