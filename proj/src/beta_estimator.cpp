#include "carbon/beta_estimator.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <numbers>
#include <thread>

#include <fmt/format.h>
#include <gsl/gsl_errno.h>
#include <gsl/gsl_multimin.h>

#include "carbon/errors.hpp"

namespace carbon {

void StateSpaceSpec::validate() const {
  if (!(measurement_var >= 0.0) || !std::isfinite(measurement_var)) {
    throw ValidationError("state-space spec: measurement variance must be >= 0");
  }
  if (!(state_var.array() >= 0.0).all() || !state_var.allFinite()) {
    throw ValidationError("state-space spec: state variances must be >= 0");
  }
  if (!prior_mean.allFinite() || !prior_cov.allFinite()) throw ValidationError("state-space spec: non-finite prior");
  if ((prior_cov - prior_cov.transpose()).cwiseAbs().maxCoeff() > 1e-12 * (1.0 + prior_cov.cwiseAbs().maxCoeff())) {
    throw ValidationError("state-space spec: prior covariance is not symmetric");
  }
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(prior_cov, Eigen::EigenvaluesOnly);
  if (eig.eigenvalues().minCoeff() < -1e-12) {
    throw ValidationError("state-space spec: prior covariance is not positive semidefinite");
  }
}

BetaPath kalman_filter(const Eigen::VectorXd& returns, const Eigen::VectorXd& r_mkt, const Eigen::VectorXd& r_bmg,
                       const StateSpaceSpec& spec) {
  spec.validate();
  const Eigen::Index T = returns.size();
  if (r_mkt.size() != T || r_bmg.size() != T) throw ValidationError("kalman_filter: series lengths differ");

  BetaPath path;
  path.means.resize(T, 3);
  path.covariances.resize(static_cast<std::size_t>(T));
  path.innovation = Eigen::VectorXd::Constant(T, kMissing);
  path.innovation_var = Eigen::VectorXd::Constant(T, kMissing);
  path.step_loglik = Eigen::VectorXd::Zero(T);

  const Eigen::Matrix3d Q = spec.state_var.asDiagonal();
  const double R = spec.measurement_var;
  Eigen::Vector3d m = spec.prior_mean;
  Eigen::Matrix3d P = spec.prior_cov;
  for (Eigen::Index t = 0; t < T; ++t) {
    if (t > 0) P += Q;
    const double y = returns(t);
    if (!std::isnan(y)) {
      const Eigen::RowVector3d H(1.0, r_mkt(t), r_bmg(t));
      const Eigen::Vector3d PH = P * H.transpose();
      const double F = H.dot(PH) + R;
      if (!(F > 0.0) || !std::isfinite(F)) {
        throw NumericalError(fmt::format("kalman_filter: degenerate innovation variance at step {}", t));
      }
      const double v = y - H.dot(m);
      const Eigen::Vector3d K = PH / F;
      m += K * v;
      const Eigen::Matrix3d A = Eigen::Matrix3d::Identity() - K * H;
      P = A * P * A.transpose() + R * K * K.transpose();
      P = 0.5 * (P + P.transpose()).eval();
      path.innovation(t) = v;
      path.innovation_var(t) = F;
      path.step_loglik(t) = -0.5 * (std::log(2.0 * std::numbers::pi) + std::log(F) + v * v / F);
      path.loglik += path.step_loglik(t);
    }
    path.means.row(t) = m.transpose();
    path.covariances[static_cast<std::size_t>(t)] = P;
  }
  return path;
}

namespace {

struct SearchProblem {
  const Eigen::VectorXd* returns;
  const Eigen::VectorXd* r_mkt;
  const Eigen::VectorXd* r_bmg;
  StateSpaceSpec base;
  double log_lower;
  double log_upper;

  StateSpaceSpec at(const gsl_vector* theta) const {
    StateSpaceSpec s = base;
    auto v = [&](std::size_t i) { return std::exp(std::clamp(gsl_vector_get(theta, i), log_lower, log_upper)); };
    s.measurement_var = v(0);
    s.state_var = Eigen::Vector3d(v(1), v(2), v(3));
    return s;
  }

  double objective(const gsl_vector* theta) const {
    double outside = 0.0;
    for (std::size_t i = 0; i < 4; ++i) {
      const double x = gsl_vector_get(theta, i);
      outside += std::max(0.0, log_lower - x) + std::max(0.0, x - log_upper);
    }
    try {
      return -kalman_filter(*returns, *r_mkt, *r_bmg, at(theta)).loglik + outside;
    } catch (const NumericalError&) {
      return 1e100;
    }
  }
};

double search_objective(const gsl_vector* theta, void* params) {
  return static_cast<const SearchProblem*>(params)->objective(theta);
}

}  // namespace

HyperparameterFit estimate_hyperparameters(const Eigen::VectorXd& returns, const Eigen::VectorXd& r_mkt,
                                           const Eigen::VectorXd& r_bmg, const StateSpaceSpec& init,
                                           const HyperSearchOptions& options) {
  init.validate();
  const auto observed = (returns.array() == returns.array()).count();
  if (observed < 24) {
    throw ValidationError(fmt::format("estimate_hyperparameters: {} observations, need at least 24", observed));
  }
  if (!(options.lower > 0.0 && options.lower < options.upper)) throw ValidationError("invalid variance search box");

  // GSL aborts by default; errors surface through return codes instead.
  static const gsl_error_handler_t* previous_handler = gsl_set_error_handler_off();
  (void)previous_handler;

  SearchProblem problem{&returns, &r_mkt, &r_bmg, init, std::log(options.lower), std::log(options.upper)};
  const std::size_t dim = 4;
  gsl_vector* x = gsl_vector_alloc(dim);
  gsl_vector* step = gsl_vector_alloc(dim);
  const double start[] = {init.measurement_var, init.state_var(0), init.state_var(1), init.state_var(2)};
  for (std::size_t i = 0; i < dim; ++i) {
    gsl_vector_set(x, i, std::clamp(std::log(std::max(start[i], options.lower)), problem.log_lower, problem.log_upper));
    gsl_vector_set(step, i, options.initial_step);
  }

  HyperparameterFit fit;
  fit.initial_loglik = -problem.objective(x);

  gsl_multimin_function fn{&search_objective, dim, &problem};
  gsl_multimin_fminimizer* solver = gsl_multimin_fminimizer_alloc(gsl_multimin_fminimizer_nmsimplex2, dim);
  gsl_multimin_fminimizer_set(solver, &fn, x, step);
  int status = GSL_CONTINUE;
  int iter = 0;
  while (status == GSL_CONTINUE && iter < options.max_iterations) {
    ++iter;
    if (gsl_multimin_fminimizer_iterate(solver) != GSL_SUCCESS) break;
    status = gsl_multimin_test_size(gsl_multimin_fminimizer_size(solver), options.size_tolerance);
  }
  fit.iterations = iter;
  fit.converged = status == GSL_SUCCESS;
  fit.spec = problem.at(gsl_multimin_fminimizer_x(solver));
  fit.loglik = kalman_filter(returns, r_mkt, r_bmg, fit.spec).loglik;
  if (fit.loglik < fit.initial_loglik) {
    fit.spec = problem.at(x);
    fit.loglik = fit.initial_loglik;
  }
  gsl_multimin_fminimizer_free(solver);
  gsl_vector_free(step);
  gsl_vector_free(x);
  return fit;
}

OlsFit static_ols(const Eigen::VectorXd& returns, const Eigen::VectorXd& r_mkt, const Eigen::VectorXd& r_bmg) {
  if (r_mkt.size() != returns.size() || r_bmg.size() != returns.size()) {
    throw ValidationError("static_ols: series lengths differ");
  }
  std::vector<Eigen::Index> rows;
  for (Eigen::Index t = 0; t < returns.size(); ++t) {
    if (!std::isnan(returns(t))) rows.push_back(t);
  }
  const auto n = static_cast<Eigen::Index>(rows.size());
  if (n < 4) throw ValidationError(fmt::format("static_ols: {} observations, need at least 4", n));
  Eigen::MatrixXd X(n, 3);
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    X.row(i) << 1.0, r_mkt(rows[i]), r_bmg(rows[i]);
    y(i) = returns(rows[i]);
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
  if (qr.rank() < 3) throw NumericalError("static_ols: rank-deficient design matrix");
  OlsFit fit;
  fit.coefficients = qr.solve(y);
  fit.observations = static_cast<std::size_t>(n);
  fit.residual_var = (y - X * fit.coefficients).squaredNorm() / static_cast<double>(n - 3);
  const Eigen::Matrix3d xtx_inv = (X.transpose() * X).inverse();
  fit.std_errors = (fit.residual_var * xtx_inv.diagonal()).cwiseSqrt();
  return fit;
}

std::vector<AssetBetaEstimate> estimate_panel_betas(const ReturnsPanel& panel, const FactorSeries& factors,
                                                    const PanelEstimationOptions& options) {
  if (factors.dates != panel.dates) throw ValidationError("estimate_panel_betas: factors not aligned with returns");
  const auto& bmg = factors.bmg();
  options.base.validate();

  std::vector<AssetBetaEstimate> out(panel.num_assets());
  std::vector<std::exception_ptr> errors(panel.num_assets());

  auto run_one = [&](std::size_t a) {
    const auto col = panel.returns.col(static_cast<Eigen::Index>(a));
    Eigen::Index first = -1, last = -1;
    for (Eigen::Index t = 0; t < col.size(); ++t) {
      if (std::isnan(col(t))) continue;
      if (first < 0) first = t;
      last = t;
    }
    AssetBetaEstimate& est = out[a];
    est.asset = panel.assets[a];
    if (first < 0) throw ValidationError(fmt::format("asset {} has no returns", est.asset));
    const Eigen::Index len = last - first + 1;
    const Eigen::VectorXd y = col.segment(first, len);
    const Eigen::VectorXd mkt = factors.r_mkt.segment(first, len);
    const Eigen::VectorXd b = bmg.segment(first, len);
    est.first = static_cast<std::size_t>(first);
    est.observations = static_cast<std::size_t>((y.array() == y.array()).count());
    est.spec = options.base;
    if (options.estimate_variances) {
      StateSpaceSpec init = options.base;
      try {
        init.measurement_var = static_ols(y, mkt, b).residual_var;
      } catch (const Error&) {
        // keep the configured starting value
      }
      const auto fit = estimate_hyperparameters(y, mkt, b, init, options.search);
      est.spec = fit.spec;
      est.converged = fit.converged;
    }
    est.path = kalman_filter(y, mkt, b, est.spec);
  };

  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  const unsigned workers =
      std::min<unsigned>(options.threads == 0 ? hw : options.threads, static_cast<unsigned>(panel.num_assets()));
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t a = next++; a < panel.num_assets(); a = next++) {
      try {
        run_one(a);
      } catch (...) {
        errors[a] = std::current_exception();
      }
    }
  };
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(worker);
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

}  // namespace carbon
