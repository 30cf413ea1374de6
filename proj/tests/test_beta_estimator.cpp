#include <doctest.h>

#include <cmath>
#include <cstring>

#include "carbon/beta_estimator.hpp"
#include "carbon/errors.hpp"
#include "support.hpp"

using namespace carbon;

namespace {

struct Series {
  Eigen::VectorXd y, mkt, bmg;
};

// Constant coefficients plus Gaussian noise.
Series constant_beta_series(int T, const Eigen::Vector3d& coef, double noise_sd, std::uint64_t seed) {
  testing::Rng rng(seed);
  Series s{Eigen::VectorXd(T), Eigen::VectorXd(T), Eigen::VectorXd(T)};
  for (int t = 0; t < T; ++t) {
    s.mkt(t) = rng.normal(0.008, 0.045);
    s.bmg(t) = rng.normal(0.0, 0.04);
    s.y(t) = coef(0) + coef(1) * s.mkt(t) + coef(2) * s.bmg(t) + rng.normal(0.0, noise_sd);
  }
  return s;
}

Series random_walk_series(int T, const StateSpaceSpec& truth, double factor_sd, std::uint64_t seed) {
  testing::Rng rng(seed);
  Series s{Eigen::VectorXd(T), Eigen::VectorXd(T), Eigen::VectorXd(T)};
  Eigen::Vector3d state = truth.prior_mean;
  for (int t = 0; t < T; ++t) {
    if (t > 0) {
      for (int k = 0; k < 3; ++k) state(k) += rng.normal(0.0, std::sqrt(truth.state_var(k)));
    }
    s.mkt(t) = rng.normal(0.0, factor_sd);
    s.bmg(t) = rng.normal(0.0, factor_sd);
    s.y(t) = state(0) + state(1) * s.mkt(t) + state(2) * s.bmg(t) + rng.normal(0.0, std::sqrt(truth.measurement_var));
  }
  return s;
}

bool same_bits(double a, double b) { return std::memcmp(&a, &b, sizeof(double)) == 0; }

}  // namespace

TEST_CASE("a zero carbon factor leaves the carbon beta at its prior") {
  auto s = constant_beta_series(60, {0.001, 1.1, 0.7}, 0.05, 1);
  s.bmg.setZero();
  StateSpaceSpec spec;
  spec.prior_mean = {0.0, 1.0, -0.3};
  const auto path = kalman_filter(s.y, s.mkt, s.bmg, spec);
  for (Eigen::Index t = 0; t < path.means.rows(); ++t) CHECK(path.means(t, 2) == -0.3);
  CHECK(path.covariances.back()(2, 2) == doctest::Approx(1.0 + 59 * 1e-4).epsilon(1e-12));
}

TEST_CASE("one update step matches the scalar-gain formula") {
  StateSpaceSpec spec;
  spec.measurement_var = 0.0025;
  spec.prior_mean = {0.0, 1.0, 0.0};
  spec.prior_cov = Eigen::Matrix3d::Identity();
  Eigen::VectorXd y(1), mkt(1), bmg(1);
  y << 0.05;
  mkt << 0.04;
  bmg << -0.01;
  const auto path = kalman_filter(y, mkt, bmg, spec);

  const double h[3] = {1.0, 0.04, -0.01};
  const double F = 1.0 + 0.04 * 0.04 + 0.01 * 0.01 + 0.0025;
  const double v = 0.05 - 0.04;
  const double prior[3] = {0.0, 1.0, 0.0};
  for (int i = 0; i < 3; ++i) {
    CHECK(path.means(0, i) == doctest::Approx(prior[i] + h[i] * v / F).epsilon(1e-14));
    for (int j = 0; j < 3; ++j) {
      const double expected = (i == j ? 1.0 : 0.0) - h[i] * h[j] / F;
      CHECK(path.covariances[0](i, j) == doctest::Approx(expected).epsilon(1e-13));
    }
  }
  CHECK(path.innovation(0) == doctest::Approx(v));
  CHECK(path.loglik == doctest::Approx(-0.5 * (std::log(2.0 * M_PI) + std::log(F) + v * v / F)).epsilon(1e-14));
}

TEST_CASE("invalid specifications are rejected") {
  const auto s = constant_beta_series(10, {0.0, 1.0, 0.0}, 0.05, 2);
  StateSpaceSpec spec;
  SUBCASE("prior covariance not PSD") {
    spec.prior_cov(0, 0) = -1.0;
    CHECK_THROWS_AS(kalman_filter(s.y, s.mkt, s.bmg, spec), ValidationError);
  }
  SUBCASE("asymmetric prior") {
    spec.prior_cov(0, 1) = 0.5;
    CHECK_THROWS_AS(kalman_filter(s.y, s.mkt, s.bmg, spec), ValidationError);
  }
  SUBCASE("negative state variance") {
    spec.state_var(1) = -1e-4;
    CHECK_THROWS_AS(kalman_filter(s.y, s.mkt, s.bmg, spec), ValidationError);
  }
  SUBCASE("zero innovation variance") {
    spec.measurement_var = 0.0;
    spec.state_var.setZero();
    spec.prior_cov.setZero();
    CHECK_THROWS_AS(kalman_filter(s.y, s.mkt, s.bmg, spec), NumericalError);
  }
  SUBCASE("length mismatch") {
    CHECK_THROWS_AS(kalman_filter(s.y, s.mkt.head(5), s.bmg, spec), ValidationError);
  }
}

TEST_CASE("a missing month is a predict-only step") {
  auto s = constant_beta_series(30, {0.002, 0.9, 0.4}, 0.05, 3);
  s.y(1) = kMissing;
  StateSpaceSpec spec;
  spec.state_var = {1e-5, 2e-3, 3e-3};
  const auto full = kalman_filter(s.y, s.mkt, s.bmg, spec);
  CHECK(std::isnan(full.innovation(1)));
  CHECK(full.step_loglik(1) == 0.0);
  CHECK((full.means.row(1) - full.means.row(0)).norm() == 0.0);
  const Eigen::Matrix3d Q = spec.state_var.asDiagonal();
  CHECK((full.covariances[1] - (full.covariances[0] + Q)).norm() < 1e-15);

  // Restarting at t = 2 with (m_0, P_0 + 2Q) reproduces the rest of the path.
  StateSpaceSpec restart = spec;
  restart.prior_mean = full.means.row(0).transpose();
  restart.prior_cov = full.covariances[0] + 2.0 * Q;
  const auto tail = kalman_filter(s.y.tail(28), s.mkt.tail(28), s.bmg.tail(28), restart);
  for (int t = 0; t < 28; ++t) {
    CHECK((tail.means.row(t) - full.means.row(t + 2)).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((tail.covariances[t] - full.covariances[t + 2]).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("log-likelihood is additive over steps and over split samples") {
  const auto s = constant_beta_series(80, {0.0, 1.2, -0.5}, 0.06, 4);
  StateSpaceSpec spec;
  spec.state_var = {1e-6, 1e-3, 2e-3};
  const auto full = kalman_filter(s.y, s.mkt, s.bmg, spec);
  CHECK(full.loglik == doctest::Approx(full.step_loglik.sum()).epsilon(1e-13));

  const int k = 37;
  const auto head = kalman_filter(s.y.head(k), s.mkt.head(k), s.bmg.head(k), spec);
  StateSpaceSpec rest = spec;
  rest.prior_mean = head.means.row(k - 1).transpose();
  rest.prior_cov = head.covariances.back() + Eigen::Matrix3d(spec.state_var.asDiagonal());
  const auto tail = kalman_filter(s.y.tail(80 - k), s.mkt.tail(80 - k), s.bmg.tail(80 - k), rest);
  CHECK(head.loglik + tail.loglik == doctest::Approx(full.loglik).epsilon(1e-12));
}

TEST_CASE("filtered covariances stay symmetric PSD") {
  const auto s = constant_beta_series(200, {0.0, 1.0, 0.2}, 0.05, 5);
  StateSpaceSpec spec;
  spec.prior_cov = 1e6 * Eigen::Matrix3d::Identity();
  const auto path = kalman_filter(s.y, s.mkt, s.bmg, spec);
  for (const auto& P : path.covariances) {
    CHECK((P - P.transpose()).norm() == 0.0);
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(P);
    CHECK(eig.eigenvalues().minCoeff() >= -1e-12);
  }
}

TEST_CASE("with no state noise and a diffuse prior the filter reproduces least squares") {
  const auto s = constant_beta_series(120, {0.003, 1.1, 0.6}, 0.05, 6);
  StateSpaceSpec spec;
  spec.measurement_var = 0.0025;
  spec.state_var.setZero();
  spec.prior_mean.setZero();
  spec.prior_cov = 1e8 * Eigen::Matrix3d::Identity();
  const auto path = kalman_filter(s.y, s.mkt, s.bmg, spec);
  const auto ols = static_ols(s.y, s.mkt, s.bmg);
  for (int i = 0; i < 3; ++i) CHECK(path.means(119, i) == doctest::Approx(ols.coefficients(i)).epsilon(1e-6));

  // Independent route: normal equations of the regression.
  Eigen::MatrixXd X(120, 3);
  X.col(0).setOnes();
  X.col(1) = s.mkt;
  X.col(2) = s.bmg;
  const Eigen::Vector3d normal_eq = (X.transpose() * X).ldlt().solve(X.transpose() * s.y);
  CHECK((normal_eq - ols.coefficients).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("noiseless constant betas are recovered") {
  const Eigen::Vector3d truth(0.002, 0.85, -0.35);
  const auto s = constant_beta_series(200, truth, 0.0, 7);
  StateSpaceSpec spec;
  spec.measurement_var = 1e-10;
  spec.state_var.setZero();
  const auto path = kalman_filter(s.y, s.mkt, s.bmg, spec);
  CHECK((path.means.row(199).transpose() - truth).cwiseAbs().maxCoeff() < 1e-4);
}

TEST_CASE("static regression") {
  SUBCASE("exact fit") {
    const Eigen::Vector3d truth(0.01, 1.3, -0.8);
    const auto s = constant_beta_series(24, truth, 0.0, 8);
    const auto fit = static_ols(s.y, s.mkt, s.bmg);
    CHECK((fit.coefficients - truth).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(fit.residual_var < 1e-25);
    CHECK(fit.observations == 24);
  }
  SUBCASE("orthogonal centred factors give univariate slopes") {
    Eigen::VectorXd mkt(8), bmg(8), y(8);
    mkt << 1, -1, 1, -1, 1, -1, 1, -1;
    bmg << 1, 1, -1, -1, 1, 1, -1, -1;
    y << 0.3, -0.1, 0.2, 0.05, 0.4, -0.2, 0.1, 0.0;
    const auto fit = static_ols(y, mkt, bmg);
    CHECK(fit.coefficients(0) == doctest::Approx(y.mean()));
    CHECK(fit.coefficients(1) == doctest::Approx(y.dot(mkt) / mkt.squaredNorm()));
    CHECK(fit.coefficients(2) == doctest::Approx(y.dot(bmg) / bmg.squaredNorm()));
  }
  SUBCASE("missing months are skipped") {
    auto s = constant_beta_series(30, {0.0, 1.0, 0.5}, 0.03, 9);
    const auto reference = static_ols(s.y.tail(29), s.mkt.tail(29), s.bmg.tail(29));
    s.y(0) = kMissing;
    const auto fit = static_ols(s.y, s.mkt, s.bmg);
    CHECK(fit.observations == 29);
    CHECK((fit.coefficients - reference.coefficients).cwiseAbs().maxCoeff() < 1e-13);
  }
  SUBCASE("three observations are not enough") {
    const auto s = constant_beta_series(3, {0.0, 1.0, 0.5}, 0.03, 10);
    CHECK_THROWS_AS(static_ols(s.y, s.mkt, s.bmg), ValidationError);
  }
  SUBCASE("collinear factors") {
    auto s = constant_beta_series(30, {0.0, 1.0, 0.5}, 0.03, 11);
    s.bmg = 2.0 * s.mkt;
    CHECK_THROWS_AS(static_ols(s.y, s.mkt, s.bmg), NumericalError);
  }
}

TEST_CASE("hyperparameter search") {
  SUBCASE("needs 24 observations") {
    const auto s = constant_beta_series(23, {0.0, 1.0, 0.0}, 0.05, 12);
    CHECK_THROWS_AS(estimate_hyperparameters(s.y, s.mkt, s.bmg, StateSpaceSpec{}), ValidationError);
  }
  SUBCASE("never ends below its starting likelihood") {
    const auto s = constant_beta_series(60, {0.0, 1.0, 0.3}, 0.05, 13);
    const auto fit = estimate_hyperparameters(s.y, s.mkt, s.bmg, StateSpaceSpec{});
    CHECK(fit.loglik >= fit.initial_loglik);
    CHECK(fit.loglik == doctest::Approx(kalman_filter(s.y, s.mkt, s.bmg, fit.spec).loglik));
    CHECK(fit.spec.measurement_var >= 1e-10);
    CHECK(fit.spec.measurement_var <= 1e-1);
  }
  SUBCASE("constant betas drive the state variances towards the lower bound") {
    StateSpaceSpec truth;
    truth.measurement_var = 0.0025;
    truth.state_var.setZero();
    truth.prior_mean = {0.001, 1.0, 0.4};
    const auto s = random_walk_series(240, truth, 0.15, 14);
    const auto fit = estimate_hyperparameters(s.y, s.mkt, s.bmg, StateSpaceSpec{});
    // a beta step sd below 0.015 per month, against 0.063 in the random-walk case below
    for (int k = 0; k < 3; ++k) CHECK(fit.spec.state_var(k) < 2e-4);
    StateSpaceSpec frozen = fit.spec;
    frozen.state_var.setConstant(1e-10);
    CHECK(fit.loglik >= kalman_filter(s.y, s.mkt, s.bmg, frozen).loglik);
    CHECK(std::abs(std::log(fit.spec.measurement_var / 0.0025)) < 0.3);
  }
  SUBCASE("variances of a simulated random walk are recovered in log terms") {
    StateSpaceSpec truth;
    truth.measurement_var = 0.0025;
    truth.state_var = {1e-6, 4e-3, 4e-3};
    truth.prior_mean = {0.0, 1.0, 0.0};
    const auto s = random_walk_series(500, truth, 0.15, 15);
    StateSpaceSpec init;
    init.prior_cov = Eigen::Matrix3d::Identity();
    const auto fit = estimate_hyperparameters(s.y, s.mkt, s.bmg, init);
    CHECK(std::abs(std::log(fit.spec.measurement_var / truth.measurement_var)) < 0.5);
    CHECK(std::abs(std::log(fit.spec.state_var(1) / truth.state_var(1))) < 0.5);
    CHECK(std::abs(std::log(fit.spec.state_var(2) / truth.state_var(2))) < 0.5);
  }
}

TEST_CASE("panel estimation is independent of the thread count") {
  ReturnsPanel panel;
  FactorSeries factors;
  const int T = 48, n = 7;
  Month m{2012, 1};
  for (int t = 0; t < T; ++t, m = m.next()) panel.dates.push_back(m);
  factors.dates = panel.dates;
  testing::Rng rng(16);
  factors.r_mkt = Eigen::VectorXd(T);
  Eigen::VectorXd bmg(T);
  for (int t = 0; t < T; ++t) {
    factors.r_mkt(t) = rng.normal(0.008, 0.045);
    bmg(t) = rng.normal(0.0, 0.04);
  }
  factors.r_bmg = bmg;
  panel.returns.resize(T, n);
  panel.membership.resize(T, n);
  for (int a = 0; a < n; ++a) {
    panel.assets.push_back("S" + std::to_string(a));
    for (int t = 0; t < T; ++t) {
      const bool member = !(a == 3 && t < 10) && !(a == 5 && t == 20);
      panel.returns(t, a) =
          member ? 0.9 * factors.r_mkt(t) + 0.3 * a * bmg(t) / n + rng.normal(0.0, 0.05) : kMissing;
      panel.membership(t, a) = member;
    }
  }
  PanelEstimationOptions opts;
  opts.threads = 1;
  const auto serial = estimate_panel_betas(panel, factors, opts);
  opts.threads = 4;
  const auto parallel = estimate_panel_betas(panel, factors, opts);
  REQUIRE(serial.size() == parallel.size());
  CHECK(serial[3].first == 10);
  CHECK(serial[3].path.size() == 38);
  CHECK(serial[5].observations == 47);
  for (std::size_t a = 0; a < serial.size(); ++a) {
    CHECK(serial[a].asset == parallel[a].asset);
    CHECK(same_bits(serial[a].path.loglik, parallel[a].path.loglik));
    CHECK((serial[a].path.means.array() == parallel[a].path.means.array()).all());
  }

  opts.estimate_variances = false;
  const auto fixed = estimate_panel_betas(panel, factors, opts);
  CHECK(fixed[0].spec.measurement_var == opts.base.measurement_var);
}
