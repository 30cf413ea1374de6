#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

namespace carbon::qp {

struct LinearConstraint {
  Eigen::VectorXd coefficients;
  double rhs = 0.0;
  std::string name;
};

/// min 1/2 x'Gx + g'x  s.t.  a'x = b (equalities), c'x <= d (inequalities),
/// lower <= x <= upper. Infinite bounds are ignored; empty bound vectors mean
/// no bounds. G must be symmetric positive definite.
struct Problem {
  Eigen::MatrixXd hessian;
  Eigen::VectorXd linear;
  std::vector<LinearConstraint> equalities;
  std::vector<LinearConstraint> inequalities;
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;
};

/// Multipliers satisfy  Gx + g + A'eq + C'ineq - lower + upper = 0  with
/// ineq, lower, upper >= 0.
struct Solution {
  Eigen::VectorXd x;
  double objective = 0.0;
  Eigen::VectorXd eq_multipliers;
  Eigen::VectorXd ineq_multipliers;
  Eigen::VectorXd lower_multipliers;
  Eigen::VectorXd upper_multipliers;
  std::vector<std::string> active;  // names of active inequalities and bounds
  int iterations = 0;
};

/// Dual active-set method of Goldfarb and Idnani: starts from the
/// unconstrained minimum and adds the most violated constraint until none is
/// violated, dropping constraints whose multiplier would turn negative. The
/// active set at exit is exact. Throws InfeasibleError naming the constraint
/// that could not be satisfied, NumericalError when G is not positive definite.
Solution solve(const Problem& problem);

/// Largest violation among stationarity, primal feasibility, dual
/// feasibility and complementary slackness.
double kkt_residual(const Problem& problem, const Solution& solution);

}  // namespace carbon::qp
