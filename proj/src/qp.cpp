#include "carbon/qp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "carbon/errors.hpp"

namespace carbon::qp {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Constraint in the internal form n'x >= b (or = b). Bounds use unit normals
// so that they cost O(1) to evaluate and O(n) to project.
struct Row {
  enum class Kind { equality, inequality, lower, upper } kind;
  std::size_t source;  // index into the problem's list, or variable index for bounds
  const Eigen::VectorXd* dense = nullptr;
  double sign = 1.0;
  double b = 0.0;

  double dot(const Eigen::VectorXd& x) const {
    return dense ? sign * dense->dot(x) : sign * x(static_cast<Eigen::Index>(source));
  }
  Eigen::VectorXd project(const Eigen::MatrixXd& J) const {
    if (dense) return sign * (J.transpose() * *dense);
    return sign * J.row(static_cast<Eigen::Index>(source)).transpose();
  }
};

std::string row_name(const Problem& p, const Row& row) {
  switch (row.kind) {
    case Row::Kind::equality: return p.equalities[row.source].name;
    case Row::Kind::inequality: return p.inequalities[row.source].name;
    case Row::Kind::lower: return fmt::format("lower bound on x[{}]", row.source);
    case Row::Kind::upper: return fmt::format("upper bound on x[{}]", row.source);
  }
  return {};
}

class Factorization {
 public:
  explicit Factorization(const Eigen::MatrixXd& L)
      : n_(L.rows()),
        J_(L.transpose().triangularView<Eigen::Upper>().solve(Eigen::MatrixXd::Identity(n_, n_))),
        R_(Eigen::MatrixXd::Zero(n_, n_)) {}

  Eigen::Index active() const { return q_; }
  const Eigen::MatrixXd& J() const { return J_; }

  // Primal direction z = J2 d2 and dual direction r = R^{-1} d1 for a normal
  // whose projection is d = J'n.
  void directions(const Eigen::VectorXd& d, Eigen::VectorXd& z, Eigen::VectorXd& r) const {
    z = J_.rightCols(n_ - q_) * d.tail(n_ - q_);
    r = R_.topLeftCorner(q_, q_).triangularView<Eigen::Upper>().solve(d.head(q_));
  }

  // Appends a constraint with projection d; false when it is linearly
  // dependent on the active ones.
  bool add(Eigen::VectorXd d) {
    for (Eigen::Index j = n_ - 1; j > q_; --j) {
      const double a = d(j - 1), b = d(j);
      if (b == 0.0) continue;
      const double h = std::hypot(a, b), c = a / h, s = b / h;
      d(j - 1) = h;
      d(j) = 0.0;
      rotate_columns(j - 1, j, c, s);
    }
    R_.col(q_).head(q_ + 1) = d.head(q_ + 1);
    const double scale = std::max(1.0, R_.topLeftCorner(q_ + 1, q_ + 1).cwiseAbs().maxCoeff());
    if (std::abs(d(q_)) <= 64.0 * std::numeric_limits<double>::epsilon() * scale) {
      R_.col(q_).setZero();
      return false;
    }
    ++q_;
    return true;
  }

  void drop(Eigen::Index position) {
    for (Eigen::Index k = position; k + 1 < q_; ++k) R_.col(k) = R_.col(k + 1);
    R_.col(q_ - 1).setZero();
    --q_;
    for (Eigen::Index j = position; j < q_; ++j) {
      const double a = R_(j, j), b = R_(j + 1, j);
      if (b == 0.0) continue;
      const double h = std::hypot(a, b), c = a / h, s = b / h;
      for (Eigen::Index k = j; k < q_; ++k) {
        const double t1 = R_(j, k), t2 = R_(j + 1, k);
        R_(j, k) = c * t1 + s * t2;
        R_(j + 1, k) = -s * t1 + c * t2;
      }
      R_(j + 1, j) = 0.0;
      rotate_columns(j, j + 1, c, s);
    }
  }

 private:
  void rotate_columns(Eigen::Index i, Eigen::Index j, double c, double s) {
    for (Eigen::Index k = 0; k < n_; ++k) {
      const double t1 = J_(k, i), t2 = J_(k, j);
      J_(k, i) = c * t1 + s * t2;
      J_(k, j) = -s * t1 + c * t2;
    }
  }

  Eigen::Index n_;
  Eigen::MatrixXd J_;  // columns: first q span the active normals, rest their complement
  Eigen::MatrixXd R_;  // upper triangular, J' N_active = [R; 0]
  Eigen::Index q_ = 0;
};

}  // namespace

Solution solve(const Problem& problem) {
  const Eigen::Index n = problem.hessian.rows();
  if (problem.hessian.cols() != n || problem.linear.size() != n) throw ValidationError("qp: dimension mismatch");
  for (const auto* list : {&problem.equalities, &problem.inequalities}) {
    for (const auto& c : *list) {
      if (c.coefficients.size() != n) throw ValidationError(fmt::format("qp: constraint '{}' has wrong size", c.name));
    }
  }
  if ((problem.lower.size() != 0 && problem.lower.size() != n) ||
      (problem.upper.size() != 0 && problem.upper.size() != n)) {
    throw ValidationError("qp: bound vectors have wrong size");
  }

  Eigen::LLT<Eigen::MatrixXd> llt(problem.hessian);
  if (llt.info() != Eigen::Success) throw NumericalError("qp: Hessian is not positive definite");
  const Eigen::MatrixXd L = llt.matrixL();
  Factorization fac(L);

  std::vector<Row> rows;
  for (std::size_t k = 0; k < problem.equalities.size(); ++k) {
    rows.push_back({Row::Kind::equality, k, &problem.equalities[k].coefficients, 1.0, problem.equalities[k].rhs});
  }
  const std::size_t n_eq = rows.size();
  for (std::size_t k = 0; k < problem.inequalities.size(); ++k) {
    rows.push_back(
        {Row::Kind::inequality, k, &problem.inequalities[k].coefficients, -1.0, -problem.inequalities[k].rhs});
  }
  for (Eigen::Index i = 0; i < problem.lower.size(); ++i) {
    if (std::isfinite(problem.lower(i))) {
      rows.push_back({Row::Kind::lower, static_cast<std::size_t>(i), nullptr, 1.0, problem.lower(i)});
    }
  }
  for (Eigen::Index i = 0; i < problem.upper.size(); ++i) {
    if (std::isfinite(problem.upper(i))) {
      rows.push_back({Row::Kind::upper, static_cast<std::size_t>(i), nullptr, -1.0, -problem.upper(i)});
    }
  }

  Eigen::VectorXd x = llt.solve(-problem.linear);
  std::vector<std::size_t> active;  // row indices, parallel to u
  Eigen::VectorXd u = Eigen::VectorXd::Zero(n + 1);
  std::vector<char> is_active(rows.size(), 0);
  Eigen::VectorXd z, r;
  int iterations = 0;

  for (std::size_t k = 0; k < n_eq; ++k) {
    const Row& row = rows[k];
    const Eigen::VectorXd d = row.project(fac.J());
    fac.directions(d, z, r);
    const double curvature = d.tail(n - fac.active()).squaredNorm();
    if (curvature <= 1e-24 * std::max(1.0, d.squaredNorm())) {
      throw ValidationError(fmt::format("qp: equality '{}' is linearly dependent on earlier ones", row_name(problem, row)));
    }
    const double t = -(row.dot(x) - row.b) / curvature;
    x += t * z;
    const Eigen::Index q = fac.active();
    u.head(q) -= t * r;
    u(q) = t;
    if (!fac.add(d)) throw NumericalError("qp: failed to add equality constraint");
    active.push_back(k);
    is_active[k] = 1;
  }

  const int max_iterations = 50 * static_cast<int>(rows.size() + static_cast<std::size_t>(n)) + 100;
  while (true) {
    std::size_t p = rows.size();
    double worst = 0.0;
    for (std::size_t k = n_eq; k < rows.size(); ++k) {
      if (is_active[k]) continue;
      const double s = rows[k].dot(x) - rows[k].b;
      const double tol = 1e-12 * (1.0 + std::abs(rows[k].b));
      if (s < -tol && s < worst) {
        worst = s;
        p = k;
      }
    }
    if (p == rows.size()) break;

    const Row& row = rows[p];
    double u_plus = 0.0;
    while (true) {
      if (++iterations > max_iterations) throw NumericalError("qp: iteration limit reached");
      const double slack = row.dot(x) - row.b;
      const Eigen::VectorXd d = row.project(fac.J());
      fac.directions(d, z, r);
      const Eigen::Index q = fac.active();

      double t1 = kInf;
      Eigen::Index drop_at = -1;
      for (Eigen::Index j = static_cast<Eigen::Index>(n_eq); j < q; ++j) {
        if (r(j) > 0.0) {
          const double ratio = u(j) / r(j);
          if (ratio < t1) {
            t1 = ratio;
            drop_at = j;
          }
        }
      }
      const double curvature = d.tail(n - q).squaredNorm();
      const bool primal_step = curvature > 1e-24 * std::max(1.0, d.squaredNorm());
      const double t2 = primal_step ? -slack / curvature : kInf;
      const double t = std::min(t1, t2);

      if (!std::isfinite(t)) {
        std::vector<std::string> partners;
        std::size_t bounds = 0;
        for (auto k : active) {
          if (rows[k].kind == Row::Kind::lower || rows[k].kind == Row::Kind::upper) {
            ++bounds;
          } else {
            partners.push_back(row_name(problem, rows[k]));
          }
        }
        std::string with = partners.empty() ? std::string("the bounds") : fmt::format("{}", fmt::join(partners, ", "));
        if (!partners.empty() && bounds > 0) with += fmt::format(" and {} bound(s)", bounds);
        throw InfeasibleError(fmt::format("infeasible constraints: '{}' cannot be met together with {}",
                                          row_name(problem, row), with));
      }

      u.head(q) -= t * r;
      u_plus += t;
      if (!primal_step) {
        is_active[active[static_cast<std::size_t>(drop_at)]] = 0;
        active.erase(active.begin() + drop_at);
        for (Eigen::Index k = drop_at; k + 1 < q; ++k) u(k) = u(k + 1);
        fac.drop(drop_at);
        continue;
      }
      x += t * z;
      if (t2 <= t1) {
        if (!fac.add(d)) throw NumericalError("qp: degenerate constraint set");
        u(q) = u_plus;
        active.push_back(p);
        is_active[p] = 1;
        break;
      }
      is_active[active[static_cast<std::size_t>(drop_at)]] = 0;
      active.erase(active.begin() + drop_at);
      for (Eigen::Index k = drop_at; k + 1 < q; ++k) u(k) = u(k + 1);
      fac.drop(drop_at);
    }
  }

  Solution sol;
  sol.x = x;
  sol.objective = 0.5 * x.dot(problem.hessian * x) + problem.linear.dot(x);
  sol.iterations = iterations;
  sol.eq_multipliers = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(problem.equalities.size()));
  sol.ineq_multipliers = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(problem.inequalities.size()));
  sol.lower_multipliers = Eigen::VectorXd::Zero(n);
  sol.upper_multipliers = Eigen::VectorXd::Zero(n);
  for (std::size_t j = 0; j < active.size(); ++j) {
    const Row& row = rows[active[j]];
    const double mult = u(static_cast<Eigen::Index>(j));
    const auto s = static_cast<Eigen::Index>(row.source);
    switch (row.kind) {
      case Row::Kind::equality: sol.eq_multipliers(s) = -mult; break;
      case Row::Kind::inequality:
        sol.ineq_multipliers(s) = mult;
        sol.active.push_back(problem.inequalities[row.source].name);
        break;
      case Row::Kind::lower:
        sol.lower_multipliers(s) = mult;
        sol.active.push_back(row_name(problem, row));
        break;
      case Row::Kind::upper:
        sol.upper_multipliers(s) = mult;
        sol.active.push_back(row_name(problem, row));
        break;
    }
  }
  return sol;
}

double kkt_residual(const Problem& problem, const Solution& sol) {
  const Eigen::VectorXd& x = sol.x;
  const Eigen::Index n = x.size();
  Eigen::VectorXd grad = problem.hessian * x + problem.linear;
  double worst = 0.0;
  for (std::size_t k = 0; k < problem.equalities.size(); ++k) {
    const auto& c = problem.equalities[k];
    grad += sol.eq_multipliers(static_cast<Eigen::Index>(k)) * c.coefficients;
    worst = std::max(worst, std::abs(c.coefficients.dot(x) - c.rhs));
  }
  for (std::size_t k = 0; k < problem.inequalities.size(); ++k) {
    const auto& c = problem.inequalities[k];
    const double mu = sol.ineq_multipliers(static_cast<Eigen::Index>(k));
    const double gap = c.coefficients.dot(x) - c.rhs;
    grad += mu * c.coefficients;
    worst = std::max({worst, gap, -mu, std::abs(mu * gap)});
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    if (problem.lower.size() != 0) {
      const double nu = sol.lower_multipliers(i);
      grad(i) -= nu;
      if (std::isfinite(problem.lower(i))) {
        const double gap = problem.lower(i) - x(i);
        worst = std::max({worst, gap, -nu, std::abs(nu * gap)});
      }
    }
    if (problem.upper.size() != 0) {
      const double nu = sol.upper_multipliers(i);
      grad(i) += nu;
      if (std::isfinite(problem.upper(i))) {
        const double gap = x(i) - problem.upper(i);
        worst = std::max({worst, gap, -nu, std::abs(nu * gap)});
      }
    }
  }
  return std::max(worst, grad.cwiseAbs().maxCoeff());
}

}  // namespace carbon::qp
