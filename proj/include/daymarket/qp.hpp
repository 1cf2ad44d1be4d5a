// Convex quadratic programming with linear constraints.
//
// The single numerical engine behind the aggregator, generator, and
// centralized market solves. Dual sign convention used project-wide:
//   Lagrangian = objective + eq_duals'(A_eq x - b_eq) + ineq_duals'(G x - h)
//              + upper_duals'(x - upper) + lower_duals'(lower - x)

#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <limits>
#include <string>

namespace daymarket {

// minimize   0.5 x'Qx + c'x
// subject to A_eq x = b_eq
//            G_ineq x <= h_ineq
//            lower <= x <= upper      (entries may be +-inf)
// Q must be symmetric positive semidefinite.
struct QpProblem {
  Eigen::SparseMatrix<double> Q;
  Eigen::VectorXd c;
  Eigen::SparseMatrix<double> A_eq;
  Eigen::VectorXd b_eq;
  Eigen::SparseMatrix<double> G_ineq;
  Eigen::VectorXd h_ineq;
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;

  int num_vars() const { return static_cast<int>(c.size()); }

  // Skeleton with n variables, zero cost, no constraints, free bounds.
  static QpProblem make(int n);
};

enum class QpStatus { optimal, infeasible, unbounded, max_iter };

const char* to_string(QpStatus s);

struct QpSolution {
  Eigen::VectorXd x;
  Eigen::VectorXd eq_duals;
  Eigen::VectorXd ineq_duals;   // >= 0
  Eigen::VectorXd lower_duals;  // >= 0, for (lower - x <= 0)
  Eigen::VectorXd upper_duals;  // >= 0, for (x - upper <= 0)
  QpStatus status = QpStatus::max_iter;
  double kkt_residual = std::numeric_limits<double>::infinity();
  int iterations = 0;
};

// Primal-dual interior-point solve. Deterministic for fixed inputs.
// Infeasibility and unboundedness are reported through status, never by
// throwing.
QpSolution solve_qp(const QpProblem& problem, double tol = 1e-8,
                    int max_iter = 100);

// Max of stationarity, primal-feasibility, dual-feasibility and
// complementarity residuals (infinity norm), on the original problem data.
double kkt_residual(const QpProblem& problem, const QpSolution& solution);

// Structural checks: dimension consistency, Q symmetry, PSD to 1e-8 on the
// smallest eigenvalue (dense check for small problems). Empty string if ok.
std::string validate_problem(const QpProblem& problem);

}  // namespace daymarket
