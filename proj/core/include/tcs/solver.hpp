#pragma once

#include <Eigen/Core>

#include "tcs/nlp.hpp"

namespace tcs::nlp {

enum class SolveStatus {
  optimal,
  iteration_limit,
  line_search_failure,
  factorization_failure,
};
const char* to_string(SolveStatus s);

struct SolverSettings {
  double tol = 1e-8;     // dual infeasibility and complementarity, scaled
  double tol_eq = 1e-8;  // equality residual, scaled infinity norm
  double mu_init = 1e-1;
  int max_iter = 400;
  double delta_c = 1e-8;  // constraint-block regularization
  bool verbose = false;
};

// Multipliers follow the problem convention (L = f + lambda' c + nu' (h - s))
// and are reported against the unscaled rows.
struct KktSolution {
  SolveStatus status = SolveStatus::iteration_limit;
  Eigen::VectorXd x;
  Eigen::VectorXd lambda_eq;
  Eigen::VectorXd lambda_ineq;  // <= 0 at a solution
  Eigen::VectorXd slack;        // h(x) at the solution, >= 0
  Eigen::VectorXd z_lower, z_upper;
  double objective = 0.0;
  double mu = 0.0;
  double eq_violation = 0.0;  // scaled
  double dual_infeasibility = 0.0;
  double complementarity = 0.0;
  int iterations = 0;
  bool converged() const { return status == SolveStatus::optimal; }
};

// Primal-dual interior point with a monotone barrier schedule, filter line
// search and inertia-corrected LDL^T steps. Deterministic: same problem and
// settings give the same iterates.
KktSolution solve_nlp(const Problem& p, const SolverSettings& settings,
                      const KktSolution* warm = nullptr);

}  // namespace tcs::nlp
