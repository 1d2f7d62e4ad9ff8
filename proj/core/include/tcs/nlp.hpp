#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include "tcs/market.hpp"
#include "tcs/network.hpp"
#include "tcs/thermal.hpp"

namespace tcs::nlp {

struct Bounds {
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;
};

// Smooth NLP in standard form:
//   min f(x)  s.t.  c(x) = 0,  h(x) >= 0,  lower <= x <= upper.
// Multiplier convention: L = f + lambda' c + nu' (h - s), so the sensitivity
// of the optimal value to a +1 shift of c_r is +lambda_r.
class Problem {
 public:
  virtual ~Problem() = default;
  virtual int num_vars() const = 0;
  virtual int num_eq() const = 0;
  virtual int num_ineq() const = 0;
  virtual const Bounds& var_bounds() const = 0;
  virtual double objective(const Eigen::VectorXd& x) const = 0;
  virtual Eigen::VectorXd objective_gradient(const Eigen::VectorXd& x) const = 0;
  virtual Eigen::VectorXd eq_residual(const Eigen::VectorXd& x) const = 0;
  virtual Eigen::VectorXd ineq_residual(const Eigen::VectorXd& x) const = 0;
  virtual Eigen::SparseMatrix<double> eq_jacobian(const Eigen::VectorXd& x) const = 0;
  virtual Eigen::SparseMatrix<double> ineq_jacobian(const Eigen::VectorXd& x) const = 0;
  virtual Eigen::SparseMatrix<double> lagrangian_hessian(const Eigen::VectorXd& x,
                                                         const Eigen::VectorXd& lambda_eq,
                                                         const Eigen::VectorXd& lambda_ineq) const = 0;
  virtual Eigen::VectorXd initial_point() const = 0;

  // Diagonal scalings applied by the solver; defaults are all ones.
  virtual Eigen::VectorXd var_scale() const;
  virtual Eigen::VectorXd eq_scale() const;
  virtual Eigen::VectorXd ineq_scale() const;
};

// Max relative deviation between the analytic first derivatives and central
// finite differences at x, over objective gradient and both Jacobians.
double gradient_check(const Problem& p, const Eigen::VectorXd& x, double step = 1e-6);

// Which parts of the coupled system enter the optimization.
enum class Scope { joint, epn_only, dhn_only };
const char* to_string(Scope s);

// Everything the clearing needs to know about one horizon.
struct HorizonInputs {
  int steps = 0;   // H
  double dt = 0.0; // s
  Scope scope = Scope::joint;

  // Flexible participants, per step. EPN entries bound the signed injection,
  // DHN entries bound the heat magnitude.
  std::vector<std::vector<market::ParticipantBid>> bids;

  // Inflexible participants enter as fixed injections (MW, signed for EPN,
  // magnitude for DHN), per step keyed by participant id.
  std::vector<std::map<std::string, double>> fixed_epn;
  std::vector<std::map<std::string, double>> fixed_dhn;

  // Hard pins for sequential operation: the named participant's power is
  // equality-fixed to the scheduled value (EPN signed MW / DHN magnitude).
  std::vector<std::map<std::string, double>> pinned_epn;
  std::vector<std::map<std::string, double>> pinned_dhn;

  Eigen::VectorXd ambient_temp;                 // K, per step
  std::vector<Eigen::VectorXd> path_setpoints;  // bar, per step x path
  bool pumps_flexible = false;
  std::vector<Eigen::VectorXd> pump_setpoints;  // bar, per step x pump (fixed mode)
  std::vector<std::pair<double, double>> pump_bounds;  // bar, per pump (flexible mode)

  // Linearized pipe transport built from the predicted flows, [pipe][step].
  std::vector<std::vector<thermal::OutletStencil>> stencils;

  // Realized inlet temperature of a pipe, steps_back >= 1 before the horizon.
  std::function<double(int pipe, int steps_back)> history_inlet_temp;

  // Ramp anchors: realized producer outlet temperature at the last committed
  // step, in producer list order (heat producers only).
  std::vector<double> producer_outlet_prev;

  // Constraint tightening inside the clearing, so that the exact plant stays
  // within its true bounds despite the transport approximation.
  double thermal_margin = 0.5;  // K on node temperature bands and outlet floors
  double ramp_margin = 0.1;     // K on producer ramps
  double valve_margin = 0.02;   // bar kept on every control valve's drop

  // Starting values from the plant (cold start falls back to these).
  Eigen::VectorXd start_mass_flow;  // per edge
  Eigen::VectorXd start_dp;         // per edge
  Eigen::VectorXd start_node_temp;  // per node
};

// Index tables of the assembled problem, everything -1 when absent.
struct Layout {
  int steps = 0;
  // Variables.
  std::vector<int> v0, delta0;            // per step: base of bus blocks
  std::vector<std::map<std::string, int>> p_var;   // [step][participant]
  std::vector<std::map<std::string, int>> q_var;
  std::vector<std::map<std::string, int>> phi_var;
  std::vector<int> mflow0, dp0, kv0;      // per step: base of edge/valve blocks
  std::vector<int> tnode0, tout1_0, tout2_0, toutc0;  // per step bases
  std::vector<int> pipe_of_tout;          // pipe row i -> edge index
  std::vector<int> comp_of_toutc;         // component outlet i -> edge index
  // Equality rows.
  std::vector<int> row_p0, row_q0;        // per step: bus balance row bases
  std::vector<int> row_mix0;              // per step: node mixing row bases
  int num_vars = 0, num_eq = 0, num_ineq = 0;
};

class CoupledProblem;

// Builds the clearing NLP over the horizon. Validates input shapes and the
// degree-of-freedom budget; throws ValidationError on mismatch.
std::unique_ptr<CoupledProblem> assemble(const CoupledNetwork& net, const HorizonInputs& in);

class CoupledProblem : public Problem {
 public:
  int num_vars() const override { return layout_.num_vars; }
  int num_eq() const override { return layout_.num_eq; }
  int num_ineq() const override { return layout_.num_ineq; }
  const Bounds& var_bounds() const override { return bounds_; }
  double objective(const Eigen::VectorXd& x) const override;
  Eigen::VectorXd objective_gradient(const Eigen::VectorXd& x) const override;
  Eigen::VectorXd eq_residual(const Eigen::VectorXd& x) const override;
  Eigen::VectorXd ineq_residual(const Eigen::VectorXd& x) const override;
  Eigen::SparseMatrix<double> eq_jacobian(const Eigen::VectorXd& x) const override;
  Eigen::SparseMatrix<double> ineq_jacobian(const Eigen::VectorXd& x) const override;
  Eigen::SparseMatrix<double> lagrangian_hessian(const Eigen::VectorXd& x,
                                                 const Eigen::VectorXd& lambda_eq,
                                                 const Eigen::VectorXd& lambda_ineq) const override;
  Eigen::VectorXd initial_point() const override;
  Eigen::VectorXd var_scale() const override;
  Eigen::VectorXd eq_scale() const override;

  const Layout& layout() const { return layout_; }
  const CoupledNetwork& network() const { return net_; }
  const HorizonInputs& inputs() const { return in_; }

  // Welfare of the embedded objective at x (objective is its negation).
  double welfare(const Eigen::VectorXd& x) const { return -objective(x); }

 private:
  friend std::unique_ptr<CoupledProblem> assemble(const CoupledNetwork&, const HorizonInputs&);
  CoupledProblem(const CoupledNetwork& net, HorizonInputs in);

  void build_layout();
  void build_bounds_and_objective();
  void build_rows();

  const CoupledNetwork& net_;
  HorizonInputs in_;
  Layout layout_;
  Bounds bounds_;
  Eigen::VectorXd grad_;        // constant linear objective
  Eigen::VectorXd x0_;
  Eigen::VectorXd var_scale_, eq_scale_;

  // Row descriptors, see assemble.cpp.
  struct Rows;
  std::shared_ptr<Rows> rows_;
};

}  // namespace tcs::nlp
