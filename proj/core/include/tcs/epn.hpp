#pragma once

#include <vector>

#include <Eigen/Core>

#include "tcs/network.hpp"

namespace tcs::epn {

// Nodal active/reactive mismatches at one timestep,
//   dp_i = P_i - sum_j V_i V_j (G_ij cos d_ij + B_ij sin d_ij)
//   dq_i = Q_i - sum_j V_i V_j (G_ij sin d_ij - B_ij cos d_ij)
// with P_i, Q_i the net participant injections at bus i (production positive,
// p.u. on the system base).
struct PowerFlowResidual {
  Eigen::VectorXd dp;
  Eigen::VectorXd dq;
};

PowerFlowResidual power_flow_residual(const CoupledNetwork& net,
                                      const Eigen::VectorXd& v,
                                      const Eigen::VectorXd& delta,
                                      const Eigen::VectorXd& p_bus,
                                      const Eigen::VectorXd& q_bus);

// Dense partials of the flow sums (not of the mismatches: d(dp)/dx = -blocks).
struct PowerFlowJacobian {
  Eigen::MatrixXd p_by_v, p_by_delta;
  Eigen::MatrixXd q_by_v, q_by_delta;
};

PowerFlowJacobian power_flow_jacobian(const CoupledNetwork& net,
                                      const Eigen::VectorXd& v,
                                      const Eigen::VectorXd& delta);

// Second-order contraction: H = sum_i lp_i d2(flow_p_i) + lq_i d2(flow_q_i)
// over the stacked coordinates (v_0..v_{I-1}, delta_0..delta_{I-1}).
Eigen::MatrixXd power_flow_hessian(const CoupledNetwork& net,
                                   const Eigen::VectorXd& v,
                                   const Eigen::VectorXd& delta,
                                   const Eigen::VectorXd& lambda_p,
                                   const Eigen::VectorXd& lambda_q);

// Operating-band residuals, all required >= 0 at a feasible point:
// voltage band per bus, then any participant P/Q band supplied by the caller
// is checked directly against the bounds there (participants carry their
// envelopes in the bid stream, not here).
Eigen::VectorXd voltage_band_residual(const CoupledNetwork& net, const Eigen::VectorXd& v);

}  // namespace tcs::epn
