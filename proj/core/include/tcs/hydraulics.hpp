#pragma once

#include <vector>

#include <Eigen/Core>

#include "tcs/network.hpp"

namespace tcs::hyd {

// Stationary hydraulic state of the DHN at one timestep.
struct HydraulicState {
  Eigen::VectorXd mass_flow;  // kg/s per edge
  Eigen::VectorXd dp;         // bar per edge, pressure head - tail
  Eigen::VectorXd kv;         // m^3/s per valve (dense over valve list order)
  Eigen::VectorXd pump_dp;    // bar per pump (dense over pump list order)
  Eigen::VectorXd dpr_dp;     // bar per dpr (dense over dpr list order)
};

// Mass conservation A mdot at every node except the reference node (the full
// incidence matrix of a connected circuit has rank N-1).
Eigen::VectorXd continuity_residual(const CoupledNetwork& net, const Eigen::VectorXd& mass_flow);

// Kirchhoff pressure sums over the fundamental loops, B dp.
Eigen::VectorXd loop_residual(const CoupledNetwork& net, const Eigen::VectorXd& dp);

// R dp - dp_setpoint over the control paths.
Eigen::VectorXd control_path_residual(const CoupledNetwork& net,
                                      const Eigen::VectorXd& dp,
                                      const Eigen::VectorXd& dp_setpoint);

// Component pressure law residual of a single edge. Pumps and DPRs tie the
// edge pressure to their actuator variable; the control valve law is kept in
// multiplied-out form kv^2 rho_ref rho dp - dp_ref mdot^2 so that it stays
// regular for a closing valve.
double component_pressure_residual(const CoupledNetwork& net, int edge, double mass_flow,
                                   double dp, double actuator);

// Partials of the same residual.
struct ComponentPressureJacobian {
  double by_mass_flow = 0.0;
  double by_dp = 0.0;
  double by_actuator = 0.0;
};
ComponentPressureJacobian component_pressure_jacobian(const CoupledNetwork& net, int edge,
                                                      double mass_flow, double dp,
                                                      double actuator);

// Flow-direction and pressure band residuals, >= 0 at a feasible point.
Eigen::VectorXd hydraulic_band_residual(const CoupledNetwork& net, const HydraulicState& st);

}  // namespace tcs::hyd
