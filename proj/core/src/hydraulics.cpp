#include "tcs/hydraulics.hpp"

namespace tcs::hyd {

Eigen::VectorXd continuity_residual(const CoupledNetwork& net, const Eigen::VectorXd& mass_flow) {
  Eigen::VectorXd full = net.incidence * mass_flow;
  const int nn = net.node_count();
  Eigen::VectorXd out(nn - 1);
  int r = 0;
  for (int i = 0; i < nn; ++i) {
    if (i == net.reference_node) continue;
    out(r++) = full(i);
  }
  return out;
}

Eigen::VectorXd loop_residual(const CoupledNetwork& net, const Eigen::VectorXd& dp) {
  return net.loop_basis * dp;
}

Eigen::VectorXd control_path_residual(const CoupledNetwork& net,
                                      const Eigen::VectorXd& dp,
                                      const Eigen::VectorXd& dp_setpoint) {
  return net.path_matrix * dp - dp_setpoint;
}

double component_pressure_residual(const CoupledNetwork& net, int edge, double mass_flow,
                                   double dp, double actuator) {
  const auto& ed = net.edges[edge];
  switch (ed.kind) {
    case EdgeKind::pipeline:
    case EdgeKind::producer:
    case EdgeKind::consumer:
      return dp - ed.friction * mass_flow * mass_flow;
    case EdgeKind::pump:
      // Pumps raise pressure along the edge: dp = -dp_pump on the drop sign
      // convention used everywhere else (head minus tail pressure fall).
      return dp + actuator;
    case EdgeKind::dpr:
      return dp - actuator;
    case EdgeKind::valve: {
      const auto& vp = *ed.valve;
      return actuator * actuator * vp.rho_ref * net.water.density * dp -
             vp.dp_ref * mass_flow * mass_flow;
    }
  }
  return 0.0;
}

ComponentPressureJacobian component_pressure_jacobian(const CoupledNetwork& net, int edge,
                                                      double mass_flow, double dp,
                                                      double actuator) {
  const auto& ed = net.edges[edge];
  ComponentPressureJacobian j;
  switch (ed.kind) {
    case EdgeKind::pipeline:
    case EdgeKind::producer:
    case EdgeKind::consumer:
      j.by_dp = 1.0;
      j.by_mass_flow = -2.0 * ed.friction * mass_flow;
      break;
    case EdgeKind::pump:
      j.by_dp = 1.0;
      j.by_actuator = 1.0;
      break;
    case EdgeKind::dpr:
      j.by_dp = 1.0;
      j.by_actuator = -1.0;
      break;
    case EdgeKind::valve: {
      const auto& vp = *ed.valve;
      const double rr = vp.rho_ref * net.water.density;
      j.by_dp = actuator * actuator * rr;
      j.by_actuator = 2.0 * actuator * rr * dp;
      j.by_mass_flow = -2.0 * vp.dp_ref * mass_flow;
      break;
    }
  }
  return j;
}

Eigen::VectorXd hydraulic_band_residual(const CoupledNetwork& net, const HydraulicState& st) {
  const int ne = net.edge_count();
  std::vector<double> vals;
  vals.reserve(4 * ne);
  for (int e = 0; e < ne; ++e) {
    const auto& ed = net.edges[e];
    vals.push_back(st.mass_flow(e) - ed.m_min);
    vals.push_back(ed.m_max - st.mass_flow(e));
    vals.push_back(st.dp(e) - ed.dp_min);
    vals.push_back(ed.dp_max - st.dp(e));
  }
  const auto valves = net.edges_of_kind(EdgeKind::valve);
  for (size_t i = 0; i < valves.size(); ++i) {
    vals.push_back(st.kv(static_cast<int>(i)));
    vals.push_back(net.edges[valves[i]].valve->kvs - st.kv(static_cast<int>(i)));
  }
  return Eigen::Map<Eigen::VectorXd>(vals.data(), static_cast<int>(vals.size()));
}

}  // namespace tcs::hyd
