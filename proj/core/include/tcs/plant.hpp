#pragma once

#include <map>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "tcs/hydraulics.hpp"
#include "tcs/network.hpp"
#include "tcs/thermal.hpp"

namespace tcs::plant {

// Everything the controller hands to the physical network for one step:
// cleared heat powers, pump pressure rises and differential-pressure
// setpoints of the control paths.
struct Actuation {
  std::map<std::string, double> heat_mw;  // per DHN-coupled participant, magnitude
  Eigen::VectorXd pump_rise;              // bar per pump (edge list order), >= 0
  Eigen::VectorXd path_setpoints;         // bar per control path
  double ambient_temp = 278.15;           // K
};

// Realized state of the heating network after a committed step. The plant is
// the reference model: pipe outlets come from the exact transport window over
// the realized flow history, never from the controller's linearization.
struct PlantState {
  hyd::HydraulicState hydraulic;
  Eigen::VectorXd node_temp;             // K per node
  Eigen::VectorXd edge_outlet;           // K per edge, temperature leaving the edge
  std::vector<double> producer_outlet;   // K, producer edge list order
  std::vector<thermal::ThermalHistory> history;  // per pipeline, pipeline list order
};

struct ResolveStats {
  int picard_iterations = 0;
  int newton_iterations = 0;
  double hydraulic_residual = 0.0;  // final inf-norms
  double thermal_residual = 0.0;
};

// Thrown when the physical resolve does not converge (reversing flows,
// collapsing consumer temperature differences and similar).
struct PlantDivergence : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Stationary plant consistent with the actuation, histories filled with the
// steady solution. Producer outlets are anchored at the guessed temperature
// of their supply nodes (committed producer heats are not consulted, the
// realized ones absorb the standing losses); consumer heats are honored.
// start_flow seeds the hydraulic Newton (edge order).
PlantState init_plant(const CoupledNetwork& net, const Eigen::VectorXd& node_temp_guess,
                      const Eigen::VectorXd& start_flow, const Actuation& act, double dt,
                      ResolveStats* stats = nullptr);

// Advances the plant one step: resolves hydraulics and the node-method
// thermal state under the actuation, then records the step into the pipe
// histories.
PlantState advance(const CoupledNetwork& net, const PlantState& prev, const Actuation& act,
                   double dt, ResolveStats* stats = nullptr);

// Operational band residuals of a realized state (all >= 0 when respected).
// producer_outlet_prev anchors the ramp bands, producer edge list order.
struct PlantBands {
  Eigen::VectorXd hydraulic;
  Eigen::VectorXd thermal;
  double worst() const;
};
PlantBands plant_bands(const CoupledNetwork& net, const PlantState& st,
                       const std::vector<double>& producer_outlet_prev);

}  // namespace tcs::plant
