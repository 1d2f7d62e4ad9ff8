#pragma once

#include <functional>
#include <vector>

#include <Eigen/Core>

#include "tcs/network.hpp"

namespace tcs::thermal {

// Realized inlet conditions of one pipeline, one record per committed step.
class ThermalHistory {
 public:
  explicit ThermalHistory(int depth = 64);

  // Preloads the whole buffer with a steady state.
  void fill(double inlet_temp, double mass_flow);
  void push(double inlet_temp, double mass_flow);

  // steps_back >= 1: 1 is the most recent committed step.
  double temp_back(int steps_back) const;
  double flow_back(int steps_back) const;
  int depth() const { return static_cast<int>(temp_.size()); }

 private:
  std::vector<double> temp_;
  std::vector<double> flow_;
  int head_ = 0;  // slot of the most recent record
};

// mass flow / inlet temp nu steps back from the evaluation step (nu = 0 is
// the evaluation step itself).
using SeriesLookup = std::function<double(int)>;

// Transport window of the node method: which past inlet slugs appear at the
// pipe outlet during the evaluation step.
struct TransportWindow {
  int newest_offset = 0;    // steps back to the newest contributing slug
  int oldest_offset = 1;    // steps back to the oldest contributing slug
  double mass_newest = 0;   // kg, cumulative mass including the newest slug
  double mass_oldest = 0;   // kg, cumulative mass up to (excl.) the oldest slug
};

// Scans backwards until the pipe content rho A L is covered. max_back bounds
// the scan; running past it throws IoError (history too shallow).
TransportWindow exact_window(const SeriesLookup& flow, int max_back, double pipe_mass,
                             double dt);

// Mass-weighted blend of historic inlet temperatures leaving the pipe during
// the evaluation step, without heat losses.
double lossless_outlet(const TransportWindow& w, const SeriesLookup& flow,
                       const SeriesLookup& inlet_temp, double pipe_mass, double dt);

// Average residence time in seconds of the water leaving during the step.
double residence_time(const TransportWindow& w, const SeriesLookup& flow, double pipe_mass,
                      double dt);

// First-order heat loss towards ambient over the residence time.
double lossy_outlet(double lossless_temp, double ambient_temp, double residence_s,
                    const PipelineParams& pipe, const WaterProperties& water);

// Exponential decay factor of the loss law for a given residence time.
double loss_decay(double residence_s, const PipelineParams& pipe, const WaterProperties& water);

// Normalized window weights (newest / interior / oldest), Eq. blend
// coefficients of the outlet temperature. Sum is exactly 1 by construction.
struct OmegaWeights {
  double newest = 0.0;
  double interior = 0.0;
  double oldest = 0.0;
};
OmegaWeights compute_omega(const TransportWindow& w, const SeriesLookup& flow, double pipe_mass,
                           double dt);

// Linearized outlet model for one pipe and one horizon step, built from
// predicted flows: fixed blend weights per inlet-temp sample plus a fixed
// loss decay. Offsets count back from the horizon step the stencil is for.
struct OutletStencil {
  std::vector<std::pair<int, double>> weights;  // (steps back, coefficient)
  double residence_s = 0.0;
  double decay = 1.0;
  OmegaWeights omega;
};
OutletStencil outlet_stencil(const TransportWindow& w, const SeriesLookup& predicted_flow,
                             const PipelineParams& pipe, const WaterProperties& water,
                             double dt);

// Perfectly mixed node: (sum outgoing flow) T_node - sum incoming flow T_in.
double node_mixing_residual(double t_node, const std::vector<std::pair<double, double>>& inflows,
                            const std::vector<double>& outflows);

// Heat producer: T_out = T_return_node + Phi / (cp mdot), Phi in MW.
double producer_outlet_residual(double t_out, double t_return_node, double phi_mw,
                                double mass_flow, const WaterProperties& water);

// Heat consumer characteristic curve and heat balance (Phi in MW).
double consumer_curve_residual(double t_out, double t_supply_node, double t_ambient,
                               double phi_mw, const ConsumerCurve& curve);
double consumer_flow_residual(double mass_flow, double t_supply_node, double t_out,
                              double phi_mw, const WaterProperties& water);

// Pumps, valves and DPRs forward the inlet temperature.
double passthrough_residual(double t_out, double t_tail_node);

// Node temperature bands plus producer outlet floor and ramp bands,
// all >= 0 at a feasible point.
struct ThermalBands {
  Eigen::VectorXd node_band;      // 2 per node
  Eigen::VectorXd producer_band;  // per producer: outlet floor, ramp up, ramp down
};
ThermalBands thermal_band_residual(const CoupledNetwork& net, const Eigen::VectorXd& node_temp,
                                   const std::vector<double>& producer_outlet,
                                   const std::vector<double>& producer_outlet_prev);

}  // namespace tcs::thermal
