#pragma once

#include <deque>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "tcs/market.hpp"
#include "tcs/network.hpp"
#include "tcs/nlp.hpp"
#include "tcs/plant.hpp"
#include "tcs/solver.hpp"

namespace tcs::ems {

// How the intra-day auction treats the two networks.
enum class Mode {
  joint,                 // one coupled clearing
  epn_only,              // electric network alone, no heating side at all
  dhn_only,              // heating network alone, no electric side at all
  sequential_epn_first,  // clear EPN, pin converter heats, then clear DHN
  sequential_dhn_first,  // clear DHN, pin converter powers, then clear EPN
};
const char* to_string(Mode m);

// Exogenous data of one interval: offers of the flexible participants and
// the forecast/schedule of everything inflexible.
struct StepForecast {
  std::vector<market::ParticipantBid> bids;
  std::map<std::string, double> fixed_epn;  // signed MW
  std::map<std::string, double> fixed_dhn;  // MW magnitude
  double ambient_temp = 278.15;             // K
  Eigen::VectorXd path_setpoints;           // bar per control path
  Eigen::VectorXd pump_setpoints;           // bar per pump (fixed mode)
};
using ForecastFn = std::function<StepForecast(int step)>;

struct EmsConfig {
  int horizon = 16;
  double dt = 900.0;  // s
  Mode mode = Mode::joint;
  bool pumps_flexible = false;
  std::vector<std::pair<double, double>> pump_bounds;  // bar, flexible mode
  double thermal_margin = 0.5;  // K, clearing-side tightening
  double ramp_margin = 0.1;     // K
  double valve_margin = 0.02;   // bar
  // Transport re-linearization: re-solve with updated flow predictions until
  // they agree with the cleared flows (matters at cold start and after load
  // jumps; a settled rolling horizon passes on the first try).
  int relink_max = 3;
  double relink_tol = 0.05;  // kg/s
  nlp::SolverSettings solver;
};

// Everything recorded about one committed interval.
struct StepRecord {
  int step = 0;
  bool converged = false;  // clearing solved; false means the shifted plan was committed
  bool fallback = false;
  bool plant_ok = true;    // exact network accepted the committed actuation
  std::string diagnosis;   // human-readable failure note, empty when clean
  int nlp_iterations = 0;
  int relink_rounds = 0;
  double solve_seconds = 0.0;

  market::Dispatch dispatch;  // committed interval
  market::PriceReport prices;
  std::vector<market::SettlementLine> settlement;
  double welfare = 0.0;  // ¤/h at the committed dispatch

  // Fidelity of the cleared first interval against the exact plant.
  double temp_divergence = 0.0;  // K, inf-norm over nodes
  double flow_divergence = 0.0;  // kg/s, inf-norm over edges
  double band_worst = 0.0;       // min operational band residual, >= 0 inside

  // Raw physics residuals of the committed interval (unscaled rows).
  double continuity_residual = 0.0;  // kg/s
  double loop_residual = 0.0;        // bar
  double path_residual = 0.0;        // bar
  double power_flow_residual = 0.0;  // p.u.

  // Transport stencil quality over the cleared horizon.
  double omega_sum_dev = 0.0;  // max |omega_1+omega_2+omega_3 - 1|
  double omega_min = 1.0;      // most negative blend weight seen

  plant::ResolveStats plant_stats;
};

struct RunReport {
  std::vector<StepRecord> steps;
  double daily_welfare = 0.0;  // ¤, sum of committed welfare rates times dt
  int fallback_steps = 0;
  int plant_failures = 0;
  double max_band_violation = 0.0;   // max(0, -band_worst) over the run
  double max_temp_divergence = 0.0;  // K
  double wall_seconds = 0.0;
};

// Rolling-horizon market clearing and commitment loop. Owns the exact plant
// replica it advances with every committed interval; the caller provides the
// stationary starting state (heat-bearing modes only).
class IsoEms {
 public:
  IsoEms(const CoupledNetwork& net, EmsConfig cfg, ForecastFn forecast,
         std::optional<plant::PlantState> initial_plant);

  // Clears the horizon at the current interval, commits its first step,
  // advances the plant and returns the record.
  StepRecord step();
  RunReport run(int intervals);

  int current_step() const { return k_; }
  const plant::PlantState& plant() const;

 private:
  struct Plan {
    int step = 0;  // absolute interval the entry is for
    market::Dispatch dispatch;
    Eigen::VectorXd pump_rise;
    Eigen::VectorXd node_temp;  // clearing's temperature field (may be empty)
    Eigen::VectorXd mass_flow;
  };
  struct Memory {
    nlp::KktSolution sol;
    nlp::Layout layout;
  };

  bool heat_side() const;
  bool power_side() const;
  nlp::HorizonInputs base_inputs(const std::vector<StepForecast>& fc, nlp::Scope scope) const;
  void attach_plant_state(nlp::HorizonInputs& in, StepRecord& rec) const;
  std::optional<nlp::KktSolution> clear(nlp::Scope scope,
                                        const nlp::HorizonInputs& in, StepRecord& rec,
                                        Memory& mem, nlp::Layout& layout_out);

  const CoupledNetwork& net_;
  EmsConfig cfg_;
  ForecastFn forecast_;
  std::optional<plant::PlantState> plant_;
  int k_ = 0;

  std::map<nlp::Scope, Memory> memory_;        // warm starts per sub-problem
  std::vector<Eigen::VectorXd> predicted_;     // flows per horizon step (edge order)
  std::deque<Plan> pending_;                   // rest of the last accepted plan
  market::PriceReport last_prices_;
  std::vector<int> pipes_, pumps_;
};

}  // namespace tcs::ems
