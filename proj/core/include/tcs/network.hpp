#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include "tcs/common.hpp"

namespace tcs {

enum class DhnSide { supply, return_ };
enum class EdgeKind { pipeline, pump, producer, valve, dpr, consumer };
enum class NetworkKind { epn, dhn, converter };
enum class Role { producer, consumer, storage };

const char* to_string(EdgeKind k);
const char* to_string(DhnSide s);
const char* to_string(NetworkKind n);
const char* to_string(Role r);

struct WaterProperties {
  double density = 975.0;        // kg/m^3
  double heat_capacity = 4190.0; // J/(kg K)
  double viscosity = 2.82e-4;    // Pa s, used only for the friction precompute
};

struct EpnBus {
  int id = 0;
  double v_min = 0.95;  // p.u.
  double v_max = 1.05;  // p.u.
  bool is_reference = false;
};

// Series admittance of one feeder section, p.u. on the system base.
struct EpnFeeder {
  int from_bus = 0;
  int to_bus = 0;
  double conductance = 0.0;
  double susceptance = 0.0;
};

struct DhnNode {
  int id = 0;
  DhnSide side = DhnSide::supply;
  double t_min = 0.0;  // K
  double t_max = 0.0;  // K
};

struct PipelineParams {
  double length = 0.0;             // m
  double cross_section = 0.0;      // m^2
  double diameter = 0.0;           // m
  double roughness = 0.0;          // m
  double thermal_resistance = 0.0; // (m K)/W per metre of pipe
  double reference_flow = 0.0;     // kg/s, operating point for the friction fit
};

struct ValveParams {
  double kvs = 0.0;       // m^3/s at the reference pressure drop, fully open
  double dp_ref = 1.0;    // bar
  double rho_ref = 1000.0;// kg/m^3
};

struct DhnEdge {
  int id = 0;
  int from_node = 0;
  int to_node = 0;
  EdgeKind kind = EdgeKind::pipeline;
  double m_min = 0.0;   // kg/s
  double m_max = 0.0;   // kg/s
  double dp_min = 0.0;  // bar
  double dp_max = 0.0;  // bar
  // Quadratic loss coefficient dp = mu * mdot^2 [bar s^2/kg^2]. For pipelines
  // this is precomputed from the geometry at load time; producers and
  // consumers carry it directly in the scenario.
  double friction = 0.0;
  std::optional<PipelineParams> pipeline;
  std::optional<ValveParams> valve;
};

// Ordered edge walk between two measurement points. The regulating pump or
// DPR adjusts its own pressure rise so that the signed sum of edge pressure
// drops along the walk matches the scheduled setpoint.
struct ControlPath {
  int id = 0;
  std::vector<int> edges;        // edge ids
  std::vector<int> orientation;  // +1 with edge direction, -1 against
  int regulated_by = 0;          // pump or dpr edge id
  std::vector<double> dp_setpoint_bar;  // schedule, broadcast if length 1
};

// Affine heat exchanger characteristic of a consumer:
//   T_out = t_return_ref + a (T_s - t_supply_ref) + b (T_a - t_ambient_ref) + c Phi
// with Phi in MW. Defaults model a constant return temperature.
struct ConsumerCurve {
  double t_return_ref = 0.0;   // K
  double t_supply_ref = 0.0;   // K
  double t_ambient_ref = 0.0;  // K
  double a = 0.0;
  double b = 0.0;
  double c = 0.0;  // K/MW
};

struct Participant {
  std::string id;
  NetworkKind network = NetworkKind::epn;
  Role role = Role::consumer;
  bool flexible = false;

  // EPN attachment (epn participants and converters).
  int bus = -1;
  std::optional<std::pair<double, double>> q_bounds;  // MVAr, enables a Q variable

  // DHN attachment (dhn participants and converters).
  int supply_node = -1;
  int return_node = -1;
  int dhn_edge = -1;  // the producer/consumer edge owned by this participant

  // Converters: Phi = coupling * electric_sign * P. Heat pumps consume
  // electricity (sign -1), CHP units produce it (sign +1).
  double coupling = 0.0;
  int electric_sign = +1;

  // Heat producers.
  double ramp_limit = 2.0;   // K per step, |T_out(k) - T_out(k-1)|
  double min_outlet = 0.0;   // K, 0 disables the bound

  // Heat consumers.
  std::optional<ConsumerCurve> curve;
};

class CoupledNetwork {
 public:
  std::vector<EpnBus> buses;
  std::vector<EpnFeeder> feeders;
  std::vector<DhnNode> nodes;
  std::vector<DhnEdge> edges;
  std::vector<ControlPath> paths;
  std::vector<Participant> participants;
  WaterProperties water;
  double base_mva = 1.0;

  // Assembled bus admittance matrix, symmetric, shunt free.
  Eigen::MatrixXd g_bus;
  Eigen::MatrixXd b_bus;

  // DHN structure matrices over dense indices.
  Eigen::SparseMatrix<double> incidence;    // nodes x edges
  Eigen::SparseMatrix<double> loop_basis;   // fundamental loops x edges
  Eigen::SparseMatrix<double> path_matrix;  // control paths x edges

  int reference_bus = -1;   // dense index
  int reference_node = -1;  // dense index of the dropped continuity row

  int bus_index(int id) const;
  int node_index(int id) const;
  int edge_index(int id) const;
  int participant_index(const std::string& id) const;

  int bus_count() const { return static_cast<int>(buses.size()); }
  int node_count() const { return static_cast<int>(nodes.size()); }
  int edge_count() const { return static_cast<int>(edges.size()); }
  int loop_count() const { return static_cast<int>(loop_basis.rows()); }

  std::vector<int> edges_of_kind(EdgeKind k) const;
  std::vector<int> participants_at_bus(int bus_idx) const;

  // Rebuilds admittance, incidence, loop basis and path matrix from the
  // element lists and validates structural invariants. Throws ValidationError.
  void finalize();

 private:
  std::map<int, int> bus_ids_;
  std::map<int, int> node_ids_;
  std::map<int, int> edge_ids_;
  std::map<std::string, int> participant_ids_;
};

// Precomputed quadratic friction fit for one pipeline.
struct FrictionFit {
  double mu = 0.0;          // bar s^2/kg^2
  double reynolds = 0.0;    // at the reference flow
  double darcy_factor = 0.0;
  bool laminar = false;     // reference flow fell below the turbulent range
  int iterations = 0;
};

// Fits dp = mu mdot^2 so that it matches the Darcy-Weisbach drop at the
// reference flow, with the Colebrook-White friction factor (fixed point until
// 1e-10 relative). Falls back to 64/Re below the laminar threshold.
FrictionFit precompute_friction(const PipelineParams& pipe, const WaterProperties& water);

}  // namespace tcs
