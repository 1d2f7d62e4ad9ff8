#pragma once

#include <map>
#include <utility>
#include <vector>

#include "tcs/network.hpp"
#include "tcs/nlp.hpp"
#include "tcs/thermal.hpp"

namespace fixtures {

// Smallest coupled system that exercises every element kind: a two-bus feeder
// with a generator, a flexible load and a CHP, and a single-loop heating
// circuit supply 1 -> pipe -> 2 -> valve -> 3 -> consumer -> return 4 ->
// pipe -> 5 -> pump -> 6 -> producer -> 1.
// Same content before finalize(), for tests that mutate the structure.
inline tcs::CoupledNetwork micro_net_raw() {
  using namespace tcs;
  CoupledNetwork net;
  net.base_mva = 10.0;

  net.buses = {{1, 0.95, 1.05, true}, {2, 0.95, 1.05, false}};
  net.feeders = {{1, 2, 5.0, -15.0}};

  net.nodes = {
      {1, DhnSide::supply, 340.0, 390.0},  {2, DhnSide::supply, 340.0, 390.0},
      {3, DhnSide::supply, 340.0, 390.0},  {4, DhnSide::return_, 300.0, 340.0},
      {5, DhnSide::return_, 300.0, 340.0}, {6, DhnSide::return_, 300.0, 340.0},
  };

  PipelineParams pl;
  pl.length = 300.0;
  pl.cross_section = 0.01;
  pl.diameter = 0.1128;
  pl.roughness = 4.0e-4;
  pl.thermal_resistance = 80.0;
  pl.reference_flow = 5.5;

  auto edge = [](int id, int from, int to, EdgeKind kind) {
    DhnEdge e;
    e.id = id;
    e.from_node = from;
    e.to_node = to;
    e.kind = kind;
    e.m_min = 0.05;
    e.m_max = 50.0;
    e.dp_min = 0.0;
    e.dp_max = 5.0;
    return e;
  };

  DhnEdge e1 = edge(1, 1, 2, EdgeKind::pipeline);
  e1.pipeline = pl;
  e1.friction = precompute_friction(pl, net.water).mu;
  DhnEdge e2 = edge(2, 2, 3, EdgeKind::valve);
  e2.valve = ValveParams{0.05, 1.0, 1000.0};
  DhnEdge e3 = edge(3, 3, 4, EdgeKind::consumer);
  e3.friction = 0.002;
  DhnEdge e4 = edge(4, 4, 5, EdgeKind::pipeline);
  e4.pipeline = pl;
  e4.friction = e1.friction;
  DhnEdge e5 = edge(5, 5, 6, EdgeKind::pump);
  e5.dp_min = -3.0;
  e5.dp_max = 0.0;
  DhnEdge e6 = edge(6, 6, 1, EdgeKind::producer);
  e6.friction = 0.002;
  net.edges = {e1, e2, e3, e4, e5, e6};

  Participant gen;
  gen.id = "gen";
  gen.network = NetworkKind::epn;
  gen.role = Role::producer;
  gen.flexible = true;
  gen.bus = 1;
  gen.q_bounds = {{-5.0, 5.0}};

  Participant load;
  load.id = "load";
  load.network = NetworkKind::epn;
  load.role = Role::consumer;
  load.flexible = true;
  load.bus = 2;

  Participant base;
  base.id = "base_load";
  base.network = NetworkKind::epn;
  base.role = Role::consumer;
  base.flexible = false;
  base.bus = 2;

  Participant chp;
  chp.id = "chp";
  chp.network = NetworkKind::converter;
  chp.role = Role::producer;
  chp.flexible = true;
  chp.bus = 2;
  chp.q_bounds = {{-4.0, 4.0}};
  chp.supply_node = 1;
  chp.return_node = 6;
  chp.dhn_edge = 6;
  chp.coupling = 1.42;
  chp.electric_sign = +1;
  chp.ramp_limit = 2.0;
  chp.min_outlet = 350.0;

  Participant cons;
  cons.id = "cons";
  cons.network = NetworkKind::dhn;
  cons.role = Role::consumer;
  cons.flexible = true;
  cons.supply_node = 3;
  cons.return_node = 4;
  cons.dhn_edge = 3;
  cons.curve = ConsumerCurve{315.0, 360.0, 278.15, 0.2, 0.1, 1.5};

  net.participants = {gen, load, base, chp, cons};
  return net;
}

inline tcs::CoupledNetwork micro_net() {
  auto net = micro_net_raw();
  net.finalize();
  return net;
}

// Matching two-step horizon: fixed pump, steady stencils from a 5.5 kg/s
// prediction, steady thermal history.
inline tcs::nlp::HorizonInputs micro_inputs(const tcs::CoupledNetwork& net,
                                            tcs::nlp::Scope scope = tcs::nlp::Scope::joint,
                                            int steps = 2) {
  using namespace tcs;
  nlp::HorizonInputs in;
  in.steps = steps;
  in.dt = 900.0;
  in.scope = scope;

  for (int k = 0; k < steps; ++k) {
    std::vector<market::ParticipantBid> bids;
    bids.push_back({"gen", market::Side::epn, 30.0, 0.0, 8.0});
    bids.push_back({"load", market::Side::epn, 9.0, -4.0, -1.0});
    bids.push_back({"chp", market::Side::epn, 20.0, 0.2, 3.0});
    bids.push_back({"chp", market::Side::dhn, 12.0, 0.2, 5.0});
    bids.push_back({"cons", market::Side::dhn, 11.0, 0.3, 1.5});
    in.bids.push_back(std::move(bids));
    in.fixed_epn.push_back({{"base_load", -2.0}});
    in.fixed_dhn.push_back({});
    in.path_setpoints.push_back(Eigen::VectorXd(0));
    in.pump_setpoints.push_back(Eigen::VectorXd::Constant(1, 0.7));
  }
  in.ambient_temp = Eigen::VectorXd::Constant(steps, 278.15);
  in.pumps_flexible = false;

  const auto pipes = net.edges_of_kind(EdgeKind::pipeline);
  thermal::SeriesLookup steady = [](int) { return 5.5; };
  for (int p = 0; p < static_cast<int>(pipes.size()); ++p) {
    const auto& pp = *net.edges[pipes[p]].pipeline;
    const double mass = net.water.density * pp.cross_section * pp.length;
    std::vector<thermal::OutletStencil> per_step;
    for (int k = 0; k < steps; ++k) {
      const auto w = thermal::exact_window(steady, 8, mass, in.dt);
      per_step.push_back(thermal::outlet_stencil(w, steady, pp, net.water, in.dt));
    }
    in.stencils.push_back(std::move(per_step));
  }
  in.history_inlet_temp = [](int pipe, int) { return pipe == 0 ? 360.0 : 317.0; };
  in.producer_outlet_prev = {368.0};

  in.start_mass_flow = Eigen::VectorXd::Constant(net.edge_count(), 5.5);
  in.start_dp = Eigen::VectorXd(net.edge_count());
  in.start_dp << 0.15, 0.12, 0.06, 0.15, -0.7, 0.06;
  in.start_node_temp = Eigen::VectorXd(net.node_count());
  in.start_node_temp << 368.0, 367.5, 367.3, 317.0, 316.8, 316.7;
  return in;
}

}  // namespace fixtures
