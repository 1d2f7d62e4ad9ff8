#include "tcs/plant.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include <Eigen/Dense>

#include "tcs/common.hpp"

namespace tcs::plant {

namespace {

constexpr double kFlowTol = 1e-10;   // kg/s, Picard fixed point
constexpr double kTempTol = 1e-9;    // K
constexpr double kNewtonTol = 1e-11;
constexpr int kPicardMax = 80;
constexpr int kNewtonMax = 80;

struct Wiring {
  std::vector<int> pipes, valves, pumps, consumers, producers;
  std::map<int, int> valve_slot, pump_slot, pipe_slot, producer_slot;
  std::set<int> regulated;                      // edges driven by a control path
  std::vector<const Participant*> edge_owner;   // producer/consumer edges
};

Wiring wire(const CoupledNetwork& net) {
  Wiring w;
  w.pipes = net.edges_of_kind(EdgeKind::pipeline);
  w.valves = net.edges_of_kind(EdgeKind::valve);
  w.pumps = net.edges_of_kind(EdgeKind::pump);
  w.consumers = net.edges_of_kind(EdgeKind::consumer);
  w.producers = net.edges_of_kind(EdgeKind::producer);
  for (size_t i = 0; i < w.valves.size(); ++i) w.valve_slot[w.valves[i]] = static_cast<int>(i);
  for (size_t i = 0; i < w.pumps.size(); ++i) w.pump_slot[w.pumps[i]] = static_cast<int>(i);
  for (size_t i = 0; i < w.pipes.size(); ++i) w.pipe_slot[w.pipes[i]] = static_cast<int>(i);
  for (size_t i = 0; i < w.producers.size(); ++i)
    w.producer_slot[w.producers[i]] = static_cast<int>(i);
  for (const auto& cp : net.paths) w.regulated.insert(net.edge_index(cp.regulated_by));

  w.edge_owner.assign(net.edge_count(), nullptr);
  for (const auto& part : net.participants)
    if (part.dhn_edge >= 0) w.edge_owner[part.dhn_edge] = &part;
  for (int e : w.consumers)
    if (!w.edge_owner[e] || !w.edge_owner[e]->curve)
      throw ValidationError("plant: consumer edge id " + std::to_string(net.edges[e].id) +
                            " has no participant with a characteristic curve");
  for (int e : w.producers)
    if (!w.edge_owner[e])
      throw ValidationError("plant: producer edge id " + std::to_string(net.edges[e].id) +
                            " has no owning participant");
  return w;
}

double committed_heat(const Actuation& act, const Participant& part) {
  auto it = act.heat_mw.find(part.id);
  if (it == act.heat_mw.end())
    throw ValidationError("plant: no committed heat for participant '" + part.id + "'");
  return it->second;
}

double consumer_outlet_temp(const Participant& part, double t_supply, double t_ambient,
                            double phi_mw) {
  const auto& c = *part.curve;
  return c.t_return_ref + c.a * (t_supply - c.t_supply_ref) + c.b * (t_ambient - c.t_ambient_ref) +
         c.c * phi_mw;
}

// Demand-driven consumer flow at the current temperature estimate.
double consumer_target_flow(const CoupledNetwork& net, const Participant& part, double t_supply,
                            double t_ambient, double phi_mw) {
  const double dt = t_supply - consumer_outlet_temp(part, t_supply, t_ambient, phi_mw);
  if (dt < 0.5)
    throw PlantDivergence("plant: consumer '" + part.id + "' temperature difference collapsed (" +
                          std::to_string(dt) + " K)");
  return phi_mw * 1e6 / (net.water.heat_capacity * dt);
}

// Square hydraulic system in (mass_flow, dp) with consumer flows pinned to
// their demand values. Control-path actuators (pump or dpr pressure) are
// free through the skipped law rows; all other pumps run at the committed
// rise. Valve laws are dropped as well: a substation valve realizes whatever
// opening produces the demanded flow at the prevailing differential, so its
// kv follows in closed form once flows and pressures are known.
void solve_hydraulics(const CoupledNetwork& net, const Wiring& w, const Actuation& act,
                      const std::vector<double>& consumer_flow, hyd::HydraulicState& st,
                      ResolveStats* stats) {
  const int ne = net.edge_count();
  const int n = 2 * ne;
  const int np = static_cast<int>(net.paths.size());
  if (act.pump_rise.size() != static_cast<int>(w.pumps.size()))
    throw ValidationError("plant: pump_rise size mismatch");
  if (act.path_setpoints.size() != np)
    throw ValidationError("plant: path_setpoints size mismatch");

  Eigen::VectorXd u(n);
  u.segment(0, ne) = st.mass_flow;
  u.segment(ne, ne) = st.dp;

  auto skip_law = [&](int e) {
    return w.regulated.count(e) > 0 || net.edges[e].kind == EdgeKind::valve;
  };
  auto actuator_of = [&](int e) {
    return net.edges[e].kind == EdgeKind::pump ? act.pump_rise(w.pump_slot.at(e)) : 0.0;
  };

  auto residual = [&](const Eigen::VectorXd& uu) {
    const Eigen::VectorXd m = uu.segment(0, ne);
    const Eigen::VectorXd dp = uu.segment(ne, ne);
    Eigen::VectorXd r(n);
    int row = 0;
    r.segment(row, net.node_count() - 1) = hyd::continuity_residual(net, m);
    row += net.node_count() - 1;
    r.segment(row, net.loop_count()) = hyd::loop_residual(net, dp);
    row += net.loop_count();
    if (np > 0) {
      r.segment(row, np) = hyd::control_path_residual(net, dp, act.path_setpoints);
      row += np;
    }
    for (int e = 0; e < ne; ++e) {
      if (skip_law(e)) continue;
      r(row++) = hyd::component_pressure_residual(net, e, m(e), dp(e), actuator_of(e));
    }
    for (size_t c = 0; c < w.consumers.size(); ++c)
      r(row++) = m(w.consumers[c]) - consumer_flow[c];
    if (row != n) throw ValidationError("plant: hydraulic system is not square");
    return r;
  };

  auto jacobian = [&](const Eigen::VectorXd& uu) {
    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(n, n);
    int row = 0;
    for (int i = 0; i < net.node_count(); ++i) {
      if (i == net.reference_node) continue;
      for (int e = 0; e < ne; ++e) {
        const double a = net.incidence.coeff(i, e);
        if (a != 0.0) J(row, e) = a;
      }
      ++row;
    }
    for (int l = 0; l < net.loop_count(); ++l, ++row)
      for (int e = 0; e < ne; ++e) {
        const double v = net.loop_basis.coeff(l, e);
        if (v != 0.0) J(row, ne + e) = v;
      }
    for (int p = 0; p < np; ++p, ++row)
      for (int e = 0; e < ne; ++e) {
        const double v = net.path_matrix.coeff(p, e);
        if (v != 0.0) J(row, ne + e) = v;
      }
    for (int e = 0; e < ne; ++e) {
      if (skip_law(e)) continue;
      const auto pj = hyd::component_pressure_jacobian(net, e, uu(e), uu(ne + e), actuator_of(e));
      J(row, e) = pj.by_mass_flow;
      J(row, ne + e) = pj.by_dp;
      ++row;
    }
    for (int c : w.consumers) J(row++, c) = 1.0;
    return J;
  };

  Eigen::VectorXd r = residual(u);
  double rn = r.lpNorm<Eigen::Infinity>();
  int it = 0;
  for (; it < kNewtonMax && rn > kNewtonTol; ++it) {
    const Eigen::VectorXd du = jacobian(u).colPivHouseholderQr().solve(-r);
    if (!du.allFinite()) throw PlantDivergence("plant: singular hydraulic system");
    double alpha = 1.0;
    bool accepted = false;
    for (int back = 0; back < 30 && !accepted; ++back, alpha *= 0.5) {
      Eigen::VectorXd ut = u + alpha * du;
      Eigen::VectorXd rt = residual(ut);
      const double rtn = rt.lpNorm<Eigen::Infinity>();
      if (rtn < rn || rtn <= kNewtonTol) {
        u = std::move(ut);
        r = std::move(rt);
        rn = rtn;
        accepted = true;
      }
    }
    if (!accepted) throw PlantDivergence("plant: hydraulic line search stalled");
  }
  if (rn > kNewtonTol) throw PlantDivergence("plant: hydraulics did not converge");

  st.mass_flow = u.segment(0, ne);
  st.dp = u.segment(ne, ne);
  st.kv.resize(static_cast<int>(w.valves.size()));
  for (size_t i = 0; i < w.valves.size(); ++i) {
    const int e = w.valves[i];
    const auto& vp = *net.edges[e].valve;
    const double m = st.mass_flow(e);
    const double dp = st.dp(e);
    if (dp <= 0.0)
      throw PlantDivergence("plant: valve edge id " + std::to_string(net.edges[e].id) +
                            " would need a pressure gain (" + std::to_string(dp) + " bar)");
    st.kv(static_cast<int>(i)) =
        std::abs(m) * std::sqrt(vp.dp_ref / (vp.rho_ref * net.water.density * dp));
  }
  st.pump_dp.resize(static_cast<int>(w.pumps.size()));
  for (size_t i = 0; i < w.pumps.size(); ++i) st.pump_dp(static_cast<int>(i)) = st.dp(w.pumps[i]);
  const auto dprs = net.edges_of_kind(EdgeKind::dpr);
  st.dpr_dp.resize(static_cast<int>(dprs.size()));
  for (size_t i = 0; i < dprs.size(); ++i) st.dpr_dp(static_cast<int>(i)) = st.dp(dprs[i]);
  if (stats) {
    stats->newton_iterations += it;
    stats->hydraulic_residual = rn;
  }
}

// Linear system in (node temps, edge outlet temps) at fixed flows. The pipe
// rows use the exact transport window over the realized history; with a
// producer_pin the window degenerates to its stationary limit (the blend of
// a constant inlet is that inlet, only the loss decay remains) and producer
// outlets are held at the pinned temperatures instead of committed heats.
void solve_thermal(const CoupledNetwork& net, const Wiring& w, const Actuation& act,
                   const std::vector<thermal::ThermalHistory>& history,
                   const hyd::HydraulicState& hst, double dt,
                   const Eigen::VectorXd* producer_pin, Eigen::VectorXd& node_temp,
                   Eigen::VectorXd& edge_outlet, ResolveStats* stats) {
  const bool steady = producer_pin != nullptr;
  const int nn = net.node_count();
  const int ne = net.edge_count();
  const int n = nn + ne;
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(n, n);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(n);

  // Mixing at every node: (sum out) T_node = sum_in mdot T_edge_out.
  for (int i = 0; i < nn; ++i) {
    double out_sum = 0.0;
    for (int e = 0; e < ne; ++e) {
      const double a = net.incidence.coeff(i, e);
      if (a == 0.0) continue;
      if (a < 0.0) out_sum += hst.mass_flow(e);
      else A(i, nn + e) -= hst.mass_flow(e);
    }
    if (out_sum <= 1e-12)
      throw PlantDivergence("plant: node id " + std::to_string(net.nodes[i].id) +
                            " has no outgoing flow");
    A(i, i) = out_sum;
  }

  for (int e = 0; e < ne; ++e) {
    const int row = nn + e;
    const int from = net.node_index(net.edges[e].from_node);
    const double m = hst.mass_flow(e);
    A(row, row) = 1.0;
    switch (net.edges[e].kind) {
      case EdgeKind::pipeline: {
        if (m <= 1e-9)
          throw PlantDivergence("plant: stagnant or reversing pipe id " +
                                std::to_string(net.edges[e].id));
        const auto& pp = *net.edges[e].pipeline;
        const double mass = net.water.density * pp.cross_section * pp.length;
        if (steady) {
          const double decay = thermal::loss_decay(mass / m, pp, net.water);
          A(row, from) -= decay;
          b(row) = (1.0 - decay) * act.ambient_temp;
          break;
        }
        const auto& hist = history[w.pipe_slot.at(e)];
        thermal::SeriesLookup flow = [&](int back) {
          return back == 0 ? m : hist.flow_back(back);
        };
        const auto win = thermal::exact_window(flow, hist.depth(), mass, dt);
        const auto st = thermal::outlet_stencil(win, flow, pp, net.water, dt);
        // T_out = Ta + decay (sum_w c_w T_in(back_w) - Ta); only the current
        // inlet (back 0) is an unknown, older samples come from the history.
        double known = -(1.0 - st.decay) * act.ambient_temp;
        for (const auto& [back, coeff] : st.weights) {
          if (back == 0)
            A(row, from) -= st.decay * coeff;
          else
            known -= st.decay * coeff * hist.temp_back(back);
        }
        b(row) = -known;
        break;
      }
      case EdgeKind::producer: {
        if (steady) {
          b(row) = (*producer_pin)(w.producer_slot.at(e));
          break;
        }
        const auto& part = *w.edge_owner[e];
        A(row, from) = -1.0;
        b(row) = committed_heat(act, part) * 1e6 / (net.water.heat_capacity * m);
        break;
      }
      case EdgeKind::consumer: {
        const auto& part = *w.edge_owner[e];
        const auto& c = *part.curve;
        A(row, from) = -c.a;
        b(row) = c.t_return_ref - c.a * c.t_supply_ref +
                 c.b * (act.ambient_temp - c.t_ambient_ref) + c.c * committed_heat(act, part);
        break;
      }
      default:  // valves, pumps and dprs forward the inlet temperature
        A(row, from) = -1.0;
        break;
    }
  }

  const Eigen::VectorXd t = A.partialPivLu().solve(b);
  if (!t.allFinite()) throw PlantDivergence("plant: singular thermal system");
  node_temp = t.segment(0, nn);
  edge_outlet = t.segment(nn, ne);
  if (stats) stats->thermal_residual = (A * t - b).lpNorm<Eigen::Infinity>();
}

// Self-consistency between demand-driven consumer flows and the temperature
// field they produce. The plain fixed-point map has a gain of essentially
// phi_produced / phi_consumed -- marginally unstable whenever the producers
// cover the losses -- so the defect G(flows) - flows is driven to zero with
// a small Newton over the consumer flows (finite-difference Jacobian, one
// hydraulic+thermal solve per column).
void resolve(const CoupledNetwork& net, const Wiring& w, const Actuation& act,
             const std::vector<thermal::ThermalHistory>& history, double dt,
             const Eigen::VectorXd* producer_pin, hyd::HydraulicState& hst,
             Eigen::VectorXd& node_temp, Eigen::VectorXd& edge_outlet, ResolveStats* stats) {
  const int nc = static_cast<int>(w.consumers.size());

  // Leaves the state at the evaluated flows.
  auto defect = [&](const Eigen::VectorXd& flows) {
    std::vector<double> pinned(flows.data(), flows.data() + flows.size());
    solve_hydraulics(net, w, act, pinned, hst, stats);
    solve_thermal(net, w, act, history, hst, dt, producer_pin, node_temp, edge_outlet, stats);
    Eigen::VectorXd g(nc);
    for (int c = 0; c < nc; ++c) {
      const auto& part = *w.edge_owner[w.consumers[c]];
      const double ts = node_temp(net.node_index(net.edges[w.consumers[c]].from_node));
      g(c) = consumer_target_flow(net, part, ts, act.ambient_temp, committed_heat(act, part)) -
             flows(c);
    }
    return g;
  };

  Eigen::VectorXd t(nc);
  for (int c = 0; c < nc; ++c) {
    const auto& part = *w.edge_owner[w.consumers[c]];
    const double ts = node_temp(net.node_index(net.edges[w.consumers[c]].from_node));
    t(c) = consumer_target_flow(net, part, ts, act.ambient_temp, committed_heat(act, part));
  }

  Eigen::VectorXd F = defect(t);
  for (int it = 0; it < kPicardMax; ++it) {
    if (stats) stats->picard_iterations = it + 1;
    if (F.lpNorm<Eigen::Infinity>() < kFlowTol) return;
    Eigen::MatrixXd J(nc, nc);
    for (int c = 0; c < nc; ++c) {
      const double h = 1e-6 * std::max(1.0, std::abs(t(c)));
      Eigen::VectorXd tp = t;
      tp(c) += h;
      J.col(c) = (defect(tp) - F) / h;
    }
    const Eigen::VectorXd step = J.partialPivLu().solve(-F);
    if (!step.allFinite()) throw PlantDivergence("plant: singular consumer flow update");
    double alpha = 1.0;
    bool accepted = false;
    for (int back = 0; back < 20 && !accepted; ++back, alpha *= 0.5) {
      const Eigen::VectorXd tt = t + alpha * step;
      if (tt.minCoeff() <= 0.0) continue;
      const Eigen::VectorXd Ft = defect(tt);
      if (Ft.lpNorm<Eigen::Infinity>() < F.lpNorm<Eigen::Infinity>() ||
          Ft.lpNorm<Eigen::Infinity>() < kFlowTol) {
        t = tt;
        F = Ft;
        accepted = true;
      }
    }
    if (!accepted) throw PlantDivergence("plant: consumer flow update stalled");
  }
  throw PlantDivergence("plant: flow/temperature fixed point did not converge");
}

std::vector<double> producer_outlets(const CoupledNetwork& net, const Wiring& w,
                                     const Eigen::VectorXd& edge_outlet) {
  std::vector<double> out;
  out.reserve(w.producers.size());
  for (int e : w.producers) out.push_back(edge_outlet(e));
  return out;
}

int history_depth(const CoupledNetwork& net, const DhnEdge& e, double dt) {
  const auto& pp = *e.pipeline;
  const double mass = net.water.density * pp.cross_section * pp.length;
  const double m_min = std::max(e.m_min, 1e-3);
  return static_cast<int>(std::ceil(mass / (m_min * dt))) + 8;
}

}  // namespace

PlantState init_plant(const CoupledNetwork& net, const Eigen::VectorXd& node_temp_guess,
                      const Eigen::VectorXd& start_flow, const Actuation& act, double dt,
                      ResolveStats* stats) {
  const Wiring w = wire(net);
  if (node_temp_guess.size() != net.node_count() || start_flow.size() != net.edge_count())
    throw ValidationError("plant: initial state size mismatch");

  PlantState st;
  st.hydraulic.mass_flow = start_flow;
  st.hydraulic.kv = Eigen::VectorXd::Zero(static_cast<int>(w.valves.size()));
  st.hydraulic.dp = Eigen::VectorXd::Zero(net.edge_count());
  for (int e = 0; e < net.edge_count(); ++e) {
    const auto& ed = net.edges[e];
    if (ed.kind == EdgeKind::pump && !w.regulated.count(e))
      st.hydraulic.dp(e) = -act.pump_rise(w.pump_slot.at(e));
    else
      st.hydraulic.dp(e) = ed.friction * start_flow(e) * start_flow(e);
  }
  st.node_temp = node_temp_guess;
  st.edge_outlet = Eigen::VectorXd::Zero(net.edge_count());

  // Producers hold the outlet temperature the guess assigns to their supply
  // node; the realized heats then absorb the standing losses, which keeps
  // the startup level where the caller put it.
  Eigen::VectorXd producer_pin(static_cast<int>(w.producers.size()));
  for (size_t i = 0; i < w.producers.size(); ++i)
    producer_pin(static_cast<int>(i)) =
        node_temp_guess(net.node_index(net.edges[w.producers[i]].to_node));

  std::vector<thermal::ThermalHistory> empty;  // steady solve reads no history
  resolve(net, w, act, empty, dt, &producer_pin, st.hydraulic, st.node_temp, st.edge_outlet,
          stats);

  st.producer_outlet = producer_outlets(net, w, st.edge_outlet);
  st.history.reserve(w.pipes.size());
  for (int e : w.pipes) {
    thermal::ThermalHistory h(history_depth(net, net.edges[e], dt));
    h.fill(st.node_temp(net.node_index(net.edges[e].from_node)), st.hydraulic.mass_flow(e));
    st.history.push_back(std::move(h));
  }
  return st;
}

PlantState advance(const CoupledNetwork& net, const PlantState& prev, const Actuation& act,
                   double dt, ResolveStats* stats) {
  const Wiring w = wire(net);
  if (prev.history.size() != w.pipes.size())
    throw ValidationError("plant: history/pipe count mismatch");

  PlantState st = prev;
  resolve(net, w, act, st.history, dt, nullptr, st.hydraulic, st.node_temp, st.edge_outlet,
          stats);
  st.producer_outlet = producer_outlets(net, w, st.edge_outlet);
  for (size_t i = 0; i < w.pipes.size(); ++i) {
    const int e = w.pipes[i];
    st.history[i].push(st.node_temp(net.node_index(net.edges[e].from_node)),
                       st.hydraulic.mass_flow(e));
  }
  return st;
}

PlantBands plant_bands(const CoupledNetwork& net, const PlantState& st,
                       const std::vector<double>& producer_outlet_prev) {
  PlantBands out;
  out.hydraulic = hyd::hydraulic_band_residual(net, st.hydraulic);
  const auto tb = thermal::thermal_band_residual(net, st.node_temp, st.producer_outlet,
                                                 producer_outlet_prev);
  out.thermal.resize(tb.node_band.size() + tb.producer_band.size());
  out.thermal << tb.node_band, tb.producer_band;
  return out;
}

double PlantBands::worst() const {
  double m = std::numeric_limits<double>::infinity();
  if (hydraulic.size() > 0) m = std::min(m, hydraulic.minCoeff());
  if (thermal.size() > 0) m = std::min(m, thermal.minCoeff());
  return m;
}

}  // namespace tcs::plant
