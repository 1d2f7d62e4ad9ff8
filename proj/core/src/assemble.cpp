#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "tcs/epn.hpp"
#include "tcs/nlp.hpp"

namespace tcs::nlp {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

[[noreturn]] void fail(const std::string& msg) { throw ValidationError(msg); }

std::string str(int v) { return std::to_string(v); }

}  // namespace

// Typed constraint descriptors. Everything is resolved to flat column/row
// indices at assembly; evaluation is a switch-free pass over these vectors.
struct CoupledProblem::Rows {
  // sum(terms) + constant = 0
  struct Lin {
    int row;
    std::vector<std::pair<int, double>> terms;
    double constant = 0.0;
  };
  std::vector<Lin> lin;

  // dp - mu mdot^2 = 0
  struct Quad {
    int row, dp_col, m_col;
    double mu;
  };
  std::vector<Quad> quad;

  // kv^2 rr dp - dpref mdot^2 = 0
  struct Valve {
    int row, dp_col, m_col, kv_col;
    double rr, dpref;
  };
  std::vector<Valve> valve;

  // (sum out m) t_node - sum in m tout = 0
  struct Mix {
    int row, tnode_col;
    std::vector<int> out_m_cols;
    std::vector<std::pair<int, int>> in;  // (m_col, tout_col)
  };
  std::vector<Mix> mix;

  // tout - tret - phi * wpm / (cp mdot) = 0, phi fixed when phi_col < 0
  struct Producer {
    int row, tout_col, tret_col, m_col, phi_col;
    double phi_const;
  };
  std::vector<Producer> producer;

  // mdot cp (ts - tout) - phi = 0 in MW, phi fixed when phi_col < 0
  struct ConsumerFlow {
    int row, m_col, ts_col, tout_col, phi_col;
    double phi_const;
  };
  std::vector<ConsumerFlow> cflow;

  // AC bus balance of one step.
  struct EpnStep {
    int step, row_p0, row_q0, v0, d0;
    std::vector<std::pair<int, int>> p_cols;  // (bus index, column)
    std::vector<std::pair<int, int>> q_cols;
    Eigen::VectorXd fixed_p_pu;
    Eigen::VectorXd fixed_q_pu;
  };
  std::vector<EpnStep> epn;

  // Ramp band pair: limit -+ (tout - prev) >= 0.
  struct Ramp {
    int row_up, row_dn, tout_col, prev_col;  // prev_col < 0: use prev_const
    double prev_const, limit;
  };
  std::vector<Ramp> ramp;
};

std::unique_ptr<CoupledProblem> assemble(const CoupledNetwork& net, const HorizonInputs& in) {
  return std::unique_ptr<CoupledProblem>(new CoupledProblem(net, in));
}

CoupledProblem::CoupledProblem(const CoupledNetwork& net, HorizonInputs in)
    : net_(net), in_(std::move(in)), rows_(std::make_shared<Rows>()) {
  if (in_.steps <= 0) fail("horizon.steps: must be >= 1");
  if (in_.dt <= 0) fail("horizon.step_seconds: must be > 0");
  build_layout();
  build_bounds_and_objective();
  build_rows();
}

namespace {

struct Families {
  bool epn = false, dhn = false;
};

Families families_of(Scope s) {
  Families f;
  f.epn = s != Scope::dhn_only;
  f.dhn = s != Scope::epn_only;
  return f;
}

bool epn_side(const Participant& p) {
  return p.network == NetworkKind::epn || p.network == NetworkKind::converter;
}
bool dhn_side(const Participant& p) {
  return p.network == NetworkKind::dhn || p.network == NetworkKind::converter;
}
bool heat_source(const CoupledNetwork& net, const Participant& p) {
  return p.dhn_edge >= 0 && net.edges[p.dhn_edge].kind == EdgeKind::producer;
}

}  // namespace

void CoupledProblem::build_layout() {
  const auto fam = families_of(in_.scope);
  const int H = in_.steps;
  auto& L = layout_;
  L.steps = H;
  L.v0.assign(H, -1);
  L.delta0.assign(H, -1);
  L.p_var.resize(H);
  L.q_var.resize(H);
  L.phi_var.resize(H);
  L.mflow0.assign(H, -1);
  L.dp0.assign(H, -1);
  L.kv0.assign(H, -1);
  L.tnode0.assign(H, -1);
  L.tout1_0.assign(H, -1);
  L.tout2_0.assign(H, -1);
  L.toutc0.assign(H, -1);
  L.row_p0.assign(H, -1);
  L.row_q0.assign(H, -1);
  L.row_mix0.assign(H, -1);

  if (static_cast<int>(in_.bids.size()) != H) fail("bids: expected one list per horizon step");
  if (fam.dhn) {
    if (in_.ambient_temp.size() != H) fail("forecasts.ambient: expected one value per step");
    if (static_cast<int>(in_.path_setpoints.size()) != H)
      fail("dhn.control_paths: expected setpoints for every step");
    if (static_cast<int>(in_.stencils.size()) !=
        static_cast<int>(net_.edges_of_kind(EdgeKind::pipeline).size()))
      fail("thermal stencils: expected one list per pipeline");
  }

  for (int e = 0; e < net_.edge_count(); ++e) {
    if (net_.edges[e].kind == EdgeKind::pipeline) L.pipe_of_tout.push_back(e);
    else L.comp_of_toutc.push_back(e);
  }

  int col = 0;
  for (int k = 0; k < H; ++k) {
    if (fam.epn) {
      L.v0[k] = col;
      col += net_.bus_count();
      L.delta0[k] = col;
      col += net_.bus_count() - 1;
    }
    for (const auto& bid : in_.bids[k]) {
      const int pi = net_.participant_index(bid.participant);
      const auto& part = net_.participants[pi];
      if (!part.flexible) fail("bids: inflexible participant '" + bid.participant + "' submitted a bid");
      if (bid.side == market::Side::epn) {
        if (!epn_side(part)) fail("bids: participant '" + bid.participant + "' has no epn side");
        if (!fam.epn) continue;
        if (!L.p_var[k].emplace(bid.participant, col).second)
          fail("bids: duplicate epn bid for '" + bid.participant + "' at step " + str(k));
        ++col;
      } else {
        if (!dhn_side(part)) fail("bids: participant '" + bid.participant + "' has no dhn side");
        if (bid.min_power < 0) fail("bids: dhn bid of '" + bid.participant + "' has negative floor");
        if (!fam.dhn) continue;
        if (!L.phi_var[k].emplace(bid.participant, col).second)
          fail("bids: duplicate dhn bid for '" + bid.participant + "' at step " + str(k));
        ++col;
      }
    }
    if (fam.epn) {
      for (const auto& part : net_.participants) {
        if (!epn_side(part) || !part.q_bounds) continue;
        L.q_var[k].emplace(part.id, col);
        ++col;
      }
      // Every flexible epn-side participant needs a bid each step.
      for (const auto& part : net_.participants) {
        if (epn_side(part) && part.flexible && !L.p_var[k].count(part.id))
          fail("bids: missing epn bid for flexible participant '" + part.id + "' at step " +
               str(k));
      }
    }
    if (fam.dhn) {
      for (const auto& part : net_.participants) {
        if (dhn_side(part) && part.flexible && !L.phi_var[k].count(part.id))
          fail("bids: missing dhn bid for flexible participant '" + part.id + "' at step " +
               str(k));
      }
      L.mflow0[k] = col;
      col += net_.edge_count();
      L.dp0[k] = col;
      col += net_.edge_count();
      L.kv0[k] = col;
      col += static_cast<int>(net_.edges_of_kind(EdgeKind::valve).size());
      L.tnode0[k] = col;
      col += net_.node_count();
      L.tout1_0[k] = col;
      col += static_cast<int>(L.pipe_of_tout.size());
      L.tout2_0[k] = col;
      col += static_cast<int>(L.pipe_of_tout.size());
      L.toutc0[k] = col;
      col += static_cast<int>(L.comp_of_toutc.size());
    }
  }
  L.num_vars = col;
}

void CoupledProblem::build_bounds_and_objective() {
  const auto fam = families_of(in_.scope);
  const int H = in_.steps;
  auto& L = layout_;
  bounds_.lower = Eigen::VectorXd::Constant(L.num_vars, -kInf);
  bounds_.upper = Eigen::VectorXd::Constant(L.num_vars, kInf);
  grad_ = Eigen::VectorXd::Zero(L.num_vars);
  x0_ = Eigen::VectorXd::Zero(L.num_vars);
  var_scale_ = Eigen::VectorXd::Ones(L.num_vars);

  const auto valves = net_.edges_of_kind(EdgeKind::valve);
  const double margin = in_.thermal_margin;

  for (int k = 0; k < H; ++k) {
    if (fam.epn) {
      for (int i = 0; i < net_.bus_count(); ++i) {
        bounds_.lower(L.v0[k] + i) = net_.buses[i].v_min;
        bounds_.upper(L.v0[k] + i) = net_.buses[i].v_max;
        x0_(L.v0[k] + i) = 1.0;
      }
      for (int i = 0; i < net_.bus_count() - 1; ++i) x0_(L.delta0[k] + i) = 0.0;
      for (const auto& part : net_.participants) {
        auto itq = L.q_var[k].find(part.id);
        if (itq != L.q_var[k].end()) {
          bounds_.lower(itq->second) = part.q_bounds->first;
          bounds_.upper(itq->second) = part.q_bounds->second;
          x0_(itq->second) = 0.5 * (part.q_bounds->first + part.q_bounds->second);
        }
      }
    }
    for (const auto& bid : in_.bids[k]) {
      const auto& vars = bid.side == market::Side::epn ? L.p_var[k] : L.phi_var[k];
      auto it = vars.find(bid.participant);
      if (it == vars.end()) continue;  // out of scope
      if (bid.min_power > bid.max_power)
        fail("bids: '" + bid.participant + "' step " + str(k) + ": min_power_mw above max_power_mw");
      bounds_.lower(it->second) = bid.min_power;
      bounds_.upper(it->second) = bid.max_power;
      x0_(it->second) = 0.5 * (bid.min_power + bid.max_power);
      const int pi = net_.participant_index(bid.participant);
      const auto& part = net_.participants[pi];
      // Welfare enters negated (the solver minimizes). EPN terms are
      // -price * signed injection for every role; DHN terms split by role.
      if (bid.side == market::Side::epn) {
        grad_(it->second) += bid.price;
      } else {
        grad_(it->second) += heat_source(net_, part) ? bid.price : -bid.price;
      }
    }
    if (fam.dhn) {
      int pump_slot = 0;
      for (int e = 0; e < net_.edge_count(); ++e) {
        const auto& ed = net_.edges[e];
        bounds_.lower(L.mflow0[k] + e) = ed.m_min;
        bounds_.upper(L.mflow0[k] + e) = ed.m_max;
        x0_(L.mflow0[k] + e) = in_.start_mass_flow.size() == net_.edge_count()
                                   ? in_.start_mass_flow(e)
                                   : 0.5 * (ed.m_min + ed.m_max);
        double lo = ed.dp_min, hi = ed.dp_max;
        if (ed.kind == EdgeKind::pump) {
          // dp of a pump edge is minus the head rise
          if (in_.pumps_flexible && pump_slot < static_cast<int>(in_.pump_bounds.size())) {
            lo = std::max(lo, -in_.pump_bounds[pump_slot].second);
            hi = std::min(hi, -in_.pump_bounds[pump_slot].first);
          }
          ++pump_slot;
        }
        // Authority reserve: never clear a valve onto its zero-drop edge,
        // the realized flows would have nothing left to absorb.
        if (ed.kind == EdgeKind::valve) lo += in_.valve_margin;
        bounds_.lower(L.dp0[k] + e) = lo;
        bounds_.upper(L.dp0[k] + e) = hi;
        x0_(L.dp0[k] + e) =
            in_.start_dp.size() == net_.edge_count() ? in_.start_dp(e) : 0.5 * (lo + hi);
      }
      for (size_t w = 0; w < valves.size(); ++w) {
        const auto& vp = *net_.edges[valves[w]].valve;
        bounds_.lower(L.kv0[k] + static_cast<int>(w)) = 0.0;
        bounds_.upper(L.kv0[k] + static_cast<int>(w)) = vp.kvs;
        x0_(L.kv0[k] + static_cast<int>(w)) = 0.5 * vp.kvs;
        var_scale_(L.kv0[k] + static_cast<int>(w)) = vp.kvs;
      }
      for (int i = 0; i < net_.node_count(); ++i) {
        bounds_.lower(L.tnode0[k] + i) = net_.nodes[i].t_min + margin;
        bounds_.upper(L.tnode0[k] + i) = net_.nodes[i].t_max - margin;
        if (bounds_.lower(L.tnode0[k] + i) >= bounds_.upper(L.tnode0[k] + i))
          fail("dhn.nodes: temperature band of node id " + str(net_.nodes[i].id) +
               " collapses under the thermal margin");
        x0_(L.tnode0[k] + i) = in_.start_node_temp.size() == net_.node_count()
                                   ? std::clamp(in_.start_node_temp(i),
                                                bounds_.lower(L.tnode0[k] + i),
                                                bounds_.upper(L.tnode0[k] + i))
                                   : 0.5 * (net_.nodes[i].t_min + net_.nodes[i].t_max);
        var_scale_(L.tnode0[k] + i) = 100.0;
      }
      for (size_t p = 0; p < L.pipe_of_tout.size(); ++p) {
        const int tail = net_.node_index(net_.edges[L.pipe_of_tout[p]].from_node);
        const double t0 = x0_(L.tnode0[k] + tail);
        x0_(L.tout1_0[k] + static_cast<int>(p)) = t0;
        x0_(L.tout2_0[k] + static_cast<int>(p)) = t0;
        var_scale_(L.tout1_0[k] + static_cast<int>(p)) = 100.0;
        var_scale_(L.tout2_0[k] + static_cast<int>(p)) = 100.0;
      }
      for (size_t c = 0; c < L.comp_of_toutc.size(); ++c) {
        const int e = L.comp_of_toutc[c];
        const int tail = net_.node_index(net_.edges[e].from_node);
        x0_(L.toutc0[k] + static_cast<int>(c)) = x0_(L.tnode0[k] + tail);
        var_scale_(L.toutc0[k] + static_cast<int>(c)) = 100.0;
        if (net_.edges[e].kind == EdgeKind::producer) {
          for (const auto& part : net_.participants) {
            if (part.dhn_edge == e && part.min_outlet > 0) {
              bounds_.lower(L.toutc0[k] + static_cast<int>(c)) = part.min_outlet + margin;
              x0_(L.toutc0[k] + static_cast<int>(c)) =
                  std::max(x0_(L.toutc0[k] + static_cast<int>(c)), part.min_outlet + margin);
            }
          }
        }
      }
    }
  }
}

void CoupledProblem::build_rows() {
  const auto fam = families_of(in_.scope);
  const int H = in_.steps;
  auto& L = layout_;
  auto& R = *rows_;
  const auto pipes = L.pipe_of_tout;
  const auto valves = net_.edges_of_kind(EdgeKind::valve);
  const auto pumps = net_.edges_of_kind(EdgeKind::pump);

  std::vector<int> valve_slot(net_.edge_count(), -1);
  for (size_t w = 0; w < valves.size(); ++w) valve_slot[valves[w]] = static_cast<int>(w);
  std::vector<int> tout_slot(net_.edge_count(), -1);
  for (size_t p = 0; p < pipes.size(); ++p) tout_slot[pipes[p]] = static_cast<int>(p);
  std::vector<int> toutc_slot(net_.edge_count(), -1);
  for (size_t c = 0; c < L.comp_of_toutc.size(); ++c)
    toutc_slot[L.comp_of_toutc[c]] = static_cast<int>(c);

  // Pumps regulated through a control path have no direct setpoint row.
  std::vector<char> pump_pathed(net_.edge_count(), 0);
  for (const auto& cp_ : net_.paths) {
    const int reg = net_.edge_index(cp_.regulated_by);
    if (net_.edges[reg].kind == EdgeKind::pump) pump_pathed[reg] = 1;
  }

  int row = 0;
  int ineq_row = 0;
  std::vector<double> eq_scale_vals;
  auto next_row = [&](double scale) {
    eq_scale_vals.push_back(scale);
    return row++;
  };

  // Outlet temperature column serving the mixing equation of an edge's head.
  auto outlet_col = [&](int k, int e) {
    if (tout_slot[e] >= 0) return L.tout2_0[k] + tout_slot[e];
    return L.toutc0[k] + toutc_slot[e];
  };

  int economic_dof = 0;

  for (int k = 0; k < H; ++k) {
    if (fam.epn) {
      Rows::EpnStep es;
      es.step = k;
      es.v0 = L.v0[k];
      es.d0 = L.delta0[k];
      es.row_p0 = row;
      for (int i = 0; i < net_.bus_count(); ++i) next_row(1.0);
      es.row_q0 = row;
      for (int i = 0; i < net_.bus_count(); ++i) next_row(1.0);
      L.row_p0[k] = es.row_p0;
      L.row_q0[k] = es.row_q0;
      es.fixed_p_pu = Eigen::VectorXd::Zero(net_.bus_count());
      es.fixed_q_pu = Eigen::VectorXd::Zero(net_.bus_count());
      if (k < static_cast<int>(in_.fixed_epn.size())) {
        for (const auto& [id, mw] : in_.fixed_epn[k]) {
          const auto& part = net_.participants[net_.participant_index(id)];
          if (!epn_side(part)) fail("forecasts: fixed epn injection for non-epn participant '" + id + "'");
          if (part.flexible) fail("forecasts: fixed injection for flexible participant '" + id + "'");
          es.fixed_p_pu(part.bus) += mw / net_.base_mva;
        }
      }
      for (const auto& [id, c] : L.p_var[k]) {
        es.p_cols.emplace_back(net_.participants[net_.participant_index(id)].bus, c);
        ++economic_dof;
      }
      for (const auto& [id, c] : L.q_var[k]) {
        es.q_cols.emplace_back(net_.participants[net_.participant_index(id)].bus, c);
        ++economic_dof;
      }
      economic_dof -= 1;  // one injection is consumed balancing the losses
      R.epn.push_back(std::move(es));
    }

    if (fam.dhn) {
      // Continuity, reference node dropped.
      for (int i = 0; i < net_.node_count(); ++i) {
        if (i == net_.reference_node) continue;
        Rows::Lin lin;
        lin.row = next_row(1.0);
        lin.terms.reserve(4);
        for (int e = 0; e < net_.edge_count(); ++e) {
          const int a = net_.node_index(net_.edges[e].from_node);
          const int b = net_.node_index(net_.edges[e].to_node);
          if (a == i) lin.terms.emplace_back(L.mflow0[k] + e, -1.0);
          if (b == i) lin.terms.emplace_back(L.mflow0[k] + e, +1.0);
        }
        R.lin.push_back(std::move(lin));
      }
      // Loops.
      for (int l = 0; l < net_.loop_count(); ++l) {
        Rows::Lin lin;
        lin.row = next_row(1.0);
        for (int e = 0; e < net_.edge_count(); ++e) {
          const double s = net_.loop_basis.coeff(l, e);
          if (s != 0.0) lin.terms.emplace_back(L.dp0[k] + e, s);
        }
        R.lin.push_back(std::move(lin));
      }
      // Control paths.
      if (in_.path_setpoints[k].size() != static_cast<int>(net_.paths.size()))
        fail("dhn.control_paths: setpoint vector at step " + str(k) + " has wrong length");
      for (size_t p = 0; p < net_.paths.size(); ++p) {
        Rows::Lin lin;
        lin.row = next_row(1.0);
        for (int e = 0; e < net_.edge_count(); ++e) {
          const double s = net_.path_matrix.coeff(static_cast<int>(p), e);
          if (s != 0.0) lin.terms.emplace_back(L.dp0[k] + e, s);
        }
        lin.constant = -in_.path_setpoints[k](static_cast<int>(p));
        R.lin.push_back(std::move(lin));
      }
      // Pump setpoints (fixed mode): dp_edge + setpoint = 0.
      if (!in_.pumps_flexible) {
        if (static_cast<int>(in_.pump_setpoints.size()) != H)
          fail("dhn.pumps: expected a setpoint vector per step");
        if (in_.pump_setpoints[k].size() != static_cast<int>(pumps.size()))
          fail("dhn.pumps: setpoint vector at step " + str(k) + " has wrong length");
        for (size_t p = 0; p < pumps.size(); ++p) {
          if (pump_pathed[pumps[p]]) continue;
          Rows::Lin lin;
          lin.row = next_row(1.0);
          lin.terms.emplace_back(L.dp0[k] + pumps[p], 1.0);
          lin.constant = in_.pump_setpoints[k](static_cast<int>(p));
          R.lin.push_back(std::move(lin));
        }
      } else {
        for (size_t p = 0; p < pumps.size(); ++p)
          if (!pump_pathed[pumps[p]]) ++economic_dof;
      }
      // Component laws.
      for (int e = 0; e < net_.edge_count(); ++e) {
        const auto& ed = net_.edges[e];
        switch (ed.kind) {
          case EdgeKind::pipeline:
          case EdgeKind::producer:
          case EdgeKind::consumer:
            R.quad.push_back({next_row(1.0), L.dp0[k] + e, L.mflow0[k] + e, ed.friction});
            break;
          case EdgeKind::valve:
            R.valve.push_back({next_row(1.0), L.dp0[k] + e, L.mflow0[k] + e,
                               L.kv0[k] + valve_slot[e],
                               ed.valve->rho_ref * net_.water.density, ed.valve->dp_ref});
            break;
          case EdgeKind::pump:
          case EdgeKind::dpr:
            break;  // actuator edges: dp pinned by setpoint row, path or left free
        }
      }
      // Node mixing.
      L.row_mix0[k] = row;
      for (int i = 0; i < net_.node_count(); ++i) {
        Rows::Mix mx;
        mx.row = next_row(100.0);
        mx.tnode_col = L.tnode0[k] + i;
        for (int e = 0; e < net_.edge_count(); ++e) {
          const int a = net_.node_index(net_.edges[e].from_node);
          const int b = net_.node_index(net_.edges[e].to_node);
          if (a == i) mx.out_m_cols.push_back(L.mflow0[k] + e);
          if (b == i) mx.in.emplace_back(L.mflow0[k] + e, outlet_col(k, e));
        }
        R.mix.push_back(std::move(mx));
      }
      // Pipe transport, linear in temperatures through the stencil.
      for (size_t p = 0; p < pipes.size(); ++p) {
        if (static_cast<int>(in_.stencils[p].size()) != H)
          fail("thermal stencils: pipeline " + str(static_cast<int>(p)) + " missing steps");
        const auto& st = in_.stencils[p][k];
        const int tail = net_.node_index(net_.edges[pipes[p]].from_node);
        Rows::Lin lin;
        lin.row = next_row(100.0);
        lin.terms.emplace_back(L.tout1_0[k] + static_cast<int>(p), 1.0);
        double hist = 0.0;
        for (const auto& [back, w] : st.weights) {
          const int ks = k - back;
          if (ks >= 0) {
            lin.terms.emplace_back(L.tnode0[ks] + tail, -w);
          } else {
            if (!in_.history_inlet_temp)
              fail("thermal stencils: history lookup missing but stencil reaches the past");
            hist += w * in_.history_inlet_temp(static_cast<int>(p), -ks);
          }
        }
        lin.constant = -hist;
        R.lin.push_back(std::move(lin));

        Rows::Lin loss;
        loss.row = next_row(100.0);
        loss.terms.emplace_back(L.tout2_0[k] + static_cast<int>(p), 1.0);
        loss.terms.emplace_back(L.tout1_0[k] + static_cast<int>(p), -st.decay);
        loss.constant = -(1.0 - st.decay) * in_.ambient_temp(k);
        R.lin.push_back(std::move(loss));
      }
      // Component outlets.
      for (size_t c = 0; c < L.comp_of_toutc.size(); ++c) {
        const int e = L.comp_of_toutc[c];
        const auto& ed = net_.edges[e];
        const int tail = net_.node_index(ed.from_node);
        const int tout_col = L.toutc0[k] + static_cast<int>(c);
        switch (ed.kind) {
          case EdgeKind::pump:
          case EdgeKind::valve:
          case EdgeKind::dpr: {
            Rows::Lin lin;
            lin.row = next_row(100.0);
            lin.terms.emplace_back(tout_col, 1.0);
            lin.terms.emplace_back(L.tnode0[k] + tail, -1.0);
            R.lin.push_back(std::move(lin));
            break;
          }
          case EdgeKind::producer:
          case EdgeKind::consumer: {
            // find the owner participant
            const Participant* owner = nullptr;
            for (const auto& part : net_.participants)
              if (part.dhn_edge == e) owner = &part;
            if (!owner) fail("dhn.edges: unowned facility edge");
            int phi_col = -1;
            double phi_const = 0.0;
            auto it = L.phi_var[k].find(owner->id);
            if (it != L.phi_var[k].end()) {
              phi_col = it->second;
            } else if (k < static_cast<int>(in_.fixed_dhn.size()) &&
                       in_.fixed_dhn[k].count(owner->id)) {
              phi_const = in_.fixed_dhn[k].at(owner->id);
            } else {
              fail("forecasts: missing heat schedule for inflexible participant '" + owner->id +
                   "' at step " + str(k));
            }
            if (ed.kind == EdgeKind::producer) {
              R.producer.push_back({next_row(100.0), tout_col, L.tnode0[k] + tail,
                                    L.mflow0[k] + e, phi_col, phi_const});
            } else {
              const auto& curve = *owner->curve;
              Rows::Lin lin;  // curve row
              lin.row = next_row(100.0);
              lin.terms.emplace_back(tout_col, 1.0);
              if (curve.a != 0.0) lin.terms.emplace_back(L.tnode0[k] + tail, -curve.a);
              if (curve.c != 0.0) {
                if (phi_col >= 0) lin.terms.emplace_back(phi_col, -curve.c);
                else lin.constant -= curve.c * phi_const;
              }
              lin.constant += -curve.t_return_ref + curve.a * curve.t_supply_ref -
                              curve.b * (in_.ambient_temp(k) - curve.t_ambient_ref);
              R.lin.push_back(std::move(lin));
              R.cflow.push_back({next_row(1.0), L.mflow0[k] + e, L.tnode0[k] + tail, tout_col,
                                 phi_col, phi_const});
            }
            break;
          }
          default:
            break;
        }
      }
      for (const auto& [id, c] : L.phi_var[k]) {
        const auto& part = net_.participants[net_.participant_index(id)];
        if (part.network != NetworkKind::converter || in_.scope != Scope::joint) ++economic_dof;
      }
      // Converter coupling (joint scope only).
      if (in_.scope == Scope::joint) {
        for (const auto& part : net_.participants) {
          if (part.network != NetworkKind::converter) continue;
          auto itp = L.p_var[k].find(part.id);
          auto itf = L.phi_var[k].find(part.id);
          if (itp == L.p_var[k].end() || itf == L.phi_var[k].end())
            fail("bids: converter '" + part.id + "' needs bids on both sides at step " + str(k));
          Rows::Lin lin;
          lin.row = next_row(1.0);
          lin.terms.emplace_back(itf->second, 1.0);
          lin.terms.emplace_back(itp->second, -part.coupling * part.electric_sign);
          R.lin.push_back(std::move(lin));
        }
      }
      // Producer ramp bands.
      int prod_idx = 0;
      for (const auto& part : net_.participants) {
        if (!heat_source(net_, part)) continue;
        const int tout_col = L.toutc0[k] + toutc_slot[part.dhn_edge];
        Rows::Ramp rr;
        rr.tout_col = tout_col;
        rr.limit = std::max(1e-6, part.ramp_limit - in_.ramp_margin);
        if (k == 0) {
          if (static_cast<int>(in_.producer_outlet_prev.size()) <= prod_idx)
            fail("plant state: missing producer outlet anchors");
          rr.prev_col = -1;
          rr.prev_const = in_.producer_outlet_prev[prod_idx];
        } else {
          rr.prev_col = L.toutc0[k - 1] + toutc_slot[part.dhn_edge];
          rr.prev_const = 0.0;
        }
        rr.row_up = ineq_row++;
        rr.row_dn = ineq_row++;
        R.ramp.push_back(rr);
        ++prod_idx;
      }
    }

    // Sequential pins.
    auto pin = [&](const std::map<std::string, int>& vars,
                   const std::map<std::string, double>& values, const char* what) {
      for (const auto& [id, val] : values) {
        auto it = vars.find(id);
        if (it == vars.end())
          fail(std::string("pins: no ") + what + " variable for participant '" + id + "'");
        Rows::Lin lin;
        lin.row = next_row(1.0);
        lin.terms.emplace_back(it->second, 1.0);
        lin.constant = -val;
        R.lin.push_back(std::move(lin));
        --economic_dof;
      }
    };
    if (k < static_cast<int>(in_.pinned_epn.size()) && fam.epn)
      pin(L.p_var[k], in_.pinned_epn[k], "epn");
    if (k < static_cast<int>(in_.pinned_dhn.size()) && fam.dhn)
      pin(L.phi_var[k], in_.pinned_dhn[k], "dhn");
  }

  layout_.num_eq = row;
  layout_.num_ineq = ineq_row;
  eq_scale_.resize(row);
  for (int r = 0; r < row; ++r) eq_scale_(r) = eq_scale_vals[r];

  const int dof = layout_.num_vars - layout_.num_eq;
  if (dof != economic_dof) {
    std::ostringstream os;
    os << "degree-of-freedom audit failed: " << layout_.num_vars << " variables vs "
       << layout_.num_eq << " equality rows leaves " << dof
       << " free, expected " << economic_dof << " economic decisions";
    fail(os.str());
  }
}

double CoupledProblem::objective(const Eigen::VectorXd& x) const { return grad_.dot(x); }

Eigen::VectorXd CoupledProblem::objective_gradient(const Eigen::VectorXd&) const { return grad_; }

Eigen::VectorXd CoupledProblem::eq_residual(const Eigen::VectorXd& x) const {
  Eigen::VectorXd r = Eigen::VectorXd::Zero(layout_.num_eq);
  const auto& R = *rows_;
  for (const auto& lin : R.lin) {
    double v = lin.constant;
    for (const auto& [c, a] : lin.terms) v += a * x(c);
    r(lin.row) = v;
  }
  for (const auto& q : R.quad) r(q.row) = x(q.dp_col) - q.mu * x(q.m_col) * x(q.m_col);
  for (const auto& vv : R.valve)
    r(vv.row) = x(vv.kv_col) * x(vv.kv_col) * vv.rr * x(vv.dp_col) -
                vv.dpref * x(vv.m_col) * x(vv.m_col);
  for (const auto& mx : R.mix) {
    double out_sum = 0.0;
    for (int c : mx.out_m_cols) out_sum += x(c);
    double v = out_sum * x(mx.tnode_col);
    for (const auto& [mc, tc] : mx.in) v -= x(mc) * x(tc);
    r(mx.row) = v;
  }
  const double cp = net_.water.heat_capacity;
  for (const auto& pr : R.producer) {
    const double phi = pr.phi_col >= 0 ? x(pr.phi_col) : pr.phi_const;
    r(pr.row) = x(pr.tout_col) - x(pr.tret_col) - phi / (kWattToMegawatt * cp * x(pr.m_col));
  }
  for (const auto& cf : R.cflow) {
    const double phi = cf.phi_col >= 0 ? x(cf.phi_col) : cf.phi_const;
    r(cf.row) = x(cf.m_col) * cp * (x(cf.ts_col) - x(cf.tout_col)) * kWattToMegawatt - phi;
  }
  for (const auto& es : R.epn) {
    const int nb = net_.bus_count();
    Eigen::VectorXd v(nb), d(nb);
    for (int i = 0; i < nb; ++i) v(i) = x(es.v0 + i);
    int di = 0;
    for (int i = 0; i < nb; ++i)
      d(i) = i == net_.reference_bus ? 0.0 : x(es.d0 + di++);
    Eigen::VectorXd p_bus = es.fixed_p_pu, q_bus = es.fixed_q_pu;
    for (const auto& [bus, col] : es.p_cols) p_bus(bus) += x(col) / net_.base_mva;
    for (const auto& [bus, col] : es.q_cols) q_bus(bus) += x(col) / net_.base_mva;
    const auto pf = epn::power_flow_residual(net_, v, d, p_bus, q_bus);
    for (int i = 0; i < nb; ++i) {
      r(es.row_p0 + i) = pf.dp(i);
      r(es.row_q0 + i) = pf.dq(i);
    }
  }
  return r;
}

Eigen::VectorXd CoupledProblem::ineq_residual(const Eigen::VectorXd& x) const {
  Eigen::VectorXd r = Eigen::VectorXd::Zero(layout_.num_ineq);
  for (const auto& rr : rows_->ramp) {
    const double prev = rr.prev_col >= 0 ? x(rr.prev_col) : rr.prev_const;
    const double d = x(rr.tout_col) - prev;
    r(rr.row_up) = rr.limit - d;
    r(rr.row_dn) = rr.limit + d;
  }
  return r;
}

Eigen::SparseMatrix<double> CoupledProblem::eq_jacobian(const Eigen::VectorXd& x) const {
  std::vector<Eigen::Triplet<double>> t;
  t.reserve(20 * layout_.num_eq);
  const auto& R = *rows_;
  for (const auto& lin : R.lin)
    for (const auto& [c, a] : lin.terms) t.emplace_back(lin.row, c, a);
  for (const auto& q : R.quad) {
    t.emplace_back(q.row, q.dp_col, 1.0);
    t.emplace_back(q.row, q.m_col, -2.0 * q.mu * x(q.m_col));
  }
  for (const auto& vv : R.valve) {
    t.emplace_back(vv.row, vv.dp_col, x(vv.kv_col) * x(vv.kv_col) * vv.rr);
    t.emplace_back(vv.row, vv.kv_col, 2.0 * x(vv.kv_col) * vv.rr * x(vv.dp_col));
    t.emplace_back(vv.row, vv.m_col, -2.0 * vv.dpref * x(vv.m_col));
  }
  for (const auto& mx : R.mix) {
    double out_sum = 0.0;
    for (int c : mx.out_m_cols) out_sum += x(c);
    t.emplace_back(mx.row, mx.tnode_col, out_sum);
    for (int c : mx.out_m_cols) t.emplace_back(mx.row, c, x(mx.tnode_col));
    for (const auto& [mc, tc] : mx.in) {
      t.emplace_back(mx.row, mc, -x(tc));
      t.emplace_back(mx.row, tc, -x(mc));
    }
  }
  const double cp = net_.water.heat_capacity;
  for (const auto& pr : R.producer) {
    const double phi = pr.phi_col >= 0 ? x(pr.phi_col) : pr.phi_const;
    const double m = x(pr.m_col);
    t.emplace_back(pr.row, pr.tout_col, 1.0);
    t.emplace_back(pr.row, pr.tret_col, -1.0);
    t.emplace_back(pr.row, pr.m_col, phi / (kWattToMegawatt * cp * m * m));
    if (pr.phi_col >= 0) t.emplace_back(pr.row, pr.phi_col, -1.0 / (kWattToMegawatt * cp * m));
  }
  for (const auto& cf : R.cflow) {
    t.emplace_back(cf.row, cf.m_col, cp * (x(cf.ts_col) - x(cf.tout_col)) * kWattToMegawatt);
    t.emplace_back(cf.row, cf.ts_col, x(cf.m_col) * cp * kWattToMegawatt);
    t.emplace_back(cf.row, cf.tout_col, -x(cf.m_col) * cp * kWattToMegawatt);
    if (cf.phi_col >= 0) t.emplace_back(cf.row, cf.phi_col, -1.0);
  }
  for (const auto& es : R.epn) {
    const int nb = net_.bus_count();
    Eigen::VectorXd v(nb), d(nb);
    for (int i = 0; i < nb; ++i) v(i) = x(es.v0 + i);
    int di = 0;
    for (int i = 0; i < nb; ++i)
      d(i) = i == net_.reference_bus ? 0.0 : x(es.d0 + di++);
    const auto J = epn::power_flow_jacobian(net_, v, d);
    auto dcol = [&](int j) {
      if (j == net_.reference_bus) return -1;
      return es.d0 + (j < net_.reference_bus ? j : j - 1);
    };
    // Emitted densely (zeros included) so the sparsity pattern is the same at
    // every iterate and the factorization can reuse its symbolic analysis.
    for (int i = 0; i < nb; ++i) {
      for (int j = 0; j < nb; ++j) {
        t.emplace_back(es.row_p0 + i, es.v0 + j, -J.p_by_v(i, j));
        t.emplace_back(es.row_q0 + i, es.v0 + j, -J.q_by_v(i, j));
        const int dc = dcol(j);
        if (dc >= 0) {
          t.emplace_back(es.row_p0 + i, dc, -J.p_by_delta(i, j));
          t.emplace_back(es.row_q0 + i, dc, -J.q_by_delta(i, j));
        }
      }
    }
    for (const auto& [bus, col] : es.p_cols)
      t.emplace_back(es.row_p0 + bus, col, 1.0 / net_.base_mva);
    for (const auto& [bus, col] : es.q_cols)
      t.emplace_back(es.row_q0 + bus, col, 1.0 / net_.base_mva);
  }
  Eigen::SparseMatrix<double> J(layout_.num_eq, layout_.num_vars);
  J.setFromTriplets(t.begin(), t.end());
  return J;
}

Eigen::SparseMatrix<double> CoupledProblem::ineq_jacobian(const Eigen::VectorXd&) const {
  std::vector<Eigen::Triplet<double>> t;
  for (const auto& rr : rows_->ramp) {
    t.emplace_back(rr.row_up, rr.tout_col, -1.0);
    if (rr.prev_col >= 0) t.emplace_back(rr.row_up, rr.prev_col, 1.0);
    t.emplace_back(rr.row_dn, rr.tout_col, 1.0);
    if (rr.prev_col >= 0) t.emplace_back(rr.row_dn, rr.prev_col, -1.0);
  }
  Eigen::SparseMatrix<double> J(layout_.num_ineq, layout_.num_vars);
  J.setFromTriplets(t.begin(), t.end());
  return J;
}

Eigen::SparseMatrix<double> CoupledProblem::lagrangian_hessian(
    const Eigen::VectorXd& x, const Eigen::VectorXd& lambda_eq,
    const Eigen::VectorXd& lambda_ineq) const {
  (void)lambda_ineq;  // ramp rows are linear
  std::vector<Eigen::Triplet<double>> t;
  const auto& R = *rows_;
  auto sym = [&](int a, int b, double v) {
    t.emplace_back(a, b, v);
    if (a != b) t.emplace_back(b, a, v);
  };
  for (const auto& q : R.quad) sym(q.m_col, q.m_col, -2.0 * q.mu * lambda_eq(q.row));
  for (const auto& vv : R.valve) {
    const double l = lambda_eq(vv.row);
    sym(vv.kv_col, vv.kv_col, 2.0 * vv.rr * x(vv.dp_col) * l);
    sym(vv.kv_col, vv.dp_col, 2.0 * x(vv.kv_col) * vv.rr * l);
    sym(vv.m_col, vv.m_col, -2.0 * vv.dpref * l);
  }
  for (const auto& mx : R.mix) {
    const double l = lambda_eq(mx.row);
    for (int c : mx.out_m_cols) sym(c, mx.tnode_col, l);
    for (const auto& [mc, tc] : mx.in) sym(mc, tc, -l);
  }
  const double cp = net_.water.heat_capacity;
  for (const auto& pr : R.producer) {
    const double l = lambda_eq(pr.row);
    const double phi = pr.phi_col >= 0 ? x(pr.phi_col) : pr.phi_const;
    const double m = x(pr.m_col);
    sym(pr.m_col, pr.m_col, -2.0 * phi / (kWattToMegawatt * cp * m * m * m) * l);
    if (pr.phi_col >= 0) sym(pr.phi_col, pr.m_col, 1.0 / (kWattToMegawatt * cp * m * m) * l);
  }
  for (const auto& cf : R.cflow) {
    const double l = lambda_eq(cf.row);
    sym(cf.m_col, cf.ts_col, cp * kWattToMegawatt * l);
    sym(cf.m_col, cf.tout_col, -cp * kWattToMegawatt * l);
  }
  for (const auto& es : R.epn) {
    const int nb = net_.bus_count();
    Eigen::VectorXd v(nb), d(nb), lp(nb), lq(nb);
    for (int i = 0; i < nb; ++i) {
      v(i) = x(es.v0 + i);
      lp(i) = -lambda_eq(es.row_p0 + i);  // residual carries -flow
      lq(i) = -lambda_eq(es.row_q0 + i);
    }
    int di = 0;
    for (int i = 0; i < nb; ++i)
      d(i) = i == net_.reference_bus ? 0.0 : x(es.d0 + di++);
    const Eigen::MatrixXd h = epn::power_flow_hessian(net_, v, d, lp, lq);
    auto coord = [&](int c) {  // dense 2nb coordinate -> flat column or -1
      if (c < nb) return es.v0 + c;
      const int j = c - nb;
      if (j == net_.reference_bus) return -1;
      return es.d0 + (j < net_.reference_bus ? j : j - 1);
    };
    // Dense scatter, zeros included: keeps the Hessian pattern iterate
    // independent (see the Jacobian note above).
    for (int a = 0; a < 2 * nb; ++a) {
      const int ca = coord(a);
      if (ca < 0) continue;
      for (int b = a; b < 2 * nb; ++b) {
        const int cb = coord(b);
        if (cb < 0) continue;
        sym(ca, cb, h(a, b));
      }
    }
  }
  Eigen::SparseMatrix<double> H(layout_.num_vars, layout_.num_vars);
  H.setFromTriplets(t.begin(), t.end());
  return H;
}

Eigen::VectorXd CoupledProblem::initial_point() const { return x0_; }
Eigen::VectorXd CoupledProblem::var_scale() const { return var_scale_; }
Eigen::VectorXd CoupledProblem::eq_scale() const { return eq_scale_; }

}  // namespace tcs::nlp
