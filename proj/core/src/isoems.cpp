#include "tcs/isoems.hpp"
#include <cstdlib>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <utility>

#include "tcs/common.hpp"
#include "tcs/hydraulics.hpp"
#include "tcs/thermal.hpp"

namespace tcs::ems {

namespace {

std::vector<market::ParticipantBid> side_bids(const std::vector<market::ParticipantBid>& bids,
                                              market::Side s) {
  std::vector<market::ParticipantBid> out;
  for (const auto& b : bids)
    if (b.side == s) out.push_back(b);
  return out;
}

// Shifts a horizon solution one step forward, duplicating the last block.
// The layout must be step-major with a uniform per-step footprint; when it
// is not, the solution is returned untouched (still a usable warm start).
nlp::KktSolution shift_forward(const nlp::KktSolution& sol, const nlp::Layout& L) {
  nlp::KktSolution out = sol;
  const int H = L.steps;
  if (H < 2) return out;

  auto uniform = [H](const std::vector<int>& base, int stride) {
    if (static_cast<int>(base.size()) != H || base[0] < 0) return true;  // absent family
    for (int k = 0; k < H; ++k)
      if (base[k] != base[0] + k * stride) return false;
    return true;
  };
  auto shift = [H](Eigen::VectorXd& v, int total) {
    if (total <= 0 || total % H != 0 || v.size() != total) return;
    const int stride = total / H;
    for (int k = 0; k + 1 < H; ++k) v.segment(k * stride, stride) = v.segment((k + 1) * stride, stride);
  };

  if (L.num_vars % H == 0) {
    const int sv = L.num_vars / H;
    if (uniform(L.v0, sv) && uniform(L.mflow0, sv) && uniform(L.tnode0, sv)) {
      shift(out.x, L.num_vars);
      shift(out.z_lower, L.num_vars);
      shift(out.z_upper, L.num_vars);
    }
  }
  if (L.num_eq % H == 0) {
    const int se = L.num_eq / H;
    if (uniform(L.row_p0, se) && uniform(L.row_mix0, se)) shift(out.lambda_eq, L.num_eq);
  }
  if (L.num_ineq % H == 0) {
    shift(out.lambda_ineq, L.num_ineq);
    shift(out.slack, L.num_ineq);
  }
  return out;
}

}  // namespace

const char* to_string(Mode m) {
  switch (m) {
    case Mode::joint: return "joint";
    case Mode::epn_only: return "epn_only";
    case Mode::dhn_only: return "dhn_only";
    case Mode::sequential_epn_first: return "sequential_epn_first";
    case Mode::sequential_dhn_first: return "sequential_dhn_first";
  }
  return "?";
}

bool IsoEms::heat_side() const { return cfg_.mode != Mode::epn_only; }
bool IsoEms::power_side() const { return cfg_.mode != Mode::dhn_only; }

IsoEms::IsoEms(const CoupledNetwork& net, EmsConfig cfg, ForecastFn forecast,
               std::optional<plant::PlantState> initial_plant)
    : net_(net), cfg_(std::move(cfg)), forecast_(std::move(forecast)),
      plant_(std::move(initial_plant)) {
  if (cfg_.horizon < 1) throw ValidationError("ems.horizon: must be at least 1");
  if (cfg_.dt <= 0.0) throw ValidationError("ems.dt_s: must be positive");
  if (!forecast_) throw ValidationError("ems.forecast: missing");
  pipes_ = net_.edges_of_kind(EdgeKind::pipeline);
  pumps_ = net_.edges_of_kind(EdgeKind::pump);

  if (heat_side()) {
    if (!plant_) throw ValidationError("ems.plant: heat-bearing modes need an initial plant state");
    // The transport window of the slowest admissible flow must fit into the
    // recorded history, otherwise the stencils run off the buffer mid-run.
    for (std::size_t s = 0; s < pipes_.size(); ++s) {
      const auto& edge = net_.edges[pipes_[s]];
      const auto& pp = *edge.pipeline;
      const double mass = net_.water.density * pp.cross_section * pp.length;
      const double m_min = std::max(edge.m_min, 1e-3);
      const double covered = plant_->history[s].depth() * cfg_.dt * m_min;
      if (covered < mass)
        throw ValidationError("ems.plant.history: pipe " + std::to_string(edge.id) +
                              " buffer covers " + std::to_string(covered) + " kg at m_min, needs " +
                              std::to_string(mass) + " kg");
    }
    predicted_.assign(cfg_.horizon, plant_->hydraulic.mass_flow);
  }
}

const plant::PlantState& IsoEms::plant() const {
  if (!plant_) throw ValidationError("ems.plant: not present in this mode");
  return *plant_;
}

nlp::HorizonInputs IsoEms::base_inputs(const std::vector<StepForecast>& fc,
                                       nlp::Scope scope) const {
  nlp::HorizonInputs in;
  in.steps = cfg_.horizon;
  in.dt = cfg_.dt;
  in.scope = scope;
  in.ambient_temp.resize(cfg_.horizon);
  for (int k = 0; k < cfg_.horizon; ++k) {
    in.bids.push_back(fc[k].bids);
    in.fixed_epn.push_back(fc[k].fixed_epn);
    in.fixed_dhn.push_back(fc[k].fixed_dhn);
    in.pinned_epn.emplace_back();
    in.pinned_dhn.emplace_back();
    in.ambient_temp(k) = fc[k].ambient_temp;
    in.path_setpoints.push_back(fc[k].path_setpoints);
    in.pump_setpoints.push_back(fc[k].pump_setpoints);
  }
  in.pumps_flexible = cfg_.pumps_flexible;
  in.pump_bounds = cfg_.pump_bounds;
  in.thermal_margin = cfg_.thermal_margin;
  in.ramp_margin = cfg_.ramp_margin;
  in.valve_margin = cfg_.valve_margin;
  return in;
}

void IsoEms::attach_plant_state(nlp::HorizonInputs& in, StepRecord& rec) const {
  const auto& st = *plant_;
  in.start_mass_flow = st.hydraulic.mass_flow;
  in.start_dp = st.hydraulic.dp;
  in.start_node_temp = st.node_temp;
  in.producer_outlet_prev = st.producer_outlet;

  // Stencils over the horizon: predicted flows ahead of now, the realized
  // record behind it.
  const int H = cfg_.horizon;
  for (std::size_t s = 0; s < pipes_.size(); ++s) {
    const int e = pipes_[s];
    const auto& pp = *net_.edges[e].pipeline;
    const double mass = net_.water.density * pp.cross_section * pp.length;
    const auto& hist = st.history[s];
    std::vector<thermal::OutletStencil> per_step;
    per_step.reserve(H);
    for (int kappa = 0; kappa < H; ++kappa) {
      thermal::SeriesLookup flow = [this, &hist, e, kappa](int nu) {
        const int idx = kappa - nu;
        if (idx >= 0) return predicted_[idx](e);
        return hist.flow_back(-idx);
      };
      const auto w = thermal::exact_window(flow, kappa + hist.depth(), mass, cfg_.dt);
      auto stn = thermal::outlet_stencil(w, flow, pp, net_.water, cfg_.dt);
      const auto& om = stn.omega;
      rec.omega_sum_dev =
          std::max(rec.omega_sum_dev, std::abs(om.newest + om.interior + om.oldest - 1.0));
      rec.omega_min = std::min({rec.omega_min, om.newest, om.interior, om.oldest});
      per_step.push_back(std::move(stn));
    }
    in.stencils.push_back(std::move(per_step));
  }

  // The problem keeps its inputs by value, so the closure owns a snapshot.
  std::vector<thermal::ThermalHistory> snapshot = st.history;
  in.history_inlet_temp = [snapshot](int pipe, int steps_back) {
    return snapshot[pipe].temp_back(steps_back);
  };
}

std::optional<nlp::KktSolution> IsoEms::clear(nlp::Scope scope, const nlp::HorizonInputs& in,
                                              StepRecord& rec, Memory& mem,
                                              nlp::Layout& layout_out) {
  const auto problem = nlp::assemble(net_, in);
  layout_out = problem->layout();

  const nlp::KktSolution* warm = nullptr;
  if (mem.sol.x.size() == problem->num_vars() &&
      mem.sol.lambda_eq.size() == problem->num_eq() &&
      mem.sol.lambda_ineq.size() == problem->num_ineq())
    warm = &mem.sol;

  auto sol = nlp::solve_nlp(*problem, cfg_.solver, warm);
  rec.nlp_iterations += sol.iterations;
  if (!sol.converged()) {
    if (!rec.diagnosis.empty()) rec.diagnosis += "; ";
    rec.diagnosis += std::string(nlp::to_string(scope)) + " clearing: " +
                     nlp::to_string(sol.status);
    return std::nullopt;
  }

  if (scope != nlp::Scope::dhn_only) {
    const auto r = problem->eq_residual(sol.x);
    const int nb = net_.bus_count();
    double pf = r.segment(layout_out.row_p0[0], nb).lpNorm<Eigen::Infinity>();
    pf = std::max(pf, r.segment(layout_out.row_q0[0], nb).lpNorm<Eigen::Infinity>());
    rec.power_flow_residual = std::max(rec.power_flow_residual, pf);
  }
  mem = {sol, layout_out};
  return sol;
}

StepRecord IsoEms::step() {
  using clock = std::chrono::steady_clock;
  const auto t_begin = clock::now();

  StepRecord rec;
  rec.step = k_;
  const int H = cfg_.horizon;
  const int ne = net_.edge_count();
  const int nn = net_.node_count();

  // The stored solutions age by one interval between calls.
  for (auto& [scope, mem] : memory_)
    if (mem.sol.x.size() && getenv("TCS_NOSHIFT") == nullptr) mem.sol = shift_forward(mem.sol, mem.layout);

  std::vector<StepForecast> fc;
  fc.reserve(H);
  for (int k = 0; k < H; ++k) fc.push_back(forecast_(k_ + k));

  struct Outcome {
    bool solved = false;
    bool have_power = false, have_heat = false;
    nlp::KktSolution power, heat;
    nlp::Layout lay_power, lay_heat;
  };

  auto pin_heat_from_power = [&](nlp::HorizonInputs& in, const nlp::KktSolution& sol,
                                 const nlp::Layout& L) {
    for (int k = 0; k < H; ++k)
      for (const auto& [id, col] : L.p_var[k]) {
        const auto& part = net_.participants[net_.participant_index(id)];
        if (part.network != NetworkKind::converter) continue;
        double phi = part.coupling * part.electric_sign * sol.x(col);
        if (std::abs(phi) < 1e-9) phi = 0.0;
        in.pinned_dhn[k][id] = phi;
      }
  };
  auto pin_power_from_heat = [&](nlp::HorizonInputs& in, const nlp::KktSolution& sol,
                                 const nlp::Layout& L) {
    for (int k = 0; k < H; ++k)
      for (const auto& [id, col] : L.phi_var[k]) {
        const auto& part = net_.participants[net_.participant_index(id)];
        if (part.network != NetworkKind::converter) continue;
        double p = part.electric_sign * sol.x(col) / part.coupling;
        if (std::abs(p) < 1e-9) p = 0.0;
        in.pinned_epn[k][id] = p;
      }
  };

  // One clearing pass under the current flow predictions.
  auto attempt = [&]() -> Outcome {
    Outcome o;
    rec.power_flow_residual = 0.0;
    rec.omega_sum_dev = 0.0;
    rec.omega_min = 1.0;
    switch (cfg_.mode) {
      case Mode::joint: {
        auto in = base_inputs(fc, nlp::Scope::joint);
        attach_plant_state(in, rec);
        if (auto s = clear(nlp::Scope::joint, in, rec, memory_[nlp::Scope::joint], o.lay_heat)) {
          o.heat = std::move(*s);
          o.power = o.heat;
          o.lay_power = o.lay_heat;
          o.have_power = o.have_heat = o.solved = true;
        }
        break;
      }
      case Mode::epn_only: {
        auto in = base_inputs(fc, nlp::Scope::epn_only);
        if (auto s =
                clear(nlp::Scope::epn_only, in, rec, memory_[nlp::Scope::epn_only], o.lay_power)) {
          o.power = std::move(*s);
          o.have_power = o.solved = true;
        }
        break;
      }
      case Mode::dhn_only: {
        auto in = base_inputs(fc, nlp::Scope::dhn_only);
        attach_plant_state(in, rec);
        if (auto s =
                clear(nlp::Scope::dhn_only, in, rec, memory_[nlp::Scope::dhn_only], o.lay_heat)) {
          o.heat = std::move(*s);
          o.have_heat = o.solved = true;
        }
        break;
      }
      case Mode::sequential_epn_first: {
        auto in1 = base_inputs(fc, nlp::Scope::epn_only);
        auto s1 = clear(nlp::Scope::epn_only, in1, rec, memory_[nlp::Scope::epn_only], o.lay_power);
        if (!s1) break;
        o.power = std::move(*s1);
        o.have_power = true;
        auto in2 = base_inputs(fc, nlp::Scope::dhn_only);
        attach_plant_state(in2, rec);
        pin_heat_from_power(in2, o.power, o.lay_power);
        if (auto s2 =
                clear(nlp::Scope::dhn_only, in2, rec, memory_[nlp::Scope::dhn_only], o.lay_heat)) {
          o.heat = std::move(*s2);
          o.have_heat = o.solved = true;
        }
        break;
      }
      case Mode::sequential_dhn_first: {
        auto in1 = base_inputs(fc, nlp::Scope::dhn_only);
        attach_plant_state(in1, rec);
        auto s1 = clear(nlp::Scope::dhn_only, in1, rec, memory_[nlp::Scope::dhn_only], o.lay_heat);
        if (!s1) break;
        o.heat = std::move(*s1);
        o.have_heat = true;
        auto in2 = base_inputs(fc, nlp::Scope::epn_only);
        pin_power_from_heat(in2, o.heat, o.lay_heat);
        if (auto s2 =
                clear(nlp::Scope::epn_only, in2, rec, memory_[nlp::Scope::epn_only], o.lay_power)) {
          o.power = std::move(*s2);
          o.have_power = o.solved = true;
        }
        break;
      }
    }
    return o;
  };

  Outcome best = attempt();
  for (int round = 0; best.solved && best.have_heat && round < cfg_.relink_max; ++round) {
    double dev = 0.0;
    for (int kappa = 0; kappa < H; ++kappa)
      dev = std::max(dev, (best.heat.x.segment(best.lay_heat.mflow0[kappa], ne) -
                           predicted_[kappa])
                              .lpNorm<Eigen::Infinity>());
    if (dev <= cfg_.relink_tol) break;
    for (int kappa = 0; kappa < H; ++kappa)
      predicted_[kappa] = best.heat.x.segment(best.lay_heat.mflow0[kappa], ne);
    rec.relink_rounds = round + 1;
    Outcome again = attempt();
    if (!again.solved) break;  // keep the previous linearization's clearing
    best = again;
  }
  const bool solved = best.solved;

  if (solved) {
    // Replace the pending plan with the fresh horizon.
    pending_.clear();
    for (int kappa = 0; kappa < H; ++kappa) {
      Plan p;
      p.step = k_ + kappa;
      if (best.have_power)
        for (const auto& [id, col] : best.lay_power.p_var[kappa])
          p.dispatch.power[{id, market::Side::epn}] = best.power.x(col);
      if (best.have_heat) {
        for (const auto& [id, col] : best.lay_heat.phi_var[kappa])
          p.dispatch.power[{id, market::Side::dhn}] = best.heat.x(col);
        p.mass_flow = best.heat.x.segment(best.lay_heat.mflow0[kappa], ne);
        p.node_temp = best.heat.x.segment(best.lay_heat.tnode0[kappa], nn);
        p.pump_rise.resize(static_cast<int>(pumps_.size()));
        for (std::size_t i = 0; i < pumps_.size(); ++i)
          p.pump_rise(static_cast<int>(i)) =
              -best.heat.x(best.lay_heat.dp0[kappa] + pumps_[i]);
      }
      pending_.push_back(std::move(p));
    }

    // Prices of the committed interval.
    const int nb = net_.bus_count();
    if (best.have_power)
      rec.prices.epn_lmp = market::extract_epn_lmp(
          net_, best.power.lambda_eq.segment(best.lay_power.row_p0[0], nb), net_.base_mva);
    if (best.have_heat)
      rec.prices.dhn_lmp = market::extract_dhn_lmp(
          net_, best.heat.lambda_eq.segment(best.lay_heat.row_mix0[0], nn));

    // Flow predictions for the next horizon: one-step shift, last repeated.
    if (best.have_heat) {
      for (int kappa = 0; kappa + 1 < H; ++kappa)
        predicted_[kappa] = best.heat.x.segment(best.lay_heat.mflow0[kappa + 1], ne);
      if (H > 1) predicted_[H - 1] = predicted_[H - 2];
    }
  } else {
    rec.fallback = true;
    if (heat_side()) {
      // Predictions age by one step alongside the shifted plan.
      predicted_.erase(predicted_.begin());
      predicted_.push_back(predicted_.back());
    }
  }

  if (pending_.empty())
    throw ValidationError("ems: interval " + std::to_string(k_) +
                          " has no feasible solution and no earlier plan to fall back on" +
                          (rec.diagnosis.empty() ? "" : " (" + rec.diagnosis + ")"));

  // Commit the front of the plan (on fallback: yesterday's schedule for now).
  while (pending_.size() > 1 && pending_.front().step < k_) pending_.pop_front();
  Plan now = pending_.front();
  pending_.pop_front();
  if (pending_.empty()) {
    Plan repeat = now;
    repeat.step = now.step + 1;
    pending_.push_back(std::move(repeat));
  }

  std::vector<market::ParticipantBid> scope_bids;
  if (power_side() && heat_side()) scope_bids = fc[0].bids;
  else scope_bids = side_bids(fc[0].bids, power_side() ? market::Side::epn : market::Side::dhn);

  rec.dispatch = now.dispatch;
  rec.welfare = market::welfare(net_, rec.dispatch, scope_bids).total;
  if (solved) {
    if (best.have_power)
      rec.prices.epn_ump = market::compute_ump(net_, rec.dispatch, scope_bids, market::Side::epn);
    if (best.have_heat)
      rec.prices.dhn_ump = market::compute_ump(net_, rec.dispatch, scope_bids, market::Side::dhn);
    rec.settlement = market::settle(net_, rec.dispatch, scope_bids, rec.prices);
    last_prices_ = rec.prices;
  } else {
    rec.prices = last_prices_;  // carried, not a cleared price
  }
  rec.converged = solved;

  // Apply the committed interval to the exact network.
  if (heat_side()) {
    plant::Actuation act;
    act.ambient_temp = fc[0].ambient_temp;
    act.path_setpoints = fc[0].path_setpoints;
    act.pump_rise = now.pump_rise.size() ? now.pump_rise
                                         : Eigen::VectorXd::Zero(static_cast<int>(pumps_.size()));
    for (const auto& [key, mw] : rec.dispatch.power)
      if (key.second == market::Side::dhn) act.heat_mw[key.first] = mw;
    for (const auto& [id, mw] : fc[0].fixed_dhn) act.heat_mw[id] = mw;

    try {
      auto next = plant::advance(net_, *plant_, act, cfg_.dt, &rec.plant_stats);
      if (now.node_temp.size() == nn)
        rec.temp_divergence = (next.node_temp - now.node_temp).lpNorm<Eigen::Infinity>();
      if (now.mass_flow.size() == ne)
        rec.flow_divergence = (next.hydraulic.mass_flow - now.mass_flow).lpNorm<Eigen::Infinity>();
      rec.band_worst = plant::plant_bands(net_, next, plant_->producer_outlet).worst();
      rec.continuity_residual =
          hyd::continuity_residual(net_, next.hydraulic.mass_flow).lpNorm<Eigen::Infinity>();
      rec.loop_residual = hyd::loop_residual(net_, next.hydraulic.dp).lpNorm<Eigen::Infinity>();
      if (act.path_setpoints.size())
        rec.path_residual =
            hyd::control_path_residual(net_, next.hydraulic.dp, act.path_setpoints)
                .lpNorm<Eigen::Infinity>();
      *plant_ = std::move(next);
    } catch (const plant::PlantDivergence& ex) {
      rec.plant_ok = false;  // state frozen, the step is on record as failed
      if (!rec.diagnosis.empty()) rec.diagnosis += "; ";
      rec.diagnosis += ex.what();
    }
  }

  k_ += 1;
  rec.solve_seconds = std::chrono::duration<double>(clock::now() - t_begin).count();
  return rec;
}

RunReport IsoEms::run(int intervals) {
  using clock = std::chrono::steady_clock;
  const auto t_begin = clock::now();
  RunReport rep;
  rep.steps.reserve(intervals);
  for (int i = 0; i < intervals; ++i) {
    auto r = step();
    rep.daily_welfare += r.welfare * cfg_.dt / 3600.0;
    rep.fallback_steps += r.fallback ? 1 : 0;
    rep.plant_failures += r.plant_ok ? 0 : 1;
    rep.max_band_violation = std::max(rep.max_band_violation, std::max(0.0, -r.band_worst));
    rep.max_temp_divergence = std::max(rep.max_temp_divergence, r.temp_divergence);
    rep.steps.push_back(std::move(r));
  }
  rep.wall_seconds = std::chrono::duration<double>(clock::now() - t_begin).count();
  return rep;
}

}  // namespace tcs::ems
