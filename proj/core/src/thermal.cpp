#include "tcs/thermal.hpp"

#include <cmath>

namespace tcs::thermal {

ThermalHistory::ThermalHistory(int depth) : temp_(depth, 0.0), flow_(depth, 0.0) {}

void ThermalHistory::fill(double inlet_temp, double mass_flow) {
  std::fill(temp_.begin(), temp_.end(), inlet_temp);
  std::fill(flow_.begin(), flow_.end(), mass_flow);
  head_ = 0;
}

void ThermalHistory::push(double inlet_temp, double mass_flow) {
  head_ = (head_ + 1) % static_cast<int>(temp_.size());
  temp_[head_] = inlet_temp;
  flow_[head_] = mass_flow;
}

double ThermalHistory::temp_back(int steps_back) const {
  const int n = static_cast<int>(temp_.size());
  if (steps_back < 1 || steps_back > n)
    throw IoError("thermal history: lookback " + std::to_string(steps_back) +
                  " outside buffer depth " + std::to_string(n));
  return temp_[((head_ - (steps_back - 1)) % n + n) % n];
}

double ThermalHistory::flow_back(int steps_back) const {
  const int n = static_cast<int>(flow_.size());
  if (steps_back < 1 || steps_back > n)
    throw IoError("thermal history: lookback " + std::to_string(steps_back) +
                  " outside buffer depth " + std::to_string(n));
  return flow_[((head_ - (steps_back - 1)) % n + n) % n];
}

TransportWindow exact_window(const SeriesLookup& flow, int max_back, double pipe_mass,
                             double dt) {
  TransportWindow w;
  // Newest slug: smallest x >= 0 with sum_{nu=0..x} mdot(nu) dt >= pipe mass.
  double acc = 0.0;
  int x = 0;
  for (;; ++x) {
    if (x > max_back)
      throw IoError("node method: transport window exceeds available history (" +
                    std::to_string(max_back) + " steps)");
    acc += flow(x) * dt;
    if (acc >= pipe_mass) break;
  }
  w.newest_offset = x;
  w.mass_newest = acc;
  // Oldest slug: smallest z >= 1 with sum_{nu=1..z} mdot(nu) dt >= pipe mass.
  acc = 0.0;
  int z = 1;
  for (;; ++z) {
    if (z > max_back)
      throw IoError("node method: transport window exceeds available history (" +
                    std::to_string(max_back) + " steps)");
    acc += flow(z) * dt;
    if (acc >= pipe_mass) break;
  }
  w.oldest_offset = z;
  if (z >= x + 1) {
    double s = 0.0;
    for (int nu = 0; nu <= z - 1; ++nu) s += flow(nu) * dt;
    w.mass_oldest = s;
  } else {
    w.mass_oldest = w.mass_newest;
  }
  return w;
}

double lossless_outlet(const TransportWindow& w, const SeriesLookup& flow,
                       const SeriesLookup& inlet_temp, double pipe_mass, double dt) {
  const double step_mass = flow(0) * dt;
  double num = (w.mass_newest - pipe_mass) * inlet_temp(w.newest_offset);
  for (int nu = w.newest_offset + 1; nu <= w.oldest_offset - 1; ++nu)
    num += flow(nu) * dt * inlet_temp(nu);
  num += (step_mass + pipe_mass - w.mass_oldest) * inlet_temp(w.oldest_offset);
  return num / step_mass;
}

double residence_time(const TransportWindow& w, const SeriesLookup& flow, double pipe_mass,
                      double dt) {
  const double step_mass = flow(0) * dt;
  double num = w.newest_offset * (w.mass_newest - pipe_mass);
  for (int nu = w.newest_offset + 1; nu <= w.oldest_offset - 1; ++nu)
    num += nu * flow(nu) * dt;
  num += w.oldest_offset * (step_mass + pipe_mass - w.mass_oldest);
  return num / step_mass * dt;
}

double loss_decay(double residence_s, const PipelineParams& pipe, const WaterProperties& water) {
  const double tau = water.density * water.heat_capacity * pipe.cross_section *
                     pipe.thermal_resistance;
  return std::exp(-residence_s / tau);
}

double lossy_outlet(double lossless_temp, double ambient_temp, double residence_s,
                    const PipelineParams& pipe, const WaterProperties& water) {
  return ambient_temp + (lossless_temp - ambient_temp) * loss_decay(residence_s, pipe, water);
}

OmegaWeights compute_omega(const TransportWindow& w, const SeriesLookup& flow, double pipe_mass,
                           double dt) {
  const double step_mass = flow(0) * dt;
  OmegaWeights om;
  om.newest = (w.mass_newest - pipe_mass) / step_mass;
  om.interior = (w.mass_oldest - w.mass_newest) / step_mass;
  om.oldest = (step_mass + pipe_mass - w.mass_oldest) / step_mass;
  return om;
}

OutletStencil outlet_stencil(const TransportWindow& w, const SeriesLookup& predicted_flow,
                             const PipelineParams& pipe, const WaterProperties& water,
                             double dt) {
  OutletStencil st;
  const double pipe_mass = water.density * pipe.cross_section * pipe.length;
  const double step_mass = predicted_flow(0) * dt;
  st.omega.newest = (w.mass_newest - pipe_mass) / step_mass;
  st.omega.oldest = (step_mass + pipe_mass - w.mass_oldest) / step_mass;
  st.omega.interior = (w.mass_oldest - w.mass_newest) / step_mass;
  st.weights.emplace_back(w.newest_offset, st.omega.newest);
  for (int nu = w.newest_offset + 1; nu <= w.oldest_offset - 1; ++nu)
    st.weights.emplace_back(nu, predicted_flow(nu) * dt / step_mass);
  st.weights.emplace_back(w.oldest_offset, st.omega.oldest);
  st.residence_s = residence_time(w, predicted_flow, pipe_mass, dt);
  st.decay = loss_decay(st.residence_s, pipe, water);
  return st;
}

double node_mixing_residual(double t_node, const std::vector<std::pair<double, double>>& inflows,
                            const std::vector<double>& outflows) {
  double out_sum = 0.0;
  for (double f : outflows) out_sum += f;
  double r = out_sum * t_node;
  for (const auto& [f, t] : inflows) r -= f * t;
  return r;
}

double producer_outlet_residual(double t_out, double t_return_node, double phi_mw,
                                double mass_flow, const WaterProperties& water) {
  return t_out - t_return_node - phi_mw / kWattToMegawatt / (water.heat_capacity * mass_flow);
}

double consumer_curve_residual(double t_out, double t_supply_node, double t_ambient,
                               double phi_mw, const ConsumerCurve& curve) {
  const double f = curve.t_return_ref + curve.a * (t_supply_node - curve.t_supply_ref) +
                   curve.b * (t_ambient - curve.t_ambient_ref) + curve.c * phi_mw;
  return t_out - f;
}

double consumer_flow_residual(double mass_flow, double t_supply_node, double t_out,
                              double phi_mw, const WaterProperties& water) {
  return mass_flow * water.heat_capacity * (t_supply_node - t_out) * kWattToMegawatt - phi_mw;
}

double passthrough_residual(double t_out, double t_tail_node) { return t_out - t_tail_node; }

ThermalBands thermal_band_residual(const CoupledNetwork& net, const Eigen::VectorXd& node_temp,
                                   const std::vector<double>& producer_outlet,
                                   const std::vector<double>& producer_outlet_prev) {
  ThermalBands b;
  const int nn = net.node_count();
  b.node_band.resize(2 * nn);
  for (int i = 0; i < nn; ++i) {
    b.node_band(2 * i) = node_temp(i) - net.nodes[i].t_min;
    b.node_band(2 * i + 1) = net.nodes[i].t_max - node_temp(i);
  }
  std::vector<double> pb;
  int p = 0;
  for (const auto& part : net.participants) {
    const bool heat_source =
        part.dhn_edge >= 0 && net.edges[part.dhn_edge].kind == EdgeKind::producer;
    if (!heat_source) continue;
    const double cur = producer_outlet[p];
    const double prev = producer_outlet_prev[p];
    pb.push_back(part.min_outlet > 0 ? cur - part.min_outlet : 1.0);
    pb.push_back(part.ramp_limit - (cur - prev));
    pb.push_back(part.ramp_limit + (cur - prev));
    ++p;
  }
  b.producer_band = Eigen::Map<Eigen::VectorXd>(pb.data(), static_cast<int>(pb.size()));
  return b;
}

}  // namespace tcs::thermal
