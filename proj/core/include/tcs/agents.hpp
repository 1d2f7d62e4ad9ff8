#pragma once

#include <optional>
#include <string>
#include <vector>

#include "tcs/market.hpp"

namespace tcs::agents {

// A facility's flexibility over a window of steps, as its energy management
// agent reports it. This is all the market layer ever sees of the facility:
// whatever internal state produced the envelope stays behind this boundary.
struct FlexibilityEnvelope {
  std::string participant;
  market::Side side = market::Side::epn;
  std::vector<double> min_power;  // MW per step, EPN signed injection
  std::vector<double> max_power;  // MW per step
  std::vector<double> price;      // one constant or one value per step
  std::optional<double> energy_budget_mwh;  // usable energy over the window
};

// Bids for horizon steps k .. k+horizon-1 of the envelope's window.
// Throws ValidationError when the envelope does not cover the horizon.
std::vector<market::ParticipantBid> make_bids(const FlexibilityEnvelope& env, int horizon, int k);

// Proportional flexibility band around a base profile: each step may deviate
// to lo*base .. hi*base (ordered per step, so negative consumption profiles
// come out with min <= max).
FlexibilityEnvelope band_envelope(std::string participant, market::Side side,
                                  const std::vector<double>& base, double lo, double hi,
                                  double price);

// Storage with a one-way conversion efficiency applied both when charging and
// when discharging. Envelopes are conservative in the cumulative sense: any
// dispatch inside the envelope (every step at any admissible power) keeps the
// stored energy within [0, capacity], so the clearing needs no energy rows.
class BatteryAgent {
 public:
  BatteryAgent(std::string id, double capacity_mwh, double initial_mwh, double max_rate_mw,
               double one_way_efficiency = 0.97, double price = 25.0);

  FlexibilityEnvelope envelope(int horizon, double dt_hours) const;

  // Applies the cleared first-step power (signed, discharge positive).
  void commit(double power_mw, double dt_hours);

  double stored_mwh() const { return energy_; }
  const std::string& id() const { return id_; }

 private:
  std::string id_;
  double capacity_;
  double energy_;
  double rate_;
  double eta_;
  double price_;
};

}  // namespace tcs::agents
