#include "tcs/agents.hpp"

#include <algorithm>
#include <utility>

#include "tcs/common.hpp"

namespace tcs::agents {

std::vector<market::ParticipantBid> make_bids(const FlexibilityEnvelope& env, int horizon, int k) {
  const auto need = static_cast<size_t>(k) + static_cast<size_t>(horizon);
  if (horizon <= 0 || k < 0)
    throw ValidationError("agents." + env.participant + ": bad horizon slice");
  if (env.min_power.size() < need || env.max_power.size() < need)
    throw ValidationError("agents." + env.participant + ": envelope shorter than the horizon");
  const bool priced_per_step = env.price.size() != 1;
  if (priced_per_step && env.price.size() < need)
    throw ValidationError("agents." + env.participant + ": price series shorter than the horizon");

  std::vector<market::ParticipantBid> bids;
  bids.reserve(horizon);
  for (int j = 0; j < horizon; ++j) {
    const size_t s = static_cast<size_t>(k + j);
    if (env.min_power[s] > env.max_power[s])
      throw ValidationError("agents." + env.participant + ": envelope min above max at step " +
                            std::to_string(k + j));
    bids.push_back({env.participant, env.side, priced_per_step ? env.price[s] : env.price[0],
                    env.min_power[s], env.max_power[s]});
  }
  return bids;
}

FlexibilityEnvelope band_envelope(std::string participant, market::Side side,
                                  const std::vector<double>& base, double lo, double hi,
                                  double price) {
  FlexibilityEnvelope env;
  env.participant = std::move(participant);
  env.side = side;
  env.price = {price};
  env.min_power.reserve(base.size());
  env.max_power.reserve(base.size());
  for (double b : base) {
    const auto [mn, mx] = std::minmax({lo * b, hi * b});
    env.min_power.push_back(mn);
    env.max_power.push_back(mx);
  }
  return env;
}

BatteryAgent::BatteryAgent(std::string id, double capacity_mwh, double initial_mwh,
                           double max_rate_mw, double one_way_efficiency, double price)
    : id_(std::move(id)),
      capacity_(capacity_mwh),
      energy_(initial_mwh),
      rate_(max_rate_mw),
      eta_(one_way_efficiency),
      price_(price) {
  if (capacity_ <= 0.0 || rate_ <= 0.0 || eta_ <= 0.0 || eta_ > 1.0)
    throw ValidationError("agents." + id_ + ": bad battery parameters");
  if (energy_ < 0.0 || energy_ > capacity_)
    throw ValidationError("agents." + id_ + ": initial energy outside [0, capacity]");
}

FlexibilityEnvelope BatteryAgent::envelope(int horizon, double dt_hours) const {
  FlexibilityEnvelope env;
  env.participant = id_;
  env.side = market::Side::epn;
  env.price = {price_};
  env.energy_budget_mwh = energy_ * eta_;

  // Worst-case energy trajectories: lo assumes every step discharges at its
  // cap, hi assumes every step charges at its cap. Bounding each step against
  // both keeps any dispatch mix inside [0, capacity].
  double lo = energy_, hi = energy_;
  for (int j = 0; j < horizon; ++j) {
    const double dis = std::min(rate_, lo * eta_ / dt_hours);
    const double chg = std::min(rate_, (capacity_ - hi) / (eta_ * dt_hours));
    env.max_power.push_back(dis);
    env.min_power.push_back(-chg);
    lo -= dis * dt_hours / eta_;
    hi += chg * dt_hours * eta_;
  }
  return env;
}

void BatteryAgent::commit(double power_mw, double dt_hours) {
  if (power_mw >= 0.0)
    energy_ -= power_mw * dt_hours / eta_;
  else
    energy_ += -power_mw * dt_hours * eta_;
  energy_ = std::clamp(energy_, 0.0, capacity_);
}

}  // namespace tcs::agents
