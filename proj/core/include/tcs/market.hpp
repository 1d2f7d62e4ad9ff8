#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tcs/network.hpp"

namespace tcs::market {

enum class Side { epn, dhn };
const char* to_string(Side s);

// One participant's offer/bid for one side and one step. This is the whole
// privacy boundary: agents submit streams of these and nothing else crosses
// into the clearing. EPN powers are signed injections (production positive),
// DHN powers are positive magnitudes with the participant role giving the
// direction.
struct ParticipantBid {
  std::string participant;
  Side side = Side::epn;
  double price = 0.0;      // currency per MW and step
  double min_power = 0.0;  // MW
  double max_power = 0.0;  // MW
};

// Cleared quantities of one step, keyed by participant and side.
struct Dispatch {
  std::map<std::pair<std::string, Side>, double> power;  // MW, EPN signed

  double at(const std::string& id, Side s) const;
};

// Welfare of one step per the two-network objective: consumer surplus terms
// minus producer cost terms, inflexible participants priced at zero.
struct WelfareBreakdown {
  double total = 0.0;
  double epn = 0.0;
  double dhn = 0.0;
};
WelfareBreakdown welfare(const CoupledNetwork& net, const Dispatch& dispatch,
                         const std::vector<ParticipantBid>& bids);

// Locational marginal prices of one step. DHN participants couple to a
// supply and a return node and therefore see a price pair.
struct PriceReport {
  std::vector<double> epn_lmp;            // per bus, currency/MW
  std::vector<double> dhn_lmp;            // per node, currency/MW (enthalpy flux value)
  std::optional<double> epn_ump;
  std::optional<double> dhn_ump;
};

// Converts nodal balance multipliers into LMPs. lambda_p: equality
// multipliers of the bus active-power rows (solver convention, see
// nlp::Problem); lambda_mix: node mixing row multipliers.
std::vector<double> extract_epn_lmp(const CoupledNetwork& net, const Eigen::VectorXd& lambda_p,
                                    double base_mva);
std::vector<double> extract_dhn_lmp(const CoupledNetwork& net, const Eigen::VectorXd& lambda_mix);

// Uniform marginal price: intersection of the dispatched offer curve
// (ascending) and dispatched bid curve (descending). Falls back to the most
// expensive dispatched offer when the curves do not cross. Returns nothing
// when the side had no dispatched offers at all.
std::optional<double> compute_ump(const CoupledNetwork& net, const Dispatch& dispatch,
                                  const std::vector<ParticipantBid>& bids, Side side,
                                  double quantity_tol = 1e-9);

// Cash flows of one step under uniform and under nodal pricing.
struct SettlementLine {
  std::string participant;
  Side side = Side::epn;
  double quantity = 0.0;  // MW, positive = sells into the market
  double ump_cash = 0.0;  // positive = participant is paid
  double lmp_cash = 0.0;
};
std::vector<SettlementLine> settle(const CoupledNetwork& net, const Dispatch& dispatch,
                                   const std::vector<ParticipantBid>& bids,
                                   const PriceReport& prices);

}  // namespace tcs::market
