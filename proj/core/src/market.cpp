#include "tcs/market.hpp"

#include <algorithm>
#include <cmath>

namespace tcs::market {

const char* to_string(Side s) { return s == Side::epn ? "epn" : "dhn"; }

double Dispatch::at(const std::string& id, Side s) const {
  auto it = power.find({id, s});
  return it == power.end() ? 0.0 : it->second;
}

namespace {

bool heat_source(const CoupledNetwork& net, const Participant& p) {
  return p.dhn_edge >= 0 && net.edges[p.dhn_edge].kind == EdgeKind::producer;
}

struct Unit {
  double price;
  double quantity;  // > 0
};

}  // namespace

WelfareBreakdown welfare(const CoupledNetwork& net, const Dispatch& dispatch,
                         const std::vector<ParticipantBid>& bids) {
  WelfareBreakdown w;
  for (const auto& bid : bids) {
    const double q = dispatch.at(bid.participant, bid.side);
    if (bid.side == Side::epn) {
      w.epn -= bid.price * q;
    } else {
      const auto& part = net.participants[net.participant_index(bid.participant)];
      w.dhn -= (heat_source(net, part) ? bid.price : -bid.price) * q;
    }
  }
  w.total = w.epn + w.dhn;
  return w;
}

std::vector<double> extract_epn_lmp(const CoupledNetwork& net, const Eigen::VectorXd& lambda_p,
                                    double base_mva) {
  std::vector<double> lmp(net.bus_count());
  for (int i = 0; i < net.bus_count(); ++i) lmp[i] = -lambda_p(i) / base_mva;
  return lmp;
}

std::vector<double> extract_dhn_lmp(const CoupledNetwork& net, const Eigen::VectorXd& lambda_mix) {
  // The mixing rows balance enthalpy flux in units of kg/s K; one MW of heat
  // extracted at the node shifts the row by 1e6 / cp of those units.
  std::vector<double> lmp(net.node_count());
  for (int i = 0; i < net.node_count(); ++i)
    lmp[i] = lambda_mix(i) * 1e6 / net.water.heat_capacity;
  return lmp;
}

std::optional<double> compute_ump(const CoupledNetwork& net, const Dispatch& dispatch,
                                  const std::vector<ParticipantBid>& bids, Side side,
                                  double quantity_tol) {
  std::vector<Unit> sells, buys;
  for (const auto& bid : bids) {
    if (bid.side != side) continue;
    const double q = dispatch.at(bid.participant, bid.side);
    bool selling;
    double qty;
    if (side == Side::epn) {
      selling = q > 0.0;
      qty = std::abs(q);
    } else {
      const auto& part = net.participants[net.participant_index(bid.participant)];
      selling = heat_source(net, part);
      qty = q;
    }
    if (qty <= quantity_tol) continue;
    (selling ? sells : buys).push_back({bid.price, qty});
  }
  if (sells.empty()) return std::nullopt;

  std::sort(sells.begin(), sells.end(), [](const Unit& a, const Unit& b) {
    return a.price < b.price;
  });
  std::sort(buys.begin(), buys.end(), [](const Unit& a, const Unit& b) {
    return a.price > b.price;
  });
  const double fallback = sells.back().price;  // most expensive dispatched offer

  // Walk the two step curves until either runs out (no crossing inside the
  // dispatched range) or the offer price overtakes the bid price.
  size_t i = 0, j = 0;
  double si = sells[0].quantity;
  double bj = buys.empty() ? 0.0 : buys[0].quantity;
  bool sell_partial = false, buy_partial = false;
  bool matched = false;
  while (i < sells.size() && j < buys.size()) {
    if (sells[i].price > buys[j].price) {
      if (!matched) break;  // curves never touch
      // Crossing: the side whose unit is already partially served is the
      // marginal one and pins the price.
      if (sell_partial) return sells[i].price;
      if (buy_partial) return buys[j].price;
      return std::max(sells[i - 1].price, buys[j].price);
    }
    matched = true;
    const double m = std::min(si, bj);
    si -= m;
    bj -= m;
    sell_partial = si > quantity_tol;
    buy_partial = bj > quantity_tol;
    if (!sell_partial && ++i < sells.size()) si = sells[i].quantity;
    if (!buy_partial && ++j < buys.size()) bj = buys[j].quantity;
  }
  return fallback;
}

std::vector<SettlementLine> settle(const CoupledNetwork& net, const Dispatch& dispatch,
                                   const std::vector<ParticipantBid>& bids,
                                   const PriceReport& prices) {
  std::vector<SettlementLine> lines;
  for (const auto& bid : bids) {
    const double q = dispatch.at(bid.participant, bid.side);
    const auto& part = net.participants[net.participant_index(bid.participant)];
    SettlementLine ln;
    ln.participant = bid.participant;
    ln.side = bid.side;
    double nodal = 0.0;
    if (bid.side == Side::epn) {
      ln.quantity = q;
      if (part.bus >= 0 && part.bus < static_cast<int>(prices.epn_lmp.size()))
        nodal = prices.epn_lmp[part.bus];
      ln.ump_cash = prices.epn_ump ? *prices.epn_ump * ln.quantity : 0.0;
    } else {
      ln.quantity = heat_source(net, part) ? q : -q;
      if (part.supply_node >= 0 && part.return_node >= 0 &&
          part.supply_node < static_cast<int>(prices.dhn_lmp.size()))
        nodal = prices.dhn_lmp[part.supply_node] - prices.dhn_lmp[part.return_node];
      ln.ump_cash = prices.dhn_ump ? *prices.dhn_ump * ln.quantity : 0.0;
    }
    ln.lmp_cash = nodal * ln.quantity;
    lines.push_back(std::move(ln));
  }
  return lines;
}

}  // namespace tcs::market
