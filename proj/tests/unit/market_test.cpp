#include <cmath>

#include <doctest.h>

#include "fixtures.hpp"
#include "tcs/market.hpp"
#include "tcs/solver.hpp"

using namespace tcs;
using market::Dispatch;
using market::ParticipantBid;
using market::Side;

namespace {

ParticipantBid sell(const std::string& id, Side s, double price) {
  return {id, s, price, 0.0, 0.0};
}

// Dispatch and bid list built together: quantity > 0 sells, < 0 buys (EPN
// convention; compute_ump only reads prices, sides and dispatched powers).
struct Book {
  std::vector<ParticipantBid> bids;
  Dispatch dispatch;
  int n = 0;

  void add(Side s, double price, double quantity) {
    const std::string id = "u" + std::to_string(n++);
    bids.push_back(sell(id, s, price));
    dispatch.power[{id, s}] = quantity;
  }
};

}  // namespace

TEST_SUITE("market") {
  TEST_CASE("uniform price from crossing step curves") {
    auto net = fixtures::micro_net();

    SUBCASE("partially served bid pins the price") {
      Book b;
      b.add(Side::epn, 4.0, 10.0);
      b.add(Side::epn, 7.0, 5.0);
      b.add(Side::epn, 10.0, 3.0);
      b.add(Side::epn, 12.0, -6.0);
      b.add(Side::epn, 9.0, -8.0);
      b.add(Side::epn, 8.0, -2.0);
      auto ump = market::compute_ump(net, b.dispatch, b.bids, Side::epn);
      REQUIRE(ump.has_value());
      CHECK(*ump == 8.0);
    }

    SUBCASE("partially served offer pins the price") {
      Book b;
      b.add(Side::epn, 5.0, 4.0);
      b.add(Side::epn, 9.0, 10.0);
      b.add(Side::epn, 11.0, -6.0);
      b.add(Side::epn, 6.0, -5.0);
      auto ump = market::compute_ump(net, b.dispatch, b.bids, Side::epn);
      REQUIRE(ump.has_value());
      CHECK(*ump == 9.0);
    }

    SUBCASE("aligned step boundary takes the lower edge of the range") {
      Book b;
      b.add(Side::epn, 3.0, 5.0);
      b.add(Side::epn, 8.0, 5.0);
      b.add(Side::epn, 10.0, -5.0);
      b.add(Side::epn, 4.0, -5.0);
      auto ump = market::compute_ump(net, b.dispatch, b.bids, Side::epn);
      REQUIRE(ump.has_value());
      CHECK(*ump == 4.0);
    }

    SUBCASE("inelastic demand leaves the marginal offer in charge") {
      Book b;
      b.add(Side::epn, 4.0, 10.0);
      b.add(Side::epn, 7.0, 5.0);
      b.add(Side::epn, 10.0, 3.0);
      b.add(Side::epn, 12.0, -30.0);
      auto ump = market::compute_ump(net, b.dispatch, b.bids, Side::epn);
      REQUIRE(ump.has_value());
      CHECK(*ump == 10.0);
    }

    SUBCASE("no flexible buyers at all") {
      Book b;
      b.add(Side::epn, 25.0, 2.0);
      auto ump = market::compute_ump(net, b.dispatch, b.bids, Side::epn);
      REQUIRE(ump.has_value());
      CHECK(*ump == 25.0);
    }

    SUBCASE("curves that never touch fall back to the marginal offer") {
      Book b;
      b.add(Side::epn, 25.0, 2.0);
      b.add(Side::epn, 9.0, -4.0);
      auto ump = market::compute_ump(net, b.dispatch, b.bids, Side::epn);
      REQUIRE(ump.has_value());
      CHECK(*ump == 25.0);
    }

    SUBCASE("no dispatched offers means no price") {
      Book b;
      b.add(Side::epn, 25.0, 0.0);
      b.add(Side::epn, 9.0, -4.0);
      CHECK(!market::compute_ump(net, b.dispatch, b.bids, Side::epn).has_value());
    }

    SUBCASE("dust below the quantity tolerance is ignored") {
      Book b;
      b.add(Side::epn, 25.0, 1e-12);
      CHECK(!market::compute_ump(net, b.dispatch, b.bids, Side::epn).has_value());
    }

    SUBCASE("heat roles come from the network, not the sign") {
      Dispatch d;
      d.power[{"chp", Side::dhn}] = 2.0;
      d.power[{"cons", Side::dhn}] = 1.5;
      std::vector<ParticipantBid> bids = {sell("chp", Side::dhn, 12.0),
                                          sell("cons", Side::dhn, 11.0)};
      auto ump = market::compute_ump(net, d, bids, Side::dhn);
      REQUIRE(ump.has_value());
      CHECK(*ump == 12.0);  // 11 < 12: no crossing, marginal offer

      bids[1].price = 14.0;
      ump = market::compute_ump(net, d, bids, Side::dhn);
      REQUIRE(ump.has_value());
      CHECK(*ump == 12.0);  // demand exhausts first

      d.power[{"chp", Side::dhn}] = 0.0;
      CHECK(!market::compute_ump(net, d, bids, Side::dhn).has_value());
    }
  }

  TEST_CASE("welfare breakdown matches the hand-priced book") {
    auto net = fixtures::micro_net();
    auto in = fixtures::micro_inputs(net);

    Dispatch d;
    d.power[{"gen", Side::epn}] = 1.0;
    d.power[{"load", Side::epn}] = -1.0;
    auto w = market::welfare(net, d, in.bids[0]);
    CHECK(w.epn == doctest::Approx(-21.0).epsilon(1e-12));
    CHECK(w.dhn == 0.0);
    CHECK(w.total == doctest::Approx(-21.0).epsilon(1e-12));

    d.power[{"chp", Side::dhn}] = 1.0;
    d.power[{"cons", Side::dhn}] = 0.5;
    w = market::welfare(net, d, in.bids[0]);
    CHECK(w.dhn == doctest::Approx(-12.0 + 5.5).epsilon(1e-12));
    CHECK(w.total == doctest::Approx(-27.5).epsilon(1e-12));
  }

  TEST_CASE("settlement cash flows") {
    auto net = fixtures::micro_net();
    auto in = fixtures::micro_inputs(net);

    Dispatch d;
    d.power[{"gen", Side::epn}] = 1.5;
    d.power[{"load", Side::epn}] = -1.2;
    d.power[{"chp", Side::epn}] = 0.8;
    d.power[{"chp", Side::dhn}] = 1.136;
    d.power[{"cons", Side::dhn}] = 0.5;

    market::PriceReport prices;
    prices.epn_lmp = {30.0, 25.0};
    prices.dhn_lmp = {8.0, 7.5, 7.2, 1.0, 1.2, 1.5};
    prices.epn_ump = 20.0;
    prices.dhn_ump = 11.0;

    auto lines = market::settle(net, d, in.bids[0], prices);
    REQUIRE(lines.size() == in.bids[0].size());

    CHECK(lines[0].participant == "gen");
    CHECK(lines[0].quantity == 1.5);
    CHECK(lines[0].ump_cash == doctest::Approx(30.0));
    CHECK(lines[0].lmp_cash == doctest::Approx(45.0));

    CHECK(lines[1].participant == "load");
    CHECK(lines[1].quantity == -1.2);
    CHECK(lines[1].ump_cash == doctest::Approx(-24.0));
    CHECK(lines[1].lmp_cash == doctest::Approx(-30.0));

    CHECK(lines[2].side == Side::epn);
    CHECK(lines[2].lmp_cash == doctest::Approx(0.8 * 25.0));

    // chp sells heat between return node 6 and supply node 1.
    CHECK(lines[3].side == Side::dhn);
    CHECK(lines[3].quantity == 1.136);
    CHECK(lines[3].ump_cash == doctest::Approx(11.0 * 1.136));
    CHECK(lines[3].lmp_cash == doctest::Approx(1.136 * (8.0 - 1.5)));

    // cons draws heat between supply node 3 and return node 4.
    CHECK(lines[4].quantity == -0.5);
    CHECK(lines[4].ump_cash == doctest::Approx(-5.5));
    CHECK(lines[4].lmp_cash == doctest::Approx(-0.5 * (7.2 - 1.0)));
  }

  TEST_CASE("prices extracted from a cleared horizon") {
    // Loose producer ramp so the CHP outlet temperature is unconstrained and
    // the marginal-cost identities below hold exactly.
    auto net = fixtures::micro_net_raw();
    net.participants[3].ramp_limit = 50.0;
    net.finalize();
    auto in = fixtures::micro_inputs(net);
    auto p = nlp::assemble(net, in);

    nlp::SolverSettings st;
    st.tol_eq = 1e-10;
    auto sol = nlp::solve_nlp(*p, st);
    REQUIRE(sol.converged());

    const auto& L = p->layout();
    Dispatch d0;
    d0.power[{"gen", Side::epn}] = sol.x(L.p_var[0].at("gen"));
    d0.power[{"load", Side::epn}] = sol.x(L.p_var[0].at("load"));
    d0.power[{"chp", Side::epn}] = sol.x(L.p_var[0].at("chp"));
    d0.power[{"chp", Side::dhn}] = sol.x(L.phi_var[0].at("chp"));
    d0.power[{"cons", Side::dhn}] = sol.x(L.phi_var[0].at("cons"));

    // The identities need gen and both chp legs strictly inside their boxes.
    REQUIRE(d0.at("gen", Side::epn) > 1e-3);
    REQUIRE(d0.at("gen", Side::epn) < 8.0 - 1e-3);
    REQUIRE(d0.at("chp", Side::epn) > 0.2 + 1e-3);
    REQUIRE(d0.at("chp", Side::epn) < 3.0 - 1e-3);
    REQUIRE(d0.at("chp", Side::dhn) > 0.2 + 1e-3);
    REQUIRE(d0.at("chp", Side::dhn) < 5.0 - 1e-3);

    market::PriceReport prices;
    prices.epn_lmp = market::extract_epn_lmp(net, sol.lambda_eq.segment(L.row_p0[0], 2), 10.0);
    prices.dhn_lmp = market::extract_dhn_lmp(net, sol.lambda_eq.segment(L.row_mix0[0], 6));

    // A marginal interior producer earns exactly its offer at its own bus.
    CHECK(prices.epn_lmp[0] == doctest::Approx(30.0).epsilon(1e-7));

    // Finite-difference cross check of the bus-2 price: one extra MW of fixed
    // injection there changes the optimum by -LMP.
    {
      auto in2 = in;
      const double eps = 1e-4;
      in2.fixed_epn[0]["base_load"] = -2.0 + eps;
      auto p2 = nlp::assemble(net, in2);
      auto sol2 = nlp::solve_nlp(*p2, st);
      REQUIRE(sol2.converged());
      const double fd = (p2->objective(sol2.x) - p->objective(sol.x)) / eps;
      CHECK(fd == doctest::Approx(-prices.epn_lmp[1]).epsilon(1e-4));
    }

    // Stationarity of the interior CHP ties the heat price at its supply
    // node to its two offers and the local electricity price.
    const double implied = 12.0 + (20.0 - prices.epn_lmp[1]) / 1.42;
    CHECK(prices.dhn_lmp[0] == doctest::Approx(implied).epsilon(1e-7));

    // Supply heat is worth more than return heat at the consumer.
    CHECK(prices.dhn_lmp[2] > prices.dhn_lmp[3]);

    // Welfare helper agrees with the embedded objective, step by step.
    Dispatch d1;
    d1.power[{"gen", Side::epn}] = sol.x(L.p_var[1].at("gen"));
    d1.power[{"load", Side::epn}] = sol.x(L.p_var[1].at("load"));
    d1.power[{"chp", Side::epn}] = sol.x(L.p_var[1].at("chp"));
    d1.power[{"chp", Side::dhn}] = sol.x(L.phi_var[1].at("chp"));
    d1.power[{"cons", Side::dhn}] = sol.x(L.phi_var[1].at("cons"));
    const double w = market::welfare(net, d0, in.bids[0]).total +
                     market::welfare(net, d1, in.bids[1]).total;
    CHECK(w == doctest::Approx(p->welfare(sol.x)).epsilon(1e-9));

    // Uniform prices on this book: demand is inelastic on both sides, so the
    // marginal offers set them.
    auto eump = market::compute_ump(net, d0, in.bids[0], Side::epn);
    auto hump = market::compute_ump(net, d0, in.bids[0], Side::dhn);
    REQUIRE(eump.has_value());
    REQUIRE(hump.has_value());
    CHECK(*eump == 30.0);
    CHECK(*hump == 12.0);
  }
}
