#include <cmath>

#include <doctest.h>

#include "fixtures.hpp"
#include "tcs/hydraulics.hpp"

using namespace tcs;

namespace {

// Micro loop extended with a DPR spliced into the return pipe (4 -> 7 -> 5)
// plus two control paths: one regulated by the DPR, one by the loop pump.
CoupledNetwork pathed_net() {
  auto net = fixtures::micro_net_raw();
  net.nodes.push_back({7, DhnSide::return_, 300.0, 340.0});
  for (auto& ed : net.edges) {
    if (ed.id == 4) ed.to_node = 7;  // pipe now 4 -> 7
  }
  DhnEdge dpr;
  dpr.id = 7;
  dpr.kind = EdgeKind::dpr;
  dpr.from_node = 7;
  dpr.to_node = 5;
  dpr.m_min = 0.05;
  dpr.m_max = 50.0;
  dpr.dp_min = -5.0;
  dpr.dp_max = 5.0;
  net.edges.push_back(dpr);

  ControlPath by_dpr;
  by_dpr.id = 1;
  by_dpr.edges = {3};  // consumer edge
  by_dpr.orientation = {1};
  by_dpr.regulated_by = 7;
  by_dpr.dp_setpoint_bar = {0.06};
  ControlPath by_pump;
  by_pump.id = 2;
  by_pump.edges = {2, 3};
  by_pump.orientation = {1, 1};
  by_pump.regulated_by = 5;
  by_pump.dp_setpoint_bar = {0.18, 0.18};
  net.paths = {by_dpr, by_pump};
  net.finalize();
  return net;
}

}  // namespace

TEST_SUITE("hydraulics") {
  TEST_CASE("continuity vanishes on a ring and localizes a leak") {
    auto net = fixtures::micro_net();
    Eigen::VectorXd m = Eigen::VectorXd::Constant(net.edge_count(), 5.5);
    Eigen::VectorXd r = hyd::continuity_residual(net, m);
    REQUIRE(r.size() == net.node_count() - 1);
    CHECK(r.lpNorm<Eigen::Infinity>() == 0.0);

    // Bump the consumer edge (node ids 3 -> 4, dense 2 -> 3). The reference
    // node (id 1) is dropped, so those land on residual rows 1 and 2.
    m(2) += 0.25;
    r = hyd::continuity_residual(net, m);
    CHECK(r(0) == 0.0);
    CHECK(r(1) == doctest::Approx(-0.25));
    CHECK(r(2) == doctest::Approx(0.25));
    CHECK(r(3) == 0.0);
    CHECK(r(4) == 0.0);
  }

  TEST_CASE("loop residual is the signed pressure sum") {
    auto net = fixtures::micro_net();
    REQUIRE(net.loop_basis.rows() == 1);
    Eigen::VectorXd dp(6);
    dp << 0.15, 0.12, 0.06, 0.15, -0.7, 0.06;
    // All six edges point the same way around the ring, so the loop sum is
    // just the plain sum: drops total 0.54 against a 0.7 bar pump rise.
    Eigen::VectorXd r = hyd::loop_residual(net, dp);
    CHECK(r(0) == doctest::Approx(-0.16).epsilon(1e-12));
    dp(4) = -0.54;
    CHECK(hyd::loop_residual(net, dp)(0) == doctest::Approx(0.0).epsilon(1e-12));
  }

  TEST_CASE("control paths measure oriented dp sums") {
    auto net = pathed_net();
    REQUIRE(net.path_matrix.rows() == 2);
    Eigen::VectorXd dp(net.edge_count());
    dp << 0.15, 0.12, 0.06, 0.10, -0.7, 0.06, 0.05;
    Eigen::VectorXd sp(2);
    sp << 0.06, 0.18;
    Eigen::VectorXd r = hyd::control_path_residual(net, dp, sp);
    CHECK(r(0) == doctest::Approx(0.0).epsilon(1e-12));          // dp(E3) - 0.06
    CHECK(r(1) == doctest::Approx(0.12 + 0.06 - 0.18).epsilon(1e-12));
  }

  TEST_CASE("component laws zero out at their operating point") {
    auto net = pathed_net();
    const double mu = net.edges[0].friction;
    REQUIRE(mu > 0.0);
    // pipeline: dp = mu m^2
    CHECK(hyd::component_pressure_residual(net, 0, 5.5, mu * 5.5 * 5.5, 0.0) ==
          doctest::Approx(0.0).epsilon(1e-14));
    // valve: kv^2 rho_ref rho dp = dp_ref m^2
    const double kv = 0.01, mv = 3.0;
    const double dpv = 1.0 * mv * mv / (kv * kv * 1000.0 * net.water.density);
    CHECK(hyd::component_pressure_residual(net, 1, mv, dpv, kv) ==
          doctest::Approx(0.0).epsilon(1e-12));
    // consumer quadratic
    CHECK(hyd::component_pressure_residual(net, 2, 4.0, 0.002 * 16.0, 0.0) ==
          doctest::Approx(0.0).epsilon(1e-14));
    // pump: dp + rise = 0
    CHECK(hyd::component_pressure_residual(net, 4, 5.5, -0.7, 0.7) ==
          doctest::Approx(0.0).epsilon(1e-14));
    // dpr: dp - actuator = 0
    CHECK(hyd::component_pressure_residual(net, 6, 5.5, 0.2, 0.2) ==
          doctest::Approx(0.0).epsilon(1e-14));
  }

  TEST_CASE("component jacobians match finite differences") {
    auto net = pathed_net();
    const double h = 1e-6;
    for (int e : {0, 1, 2, 4, 6}) {
      const double m = 4.2, dp = 0.31, act = 0.015;
      const auto j = hyd::component_pressure_jacobian(net, e, m, dp, act);
      auto fd = [&](double dm, double ddp, double da) {
        return (hyd::component_pressure_residual(net, e, m + dm, dp + ddp, act + da) -
                hyd::component_pressure_residual(net, e, m - dm, dp - ddp, act - da)) /
               (2.0 * h);
      };
      CAPTURE(e);
      CHECK(j.by_mass_flow == doctest::Approx(fd(h, 0, 0)).epsilon(1e-6));
      CHECK(j.by_dp == doctest::Approx(fd(0, h, 0)).epsilon(1e-6));
      CHECK(j.by_actuator == doctest::Approx(fd(0, 0, h)).epsilon(1e-6));
    }
  }

  TEST_CASE("band residual is nonnegative strictly inside the box") {
    auto net = fixtures::micro_net();
    hyd::HydraulicState st;
    st.mass_flow = Eigen::VectorXd::Constant(6, 5.5);
    st.dp = Eigen::VectorXd::Zero(6);
    st.dp << 0.15, 0.12, 0.06, 0.15, -0.7, 0.06;
    st.kv = Eigen::VectorXd::Constant(1, 0.02);
    Eigen::VectorXd r = hyd::hydraulic_band_residual(net, st);
    REQUIRE(r.size() == 4 * 6 + 2);
    CHECK(r.minCoeff() > 0.0);
    CHECK(r(0) == doctest::Approx(5.5 - net.edges[0].m_min));
    CHECK(r(r.size() - 1) == doctest::Approx(0.05 - 0.02));

    st.mass_flow(3) = -1.0;  // reverse flow trips the check valve band
    r = hyd::hydraulic_band_residual(net, st);
    CHECK(r.minCoeff() < 0.0);
  }
}
