#include <cmath>
#include <vector>

#include <doctest.h>

#include "fixtures.hpp"
#include "tcs/thermal.hpp"

using namespace tcs;
using thermal::SeriesLookup;

namespace {

SeriesLookup series(std::vector<double> vals, double tail) {
  return [vals = std::move(vals), tail](int nu) {
    return nu < static_cast<int>(vals.size()) ? vals[static_cast<size_t>(nu)] : tail;
  };
}

const double kDt = 900.0;
const WaterProperties kWater{};  // 975 kg/m^3, 4190 J/(kg K)

PipelineParams micro_pipe() {
  PipelineParams p;
  p.length = 300.0;
  p.cross_section = 0.01;
  p.diameter = 0.1128;
  p.roughness = 4e-4;
  p.thermal_resistance = 80.0;
  p.reference_flow = 5.5;
  return p;
}

}  // namespace

TEST_SUITE("thermal") {
  TEST_CASE("history ring buffer") {
    thermal::ThermalHistory h(4);
    h.fill(350.0, 2.0);
    CHECK(h.temp_back(1) == 350.0);
    CHECK(h.flow_back(4) == 2.0);
    h.push(351.0, 2.1);
    h.push(352.0, 2.2);
    CHECK(h.temp_back(1) == 352.0);
    CHECK(h.temp_back(2) == 351.0);
    CHECK(h.temp_back(3) == 350.0);
    CHECK(h.flow_back(2) == doctest::Approx(2.1));
    h.push(353.0, 2.3);
    h.push(354.0, 2.4);
    h.push(355.0, 2.5);  // wraps, oldest fill records gone
    CHECK(h.temp_back(1) == 355.0);
    CHECK(h.temp_back(4) == 352.0);
    CHECK_THROWS_AS((void)h.temp_back(0), IoError);
    CHECK_THROWS_AS((void)h.temp_back(5), IoError);
    CHECK_THROWS_AS((void)h.flow_back(-1), IoError);
  }

  TEST_CASE("transport window covers the pipe mass") {
    // rho A L = 975 * 0.01 * 300 = 2925 kg against 900 s slugs.
    const double M = 2925.0;
    auto flow = series({1.2, 1.0, 0.8, 1.1, 0.9, 1.3}, 1.0);
    auto w = thermal::exact_window(flow, 32, M, kDt);
    CHECK(w.newest_offset == 3);
    CHECK(w.oldest_offset == 4);
    CHECK(w.mass_newest == doctest::Approx(3690.0));
    CHECK(w.mass_oldest == doctest::Approx(3690.0));

    // Shallow history throws instead of fabricating records.
    CHECK_THROWS_AS(thermal::exact_window(flow, 2, M, kDt), IoError);
  }

  TEST_CASE("window weights and outlet blend, frozen case") {
    const double M = 2925.0;
    auto flow = series({1.2, 1.0, 0.8, 1.1, 0.9, 1.3}, 1.0);
    auto temp = series({340.0, 345.0, 350.0, 358.0, 356.0, 330.0}, 320.0);
    auto w = thermal::exact_window(flow, 32, M, kDt);

    auto om = thermal::compute_omega(w, flow, M, kDt);
    CHECK(om.newest == doctest::Approx(0.7083333333333334).epsilon(1e-14));
    CHECK(om.interior == doctest::Approx(0.0));
    CHECK(om.oldest == doctest::Approx(0.2916666666666667).epsilon(1e-14));

    const double ll = thermal::lossless_outlet(w, flow, temp, M, kDt);
    CHECK(ll == doctest::Approx(357.41666666666669).epsilon(1e-14));

    const double res = thermal::residence_time(w, flow, M, kDt);
    CHECK(res == doctest::Approx(2962.5).epsilon(1e-12));

    const auto pipe = micro_pipe();
    // tau = rho cp A R' = 3268200 s
    const double dec = thermal::loss_decay(res, pipe, kWater);
    CHECK(dec == doctest::Approx(0.99909394844000732).epsilon(1e-14));
    CHECK(thermal::lossy_outlet(ll, 278.15, res, pipe, kWater) ==
          doctest::Approx(357.34484697967792).epsilon(1e-13));
  }

  TEST_CASE("spike flow spreads the window") {
    // One hot surge followed by trickle: the surge slug spans the whole pipe.
    const double M = 975.0 * 0.01 * 200.0;  // 1950 kg
    auto flow = series({5.0}, 0.5);
    auto w = thermal::exact_window(flow, 32, M, kDt);
    CHECK(w.newest_offset == 0);
    CHECK(w.oldest_offset == 5);
    CHECK(w.mass_newest == doctest::Approx(4500.0));
    CHECK(w.mass_oldest == doctest::Approx(6300.0));
    auto om = thermal::compute_omega(w, flow, M, kDt);
    CHECK(om.newest == doctest::Approx(0.56666666666666665).epsilon(1e-14));
    CHECK(om.interior == doctest::Approx(0.4).epsilon(1e-14));
    CHECK(om.oldest == doctest::Approx(0.033333333333333333).epsilon(1e-13));
    CHECK(om.newest + om.interior + om.oldest == doctest::Approx(1.0).epsilon(1e-15));
  }

  TEST_CASE("omega sums to one across random flow shapes") {
    unsigned long long s = 12345;
    auto rng = [&s]() {
      s = s * 6364136223846793005ULL + 1442695040888963407ULL;
      return static_cast<double>((s >> 33) & 0xfffff) / static_cast<double>(0xfffff);
    };
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<double> f(40);
      for (auto& v : f) v = 0.2 + 5.0 * rng();
      auto flow = series(f, 1.0);
      const double M = 500.0 + 4000.0 * rng();
      auto w = thermal::exact_window(flow, 64, M, kDt);
      auto om = thermal::compute_omega(w, flow, M, kDt);
      CAPTURE(trial);
      CHECK(om.newest + om.interior + om.oldest == doctest::Approx(1.0).epsilon(1e-12));
      if (w.oldest_offset > w.newest_offset) {
        CHECK(om.newest >= 0.0);
        CHECK(om.interior >= -1e-15);
        CHECK(om.oldest >= 0.0);
      } else {
        // One slug spans the whole outlet window: the split between the
        // newest and oldest shares is bookkeeping, only their sum matters.
        CHECK(om.interior == 0.0);
        CHECK(om.newest + om.oldest == doctest::Approx(1.0).epsilon(1e-12));
      }
    }
  }

  TEST_CASE("steady-flow stencil matches the analytic residence") {
    const double M = 2925.0;
    auto flow = series({}, 5.5);
    auto w = thermal::exact_window(flow, 32, M, kDt);
    auto st = thermal::outlet_stencil(w, flow, micro_pipe(), kWater, kDt);
    REQUIRE(st.weights.size() == 2);
    CHECK(st.weights[0].first == 0);
    CHECK(st.weights[0].second == doctest::Approx(0.40909090909090912).epsilon(1e-14));
    CHECK(st.weights[1].first == 1);
    CHECK(st.weights[1].second == doctest::Approx(0.59090909090909094).epsilon(1e-14));
    // steady residence M / mdot
    CHECK(st.residence_s == doctest::Approx(531.81818181818187).epsilon(1e-13));
    CHECK(st.decay == doctest::Approx(std::exp(-531.81818181818187 / 3268200.0)).epsilon(1e-14));
  }

  TEST_CASE("node mixing residual") {
    // (2+3) T = 2*350 + 3*360  =>  T = 356
    std::vector<std::pair<double, double>> in = {{2.0, 350.0}, {3.0, 360.0}};
    std::vector<double> out = {2.0, 3.0};
    CHECK(thermal::node_mixing_residual(356.0, in, out) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(thermal::node_mixing_residual(357.0, in, out) == doctest::Approx(5.0));
  }

  TEST_CASE("producer and consumer component residuals") {
    // 1 MW into 10 kg/s lifts the return by 1e6 / (4190 * 10) K.
    const double dT = 23.866348448687351;
    CHECK(thermal::producer_outlet_residual(315.0 + dT, 315.0, 1.0, 10.0, kWater) ==
          doctest::Approx(0.0).epsilon(1e-12));
    CHECK(thermal::producer_outlet_residual(315.0 + dT + 1.0, 315.0, 1.0, 10.0, kWater) ==
          doctest::Approx(1.0));

    ConsumerCurve curve{315.0, 360.0, 278.15, 0.2, 0.1, 1.5};
    // T_out = 315 + 0.2 (Ts - 360) + 0.1 (Ta - 278.15) + 1.5 Phi
    const double ts = 356.0, ta = 280.0, phi = 1.2;
    const double tout = 315.0 + 0.2 * (ts - 360.0) + 0.1 * (ta - 278.15) + 1.5 * phi;
    CHECK(thermal::consumer_curve_residual(tout, ts, ta, phi, curve) ==
          doctest::Approx(0.0).epsilon(1e-12));
    // mdot cp (Ts - Tout) = Phi
    const double m = phi * 1e6 / (kWater.heat_capacity * (ts - tout));
    CHECK(thermal::consumer_flow_residual(m, ts, tout, phi, kWater) ==
          doctest::Approx(0.0).epsilon(1e-12));
    CHECK(thermal::passthrough_residual(340.0, 339.0) == doctest::Approx(1.0));
  }

  TEST_CASE("band residuals flag violations") {
    auto net = fixtures::micro_net();
    Eigen::VectorXd t(6);
    t << 368.0, 367.5, 367.3, 317.0, 316.8, 316.7;
    std::vector<double> outlet = {368.0}, prev = {367.0};
    auto b = thermal::thermal_band_residual(net, t, outlet, prev);
    REQUIRE(b.node_band.size() == 12);
    REQUIRE(b.producer_band.size() == 3);
    CHECK(b.node_band.minCoeff() > 0.0);
    CHECK(b.producer_band(0) == doctest::Approx(368.0 - 350.0));
    CHECK(b.producer_band(1) == doctest::Approx(2.0 - 1.0));
    CHECK(b.producer_band(2) == doctest::Approx(2.0 + 1.0));

    t(0) = 391.0;  // above the supply band
    b = thermal::thermal_band_residual(net, t, outlet, prev);
    CHECK(b.node_band.minCoeff() < 0.0);
    outlet[0] = 370.0;  // ramp limit 2 K violated
    b = thermal::thermal_band_residual(net, t, outlet, prev);
    CHECK(b.producer_band(1) < 0.0);
  }
}
