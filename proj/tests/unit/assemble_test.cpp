#include <cmath>

#include <doctest.h>

#include "fixtures.hpp"
#include "tcs/nlp.hpp"

using namespace tcs;
using nlp::Scope;

namespace {

// Deterministic jitter in (-1, 1) for derivative-check points.
double jit(int i) { return std::sin(0.7 * i + 0.3) * std::cos(1.3 * i); }

Eigen::VectorXd interior_point(const nlp::CoupledProblem& p) {
  Eigen::VectorXd x = p.initial_point();
  const auto& b = p.var_bounds();
  for (int i = 0; i < x.size(); ++i) {
    double v = x(i) + 1e-3 * std::max(1.0, std::abs(x(i))) * jit(i);
    v = std::min(v, b.upper(i) - 1e-6);
    v = std::max(v, b.lower(i) + 1e-6);
    x(i) = v;
  }
  return x;
}

}  // namespace

TEST_SUITE("assemble") {
  TEST_CASE("layout counts per scope") {
    auto net = fixtures::micro_net();

    SUBCASE("joint") {
      auto in = fixtures::micro_inputs(net, Scope::joint, 2);
      auto p = nlp::assemble(net, in);
      CHECK(p->num_vars() == 74);
      CHECK(p->num_eq() == 64);
      CHECK(p->num_ineq() == 4);
      const auto& L = p->layout();
      CHECK(L.p_var[0].size() == 3);   // gen, load, chp
      CHECK(L.q_var[0].size() == 2);   // gen, chp
      CHECK(L.phi_var[0].size() == 2); // chp, cons
      CHECK(L.v0[1] == 37);
    }
    SUBCASE("epn only") {
      auto in = fixtures::micro_inputs(net, Scope::epn_only, 2);
      auto p = nlp::assemble(net, in);
      CHECK(p->num_vars() == 16);  // 2 v + 1 delta + 3 p + 2 q per step
      CHECK(p->num_eq() == 8);
      CHECK(p->num_ineq() == 0);
      CHECK(p->layout().phi_var[0].empty());
    }
    SUBCASE("dhn only") {
      auto in = fixtures::micro_inputs(net, Scope::dhn_only, 2);
      auto p = nlp::assemble(net, in);
      CHECK(p->num_vars() == 58);
      CHECK(p->num_eq() == 54);  // no converter coupling outside joint scope
      CHECK(p->num_ineq() == 4);
      CHECK(p->layout().p_var[0].empty());
    }
  }

  TEST_CASE("objective is the bid-priced cost, welfare its negation") {
    auto net = fixtures::micro_net();
    auto in = fixtures::micro_inputs(net, Scope::joint, 2);
    auto p = nlp::assemble(net, in);
    const auto& L = p->layout();

    Eigen::VectorXd x = Eigen::VectorXd::Zero(p->num_vars());
    x(L.p_var[0].at("gen")) = 1.0;   // 30 currency/MWh
    x(L.p_var[0].at("load")) = -1.0; // bid 9
    CHECK(p->objective(x) == doctest::Approx(21.0).epsilon(1e-15));
    CHECK(p->welfare(x) == doctest::Approx(-21.0).epsilon(1e-15));

    x(L.phi_var[1].at("chp")) = 1.0;  // heat producer at 12
    x(L.phi_var[1].at("cons")) = 0.5; // heat consumer at 11
    CHECK(p->objective(x) == doctest::Approx(21.0 + 12.0 - 5.5).epsilon(1e-14));
  }

  TEST_CASE("converter coupling ties heat to electric power") {
    auto net = fixtures::micro_net();
    auto in = fixtures::micro_inputs(net, Scope::joint, 2);
    auto p = nlp::assemble(net, in);
    const auto& L = p->layout();

    Eigen::VectorXd x = p->initial_point();
    Eigen::VectorXd r0 = p->eq_residual(x);
    x(L.phi_var[0].at("chp")) += 1.0;
    Eigen::VectorXd dphi = p->eq_residual(x) - r0;
    // the heat side feeds exactly two rows: the coupling identity (slope +1)
    // and the producer outlet temperature balance
    int hits = 0, conv_row = -1;
    for (int r = 0; r < dphi.size(); ++r) {
      if (std::abs(dphi(r)) < 1e-12) continue;
      ++hits;
      if (std::abs(dphi(r) - 1.0) < 1e-12) conv_row = r;
    }
    CHECK(hits == 2);
    REQUIRE(conv_row >= 0);

    x(L.phi_var[0].at("chp")) -= 1.0;
    x(L.p_var[0].at("chp")) += 1.0;
    Eigen::VectorXd dp = p->eq_residual(x) - r0;
    CHECK(dp(conv_row) == doctest::Approx(-1.42));        // phi - zeta p
    CHECK(dp(L.row_p0[0] + 1) == doctest::Approx(0.1));   // 1 MW over 10 MVA base
  }

  TEST_CASE("first derivatives match finite differences") {
    auto net = fixtures::micro_net();
    auto in = fixtures::micro_inputs(net, Scope::joint, 2);
    auto p = nlp::assemble(net, in);
    const double worst = nlp::gradient_check(*p, interior_point(*p));
    CHECK(worst < 1e-5);
  }

  TEST_CASE("lagrangian hessian matches differentiated gradients") {
    auto net = fixtures::micro_net();
    auto in = fixtures::micro_inputs(net, Scope::joint, 2);
    auto p = nlp::assemble(net, in);
    const Eigen::VectorXd x = interior_point(*p);

    Eigen::VectorXd lam(p->num_eq()), nu(p->num_ineq());
    for (int i = 0; i < lam.size(); ++i) lam(i) = 0.5 * jit(3 * i + 1);
    for (int i = 0; i < nu.size(); ++i) nu(i) = -std::abs(jit(5 * i + 2));

    auto grad_lagrangian = [&](const Eigen::VectorXd& at) -> Eigen::VectorXd {
      return p->objective_gradient(at) + p->eq_jacobian(at).transpose() * lam +
             p->ineq_jacobian(at).transpose() * nu;
    };
    Eigen::VectorXd d(p->num_vars());
    for (int i = 0; i < d.size(); ++i) d(i) = jit(2 * i + 7);
    d /= d.lpNorm<Eigen::Infinity>();

    const double h = 1e-5;
    Eigen::VectorXd fd = (grad_lagrangian(x + h * d) - grad_lagrangian(x - h * d)) / (2.0 * h);
    Eigen::VectorXd hd = p->lagrangian_hessian(x, lam, nu) * d;
    double err = 0.0;
    for (int i = 0; i < hd.size(); ++i)
      err = std::max(err, std::abs(hd(i) - fd(i)) /
                              std::max({1.0, std::abs(hd(i)), std::abs(fd(i))}));
    CHECK(err < 1e-5);
  }

  TEST_CASE("sparsity pattern is iterate independent") {
    auto net = fixtures::micro_net();
    auto in = fixtures::micro_inputs(net, Scope::joint, 2);
    auto p = nlp::assemble(net, in);
    const Eigen::VectorXd xa = interior_point(*p);
    Eigen::VectorXd xb = xa;
    for (int i = 0; i < xb.size(); ++i) xb(i) += 0.05 * jit(11 * i + 5);

    auto pattern = [](Eigen::SparseMatrix<double> m) {
      m.makeCompressed();
      std::vector<int> sig(m.outerIndexPtr(), m.outerIndexPtr() + m.outerSize() + 1);
      sig.insert(sig.end(), m.innerIndexPtr(), m.innerIndexPtr() + m.nonZeros());
      return sig;
    };
    CHECK(pattern(p->eq_jacobian(xa)) == pattern(p->eq_jacobian(xb)));
    Eigen::VectorXd lam = Eigen::VectorXd::Zero(p->num_eq());
    Eigen::VectorXd nu = Eigen::VectorXd::Zero(p->num_ineq());
    Eigen::VectorXd lam2 = Eigen::VectorXd::Constant(p->num_eq(), 0.3);
    CHECK(pattern(p->lagrangian_hessian(xa, lam, nu)) ==
          pattern(p->lagrangian_hessian(xb, lam2, nu)));
  }

  TEST_CASE("sequential pins add equality rows") {
    auto net = fixtures::micro_net();
    auto in = fixtures::micro_inputs(net, Scope::joint, 2);
    in.pinned_epn = {{{"gen", 1.5}}, {{"gen", 1.5}}};
    auto p = nlp::assemble(net, in);
    CHECK(p->num_eq() == 66);

    Eigen::VectorXd x = Eigen::VectorXd::Zero(p->num_vars());
    x(p->layout().p_var[0].at("gen")) = 2.0;
    Eigen::VectorXd r = p->eq_residual(x);
    CHECK(r(32) == doctest::Approx(0.5));   // step 0 pin sits after its block
    CHECK(r(65) == doctest::Approx(-1.5));  // step 1 pin unmet at zero
  }

  TEST_CASE("input validation") {
    auto net = fixtures::micro_net();

    SUBCASE("missing bid") {
      auto in = fixtures::micro_inputs(net, Scope::joint, 2);
      in.bids[1].pop_back();  // drop the heat consumer at step 1
      CHECK_THROWS_AS(nlp::assemble(net, in), ValidationError);
    }
    SUBCASE("inflexible participant bidding") {
      auto in = fixtures::micro_inputs(net, Scope::joint, 2);
      in.bids[0].push_back({"base_load", market::Side::epn, 5.0, -2.0, -1.0});
      CHECK_THROWS_AS(nlp::assemble(net, in), ValidationError);
    }
    SUBCASE("fixed injection for a flexible participant") {
      auto in = fixtures::micro_inputs(net, Scope::joint, 2);
      in.fixed_epn[0]["load"] = -1.0;
      CHECK_THROWS_AS(nlp::assemble(net, in), ValidationError);
    }
    SUBCASE("stencil reaching past without history") {
      auto in = fixtures::micro_inputs(net, Scope::joint, 2);
      in.history_inlet_temp = nullptr;
      CHECK_THROWS_AS(nlp::assemble(net, in), ValidationError);
    }
    SUBCASE("negative heat bid floor") {
      auto in = fixtures::micro_inputs(net, Scope::joint, 2);
      for (auto& b : in.bids[0])
        if (b.participant == "cons" && b.side == market::Side::dhn) b.min_power = -0.5;
      CHECK_THROWS_AS(nlp::assemble(net, in), ValidationError);
    }
    SUBCASE("pin without a matching decision variable") {
      auto in = fixtures::micro_inputs(net, Scope::joint, 2);
      in.pinned_epn = {{{"base_load", -2.0}}, {}};
      CHECK_THROWS_AS(nlp::assemble(net, in), ValidationError);
    }
  }

  TEST_CASE("bounds carry the thermal margins") {
    auto net = fixtures::micro_net();
    auto in = fixtures::micro_inputs(net, Scope::joint, 2);
    auto p = nlp::assemble(net, in);
    const auto& L = p->layout();
    const auto& b = p->var_bounds();
    // supply node band [340, 390] tightened by 0.5 K
    CHECK(b.lower(L.tnode0[0] + 0) == doctest::Approx(340.5));
    CHECK(b.upper(L.tnode0[0] + 0) == doctest::Approx(389.5));
    // pump dp locked to the setpoint in fixed mode via its pin row; the box
    // still allows the full actuator range
    const int dp_pump = L.dp0[0] + 4;
    CHECK(b.lower(dp_pump) <= -0.7);
    CHECK(b.upper(dp_pump) >= -0.7);
  }
}
