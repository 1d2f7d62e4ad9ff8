#include "tcs/solver.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <vector>

#include <Eigen/SparseCholesky>

namespace tcs::nlp {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct Iterate {
  Eigen::VectorXd x, s;       // primal
  Eigen::VectorXd lam, nu;    // equality / inequality multipliers (scaled rows)
  Eigen::VectorXd zl, zu;     // bound duals, zero where the bound is absent
};

struct Evaluation {
  double f = 0.0;
  Eigen::VectorXd g;
  Eigen::VectorXd c, h;  // scaled residuals
  Eigen::SparseMatrix<double> A, G;
  Eigen::SparseMatrix<double> H;
};

double inf_norm(const Eigen::VectorXd& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

}  // namespace

const char* to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::optimal: return "optimal";
    case SolveStatus::iteration_limit: return "iteration_limit";
    case SolveStatus::line_search_failure: return "line_search_failure";
    case SolveStatus::factorization_failure: return "factorization_failure";
  }
  return "?";
}

KktSolution solve_nlp(const Problem& p, const SolverSettings& st, const KktSolution* warm) {
  const int n = p.num_vars();
  const int mc = p.num_eq();
  const int mh = p.num_ineq();

  Eigen::VectorXd l = p.var_bounds().lower;
  Eigen::VectorXd u = p.var_bounds().upper;
  for (int i = 0; i < n; ++i) {
    // A pinched box would break the barrier; open it symmetrically.
    if (std::isfinite(l(i)) && std::isfinite(u(i)) && u(i) - l(i) < 1e-10) {
      const double w = 1e-8 * std::max(1.0, std::abs(l(i)));
      l(i) -= w;
      u(i) += w;
    }
  }

  const Eigen::VectorXd dc = p.eq_scale();
  const Eigen::VectorXd dh = p.ineq_scale();

  auto scale_eq = [&](Eigen::VectorXd v) {
    for (int r = 0; r < mc; ++r) v(r) /= dc(r);
    return v;
  };
  auto scale_ineq = [&](Eigen::VectorXd v) {
    for (int r = 0; r < mh; ++r) v(r) /= dh(r);
    return v;
  };
  auto row_scale = [](Eigen::SparseMatrix<double> m, const Eigen::VectorXd& d) {
    for (int k = 0; k < m.outerSize(); ++k)
      for (Eigen::SparseMatrix<double>::InnerIterator it(m, k); it; ++it)
        it.valueRef() /= d(it.row());
    return m;
  };

  auto evaluate = [&](const Eigen::VectorXd& x, Evaluation& ev, bool derivatives,
                      const Eigen::VectorXd& lam, const Eigen::VectorXd& nu) {
    ev.f = p.objective(x);
    ev.c = scale_eq(p.eq_residual(x));
    ev.h = scale_ineq(p.ineq_residual(x));
    if (!derivatives) return;
    ev.g = p.objective_gradient(x);
    ev.A = row_scale(p.eq_jacobian(x), dc);
    ev.G = row_scale(p.ineq_jacobian(x), dh);
    // Multipliers of the scaled rows correspond to lam/dc on the raw ones.
    Eigen::VectorXd lam_raw = lam, nu_raw = nu;
    for (int r = 0; r < mc; ++r) lam_raw(r) /= dc(r);
    for (int r = 0; r < mh; ++r) nu_raw(r) /= dh(r);
    ev.H = p.lagrangian_hessian(x, lam_raw, nu_raw);
  };

  // --- initial point ---------------------------------------------------
  Iterate it;
  it.x = warm && warm->x.size() == n ? warm->x : p.initial_point();
  const bool warm_started = warm && warm->x.size() == n;
  // A warm start must still be able to change the active set: keep a mild
  // barrier and some daylight to the bounds, or the very first line search
  // dies against a wall that the neighboring problem has moved.
  const double push = warm_started ? 1e-5 : 1e-2;
  for (int i = 0; i < n; ++i) {
    const bool fl = std::isfinite(l(i)), fu = std::isfinite(u(i));
    if (fl && fu) {
      const double w = u(i) - l(i);
      it.x(i) = std::clamp(it.x(i), l(i) + push * w, u(i) - push * w);
    } else if (fl) {
      it.x(i) = std::max(it.x(i), l(i) + push * std::max(1.0, std::abs(l(i))));
    } else if (fu) {
      it.x(i) = std::min(it.x(i), u(i) - push * std::max(1.0, std::abs(u(i))));
    }
  }

  double mu = st.mu_init;
  if (warm_started && warm->mu > 0)
    mu = std::clamp(std::max(warm->mu * 10.0, 1e-4), st.tol, st.mu_init);

  Evaluation ev;
  it.lam = Eigen::VectorXd::Zero(mc);
  it.nu = Eigen::VectorXd::Constant(mh, -mu);
  if (warm_started && warm->lambda_eq.size() == mc)
    for (int r = 0; r < mc; ++r) it.lam(r) = warm->lambda_eq(r) * dc(r);
  if (warm_started && warm->lambda_ineq.size() == mh)
    for (int r = 0; r < mh; ++r) it.nu(r) = std::min(warm->lambda_ineq(r) * dh(r), -1e-8);
  evaluate(it.x, ev, true, it.lam, it.nu);

  it.s = Eigen::VectorXd(mh);
  for (int r = 0; r < mh; ++r) it.s(r) = std::max(ev.h(r), mu);
  if (warm_started && warm->slack.size() == mh)
    for (int r = 0; r < mh; ++r) it.s(r) = std::max(warm->slack(r) / dh(r), 1e-6);

  it.zl = Eigen::VectorXd::Zero(n);
  it.zu = Eigen::VectorXd::Zero(n);
  for (int i = 0; i < n; ++i) {
    if (std::isfinite(l(i))) it.zl(i) = std::min(mu / (it.x(i) - l(i)), 1e6);
    if (std::isfinite(u(i))) it.zu(i) = std::min(mu / (u(i) - it.x(i)), 1e6);
  }
  if (warm_started && warm->z_lower.size() == n && warm->z_upper.size() == n) {
    for (int i = 0; i < n; ++i) {
      if (std::isfinite(l(i))) it.zl(i) = std::max(warm->z_lower(i), 1e-10);
      if (std::isfinite(u(i))) it.zu(i) = std::max(warm->z_upper(i), 1e-10);
    }
  }

  // --- helpers ----------------------------------------------------------
  auto dual_residual = [&](const Iterate& w, const Evaluation& e) {
    Eigen::VectorXd r = e.g + e.A.transpose() * w.lam + e.G.transpose() * w.nu - w.zl + w.zu;
    return r;
  };
  auto barrier_value = [&](const Eigen::VectorXd& x, const Eigen::VectorXd& s, double f) {
    double phi = f;
    for (int i = 0; i < n; ++i) {
      if (std::isfinite(l(i))) phi -= mu * std::log(x(i) - l(i));
      if (std::isfinite(u(i))) phi -= mu * std::log(u(i) - x(i));
    }
    for (int r = 0; r < mh; ++r) phi -= mu * std::log(s(r));
    return phi;
  };
  auto theta_of = [&](const Evaluation& e, const Eigen::VectorXd& s) {
    return e.c.lpNorm<1>() + (e.h - s).lpNorm<1>();
  };

  auto fill_solution = [&](const Iterate& w, const Evaluation& e, SolveStatus status,
                           int iters) {
    KktSolution out;
    out.status = status;
    out.x = w.x;
    out.lambda_eq = w.lam;
    for (int r = 0; r < mc; ++r) out.lambda_eq(r) /= dc(r);
    out.lambda_ineq = w.nu;
    out.slack = w.s;
    for (int r = 0; r < mh; ++r) {
      out.lambda_ineq(r) /= dh(r);
      out.slack(r) *= dh(r);
    }
    out.z_lower = w.zl;
    out.z_upper = w.zu;
    out.objective = e.f;
    out.mu = mu;
    out.eq_violation = inf_norm(e.c);
    out.iterations = iters;
    const Eigen::VectorXd rd = dual_residual(w, e);
    double znorm = w.zl.lpNorm<1>() + w.zu.lpNorm<1>() + w.nu.lpNorm<1>();
    double ynorm = w.lam.lpNorm<1>() + znorm;
    const int nz = n + mh;
    const double sd = std::max(100.0, ynorm / std::max(1, mc + nz)) / 100.0;
    out.dual_infeasibility = inf_norm(rd) / sd;
    double compl0 = 0.0;
    for (int i = 0; i < n; ++i) {
      if (std::isfinite(l(i))) compl0 = std::max(compl0, std::abs((w.x(i) - l(i)) * w.zl(i)));
      if (std::isfinite(u(i))) compl0 = std::max(compl0, std::abs((u(i) - w.x(i)) * w.zu(i)));
    }
    for (int r = 0; r < mh; ++r) compl0 = std::max(compl0, std::abs(-w.s(r) * w.nu(r)));
    const double sc = std::max(100.0, znorm / std::max(1, nz)) / 100.0;
    out.complementarity = compl0 / sc;
    return out;
  };

  // --- filter line search state ------------------------------------------
  std::vector<std::pair<double, double>> filter;  // (theta, phi)
  const double gamma_theta = 1e-5, gamma_phi = 1e-5;
  const double s_theta = 1.1, s_phi = 2.3, eta_phi = 1e-4, delta_sw = 1.0;
  double theta0 = theta_of(ev, it.s);
  const double theta_min = 1e-4 * std::max(1.0, theta0);
  const double theta_max = 1e4 * std::max(1.0, theta0);
  filter.emplace_back(theta_max, -kInf);

  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>, Eigen::Lower> ldlt;
  bool analyzed = false;
  double delta_w_last = 0.0;

  const int dim = n + mc + mh;
  double tau = std::max(0.99, 1.0 - mu);
  const double mu_floor = st.tol / 20.0;

  int iter = 0;
  for (; iter < st.max_iter; ++iter) {
    // -- convergence bookkeeping ------------------------------------------
    const Eigen::VectorXd rd = dual_residual(it, ev);
    double znorm = it.zl.lpNorm<1>() + it.zu.lpNorm<1>() + it.nu.lpNorm<1>();
    double ynorm = it.lam.lpNorm<1>() + znorm;
    const double sd = std::max(100.0, ynorm / std::max(1, mc + n + mh)) / 100.0;
    const double sc = std::max(100.0, znorm / std::max(1, n + mh)) / 100.0;
    const double dual_inf = inf_norm(rd) / sd;
    const double primal_eq = inf_norm(ev.c);
    const double primal_ineq = inf_norm(ev.h - it.s);

    auto compl_err = [&](double target) {
      double e = 0.0;
      for (int i = 0; i < n; ++i) {
        if (std::isfinite(l(i))) e = std::max(e, std::abs((it.x(i) - l(i)) * it.zl(i) - target));
        if (std::isfinite(u(i))) e = std::max(e, std::abs((u(i) - it.x(i)) * it.zu(i) - target));
      }
      for (int r = 0; r < mh; ++r) e = std::max(e, std::abs(-it.s(r) * it.nu(r) - target));
      return e / sc;
    };

    if (dual_inf <= st.tol && compl_err(0.0) <= st.tol && primal_eq <= st.tol_eq &&
        primal_ineq <= st.tol) {
      if (st.verbose) std::printf("ip: converged in %d iterations\n", iter);
      return fill_solution(it, ev, SolveStatus::optimal, iter);
    }

    // -- barrier schedule ---------------------------------------------------
    while (mu > mu_floor &&
           std::max({dual_inf, primal_eq, primal_ineq, compl_err(mu)}) <= 10.0 * mu) {
      mu = std::max(mu_floor, std::min(0.2 * mu, std::pow(mu, 1.5)));
      tau = std::max(0.99, 1.0 - mu);
      filter.clear();
      filter.emplace_back(theta_max, -kInf);
    }

    // -- assemble the condensed KKT system ---------------------------------
    Eigen::VectorXd sigma_l = Eigen::VectorXd::Zero(n), sigma_u = Eigen::VectorXd::Zero(n);
    for (int i = 0; i < n; ++i) {
      if (std::isfinite(l(i))) sigma_l(i) = it.zl(i) / (it.x(i) - l(i));
      if (std::isfinite(u(i))) sigma_u(i) = it.zu(i) / (u(i) - it.x(i));
    }
    Eigen::VectorXd sigma_s(mh);
    for (int r = 0; r < mh; ++r) sigma_s(r) = -it.nu(r) / it.s(r);

    Eigen::VectorXd rx_tilde = ev.g + ev.A.transpose() * it.lam + ev.G.transpose() * it.nu;
    for (int i = 0; i < n; ++i) {
      if (std::isfinite(l(i))) rx_tilde(i) -= mu / (it.x(i) - l(i));
      if (std::isfinite(u(i))) rx_tilde(i) += mu / (u(i) - it.x(i));
    }
    Eigen::VectorXd rs_tilde(mh);
    for (int r = 0; r < mh; ++r) rs_tilde(r) = -it.nu(r) - mu / it.s(r);

    Eigen::VectorXd rhs(dim);
    rhs.head(n) = -rx_tilde;
    rhs.segment(n, mc) = -ev.c;
    for (int r = 0; r < mh; ++r)
      rhs(n + mc + r) = -(ev.h(r) - it.s(r)) - rs_tilde(r) / sigma_s(r);

    std::vector<Eigen::Triplet<double>> base;
    base.reserve(ev.H.nonZeros() + ev.A.nonZeros() + ev.G.nonZeros() + dim);
    for (int k = 0; k < ev.H.outerSize(); ++k)
      for (Eigen::SparseMatrix<double>::InnerIterator hit(ev.H, k); hit; ++hit)
        base.emplace_back(hit.row(), hit.col(), hit.value());
    for (int k = 0; k < ev.A.outerSize(); ++k)
      for (Eigen::SparseMatrix<double>::InnerIterator ait(ev.A, k); ait; ++ait) {
        base.emplace_back(n + ait.row(), ait.col(), ait.value());
        base.emplace_back(ait.col(), n + ait.row(), ait.value());
      }
    for (int k = 0; k < ev.G.outerSize(); ++k)
      for (Eigen::SparseMatrix<double>::InnerIterator git(ev.G, k); git; ++git) {
        base.emplace_back(n + mc + git.row(), git.col(), git.value());
        base.emplace_back(git.col(), n + mc + git.row(), git.value());
      }

    // -- factorize with inertia correction ---------------------------------
    double delta_w = 0.0;
    bool factored = false;
    Eigen::SparseMatrix<double> K(dim, dim);
    for (int attempt = 0; attempt < 14 && !factored; ++attempt) {
      auto trips = base;
      for (int i = 0; i < n; ++i)
        trips.emplace_back(i, i, sigma_l(i) + sigma_u(i) + delta_w);
      for (int r = 0; r < mc; ++r) trips.emplace_back(n + r, n + r, -st.delta_c);
      for (int r = 0; r < mh; ++r)
        trips.emplace_back(n + mc + r, n + mc + r, -(1.0 / sigma_s(r) + st.delta_c));
      K.setFromTriplets(trips.begin(), trips.end());
      if (!analyzed) {
        ldlt.analyzePattern(K);
        analyzed = true;
      }
      ldlt.factorize(K);
      if (ldlt.info() == Eigen::Success) {
        const auto& d = ldlt.vectorD();
        int pos = 0, neg = 0;
        bool clean = true;
        for (int i = 0; i < dim; ++i) {
          if (!std::isfinite(d(i)) || d(i) == 0.0) { clean = false; break; }
          (d(i) > 0.0 ? pos : neg)++;
        }
        if (clean && pos == n && neg == mc + mh) factored = true;
      }
      if (!factored) {
        delta_w = delta_w == 0.0 ? std::max(1e-8, delta_w_last / 3.0) : delta_w * 100.0;
        if (delta_w > 1e12) {
          if (st.verbose) std::printf("ip: inertia correction exhausted\n");
          return fill_solution(it, ev, SolveStatus::factorization_failure, iter);
        }
      }
    }
    if (!factored) return fill_solution(it, ev, SolveStatus::factorization_failure, iter);
    delta_w_last = delta_w;

    const Eigen::VectorXd step = ldlt.solve(rhs);
    const Eigen::VectorXd dx = step.head(n);
    const Eigen::VectorXd dlam = step.segment(n, mc);
    const Eigen::VectorXd dnu = step.tail(mh);
    Eigen::VectorXd ds(mh), dzl(n), dzu(n);
    for (int r = 0; r < mh; ++r) ds(r) = (dnu(r) - rs_tilde(r)) / sigma_s(r);
    for (int i = 0; i < n; ++i) {
      dzl(i) = std::isfinite(l(i))
                   ? (mu - (it.x(i) - l(i)) * it.zl(i)) / (it.x(i) - l(i)) - sigma_l(i) * dx(i)
                   : 0.0;
      dzu(i) = std::isfinite(u(i))
                   ? (mu - (u(i) - it.x(i)) * it.zu(i)) / (u(i) - it.x(i)) + sigma_u(i) * dx(i)
                   : 0.0;
    }

    // -- fraction to the boundary ------------------------------------------
    double a_pri = 1.0, a_dual = 1.0;
    for (int i = 0; i < n; ++i) {
      if (std::isfinite(l(i)) && dx(i) < 0) a_pri = std::min(a_pri, -tau * (it.x(i) - l(i)) / dx(i));
      if (std::isfinite(u(i)) && dx(i) > 0) a_pri = std::min(a_pri, tau * (u(i) - it.x(i)) / dx(i));
      if (dzl(i) < 0 && it.zl(i) > 0) a_dual = std::min(a_dual, -tau * it.zl(i) / dzl(i));
      if (dzu(i) < 0 && it.zu(i) > 0) a_dual = std::min(a_dual, -tau * it.zu(i) / dzu(i));
    }
    for (int r = 0; r < mh; ++r) {
      if (ds(r) < 0) a_pri = std::min(a_pri, -tau * it.s(r) / ds(r));
      if (dnu(r) > 0) a_dual = std::min(a_dual, tau * (-it.nu(r)) / dnu(r));
    }

    // -- filter line search --------------------------------------------------
    const double phi0 = barrier_value(it.x, it.s, ev.f);
    const double th0 = theta_of(ev, it.s);
    double dphi = ev.g.dot(dx);
    for (int i = 0; i < n; ++i) {
      if (std::isfinite(l(i))) dphi -= mu * dx(i) / (it.x(i) - l(i));
      if (std::isfinite(u(i))) dphi += mu * dx(i) / (u(i) - it.x(i));
    }
    for (int r = 0; r < mh; ++r) dphi -= mu * ds(r) / it.s(r);

    double alpha = a_pri;
    bool accepted = false, armijo_route = false;
    Evaluation trial_ev;
    Eigen::VectorXd xt, stry;
    for (int back = 0; back < 40 && !accepted; ++back) {
      xt = it.x + alpha * dx;
      stry = it.s + alpha * ds;
      evaluate(xt, trial_ev, false, it.lam, it.nu);
      const double phit = barrier_value(xt, stry, trial_ev.f);
      const double tht = theta_of(trial_ev, stry);
      if (std::isfinite(phit) && std::isfinite(tht)) {
        bool filter_ok = true;
        for (const auto& [fth, fph] : filter)
          if (tht >= fth && phit >= fph) { filter_ok = false; break; }
        if (filter_ok) {
          const bool switching =
              dphi < 0 && alpha * std::pow(-dphi, s_phi) > delta_sw * std::pow(th0, s_theta);
          if (switching && th0 <= theta_min) {
            if (phit <= phi0 + eta_phi * alpha * dphi) {
              accepted = true;
              armijo_route = true;
            }
          } else if (tht <= (1.0 - gamma_theta) * th0 || phit <= phi0 - gamma_phi * th0) {
            accepted = true;
          }
        }
      }
      if (!accepted) {
        alpha *= 0.5;
        if (alpha < 1e-12) {
          if (st.verbose) std::printf("ip: line search stalled at iter %d\n", iter);
          return fill_solution(it, ev, SolveStatus::line_search_failure, iter);
        }
      }
    }
    if (!accepted) return fill_solution(it, ev, SolveStatus::line_search_failure, iter);
    if (!armijo_route)
      filter.emplace_back((1.0 - gamma_theta) * th0, phi0 - gamma_phi * th0);

    // -- update ---------------------------------------------------------------
    it.x = xt;
    it.s = stry;
    it.lam += alpha * dlam;
    it.nu += a_dual * dnu;
    it.zl += a_dual * dzl;
    it.zu += a_dual * dzu;
    const double kappa_sigma = 1e10;
    for (int i = 0; i < n; ++i) {
      if (std::isfinite(l(i)))
        it.zl(i) = std::clamp(it.zl(i), mu / (kappa_sigma * (it.x(i) - l(i))),
                              kappa_sigma * mu / (it.x(i) - l(i)));
      if (std::isfinite(u(i)))
        it.zu(i) = std::clamp(it.zu(i), mu / (kappa_sigma * (u(i) - it.x(i))),
                              kappa_sigma * mu / (u(i) - it.x(i)));
    }
    for (int r = 0; r < mh; ++r)
      it.nu(r) = -std::clamp(-it.nu(r), mu / (kappa_sigma * it.s(r)), kappa_sigma * mu / it.s(r));

    evaluate(it.x, ev, true, it.lam, it.nu);
    if (st.verbose)
      std::printf("ip %3d  mu=%.1e  f=%+.8e  th=%.2e  dual=%.2e  a=%.2e  dw=%.1e\n", iter, mu,
                  ev.f, theta_of(ev, it.s), dual_inf, alpha, delta_w);
  }

  return fill_solution(it, ev, SolveStatus::iteration_limit, iter);
}

}  // namespace tcs::nlp
