#include "tcs/epn.hpp"

#include <cmath>

namespace tcs::epn {

PowerFlowResidual power_flow_residual(const CoupledNetwork& net,
                                      const Eigen::VectorXd& v,
                                      const Eigen::VectorXd& delta,
                                      const Eigen::VectorXd& p_bus,
                                      const Eigen::VectorXd& q_bus) {
  const int n = net.bus_count();
  PowerFlowResidual r;
  r.dp = p_bus;
  r.dq = q_bus;
  for (int i = 0; i < n; ++i) {
    double fp = 0.0, fq = 0.0;
    for (int j = 0; j < n; ++j) {
      const double g = net.g_bus(i, j);
      const double b = net.b_bus(i, j);
      if (g == 0.0 && b == 0.0) continue;
      const double th = delta(i) - delta(j);
      const double c = std::cos(th), s = std::sin(th);
      fp += v(i) * v(j) * (g * c + b * s);
      fq += v(i) * v(j) * (g * s - b * c);
    }
    r.dp(i) -= fp;
    r.dq(i) -= fq;
  }
  return r;
}

PowerFlowJacobian power_flow_jacobian(const CoupledNetwork& net,
                                      const Eigen::VectorXd& v,
                                      const Eigen::VectorXd& delta) {
  const int n = net.bus_count();
  PowerFlowJacobian jac;
  jac.p_by_v = Eigen::MatrixXd::Zero(n, n);
  jac.p_by_delta = Eigen::MatrixXd::Zero(n, n);
  jac.q_by_v = Eigen::MatrixXd::Zero(n, n);
  jac.q_by_delta = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const double g = net.g_bus(i, j);
      const double b = net.b_bus(i, j);
      if (g == 0.0 && b == 0.0) continue;
      const double th = delta(i) - delta(j);
      const double c = std::cos(th), s = std::sin(th);
      const double tp = g * c + b * s;   // d(v_i v_j tp)/...
      const double tq = g * s - b * c;
      if (j == i) {
        jac.p_by_v(i, i) += 2.0 * v(i) * g;
        jac.q_by_v(i, i) += -2.0 * v(i) * b;
        continue;
      }
      jac.p_by_v(i, j) += v(i) * tp;
      jac.p_by_v(i, i) += v(j) * tp;
      jac.q_by_v(i, j) += v(i) * tq;
      jac.q_by_v(i, i) += v(j) * tq;
      const double dp_dth = v(i) * v(j) * (-g * s + b * c);
      const double dq_dth = v(i) * v(j) * (g * c + b * s);
      jac.p_by_delta(i, i) += dp_dth;
      jac.p_by_delta(i, j) -= dp_dth;
      jac.q_by_delta(i, i) += dq_dth;
      jac.q_by_delta(i, j) -= dq_dth;
    }
  }
  return jac;
}

Eigen::MatrixXd power_flow_hessian(const CoupledNetwork& net,
                                   const Eigen::VectorXd& v,
                                   const Eigen::VectorXd& delta,
                                   const Eigen::VectorXd& lambda_p,
                                   const Eigen::VectorXd& lambda_q) {
  const int n = net.bus_count();
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(2 * n, 2 * n);
  // Coordinates: v block [0, n), delta block [n, 2n).
  auto add = [&](int a, int b, double val) {
    h(a, b) += val;
    if (a != b) h(b, a) += val;
  };
  for (int i = 0; i < n; ++i) {
    const double lp = lambda_p(i), lq = lambda_q(i);
    if (lp == 0.0 && lq == 0.0) continue;
    for (int j = 0; j < n; ++j) {
      const double g = net.g_bus(i, j);
      const double b = net.b_bus(i, j);
      if (g == 0.0 && b == 0.0) continue;
      if (j == i) {
        add(i, i, lp * 2.0 * g - lq * 2.0 * b);
        continue;
      }
      const double th = delta(i) - delta(j);
      const double c = std::cos(th), s = std::sin(th);
      const double tp = g * c + b * s;
      const double tq = g * s - b * c;
      const double w = lp;  // term v_i v_j tp in flow_p
      // d2/dvi dvj, d2/dvi dth, d2/dvj dth, d2/dth2 for v_i v_j f(th)
      // with f = tp for P and f = tq for Q; f' = tq' ... note tp' = -tq? No:
      // d(tp)/dth = -g s + b c = ... and d(tq)/dth = g c + b s = tp.
      const double tp_d = -g * s + b * c;
      const double tq_d = tp;
      // P contribution
      add(i, j, w * tp);                                   // vi vj
      add(i, n + i, w * v(j) * tp_d);                      // vi th(+)
      add(i, n + j, -w * v(j) * tp_d);
      add(j, n + i, w * v(i) * tp_d);
      add(j, n + j, -w * v(i) * tp_d);
      {
        const double t2 = w * v(i) * v(j) * (-tp);         // d2 tp/dth2 = -tp
        add(n + i, n + i, t2);
        add(n + j, n + j, t2);
        add(n + i, n + j, -t2);
      }
      // Q contribution
      const double u = lq;
      add(i, j, u * tq);
      add(i, n + i, u * v(j) * tq_d);
      add(i, n + j, -u * v(j) * tq_d);
      add(j, n + i, u * v(i) * tq_d);
      add(j, n + j, -u * v(i) * tq_d);
      {
        const double t2 = u * v(i) * v(j) * (-tq);
        add(n + i, n + i, t2);
        add(n + j, n + j, t2);
        add(n + i, n + j, -t2);
      }
    }
  }
  return h;
}

Eigen::VectorXd voltage_band_residual(const CoupledNetwork& net, const Eigen::VectorXd& v) {
  const int n = net.bus_count();
  Eigen::VectorXd out(2 * n);
  for (int i = 0; i < n; ++i) {
    out(2 * i) = v(i) - net.buses[i].v_min;
    out(2 * i + 1) = net.buses[i].v_max - v(i);
  }
  return out;
}

}  // namespace tcs::epn
