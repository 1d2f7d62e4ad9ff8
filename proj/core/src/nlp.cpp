#include "tcs/nlp.hpp"

#include <algorithm>
#include <cmath>

namespace tcs::nlp {

Eigen::VectorXd Problem::var_scale() const { return Eigen::VectorXd::Ones(num_vars()); }
Eigen::VectorXd Problem::eq_scale() const { return Eigen::VectorXd::Ones(num_eq()); }
Eigen::VectorXd Problem::ineq_scale() const { return Eigen::VectorXd::Ones(num_ineq()); }

const char* to_string(Scope s) {
  switch (s) {
    case Scope::joint: return "joint";
    case Scope::epn_only: return "epn-only";
    case Scope::dhn_only: return "dhn-only";
  }
  return "?";
}

double gradient_check(const Problem& p, const Eigen::VectorXd& x, double step) {
  const int n = p.num_vars();
  double worst = 0.0;
  auto rel = [](double analytic, double numeric) {
    const double denom = std::max({1.0, std::abs(analytic), std::abs(numeric)});
    return std::abs(analytic - numeric) / denom;
  };

  const Eigen::VectorXd g = p.objective_gradient(x);
  Eigen::MatrixXd jc_num(p.num_eq(), n), jh_num(p.num_ineq(), n);
  Eigen::VectorXd xp = x;
  for (int i = 0; i < n; ++i) {
    const double h = step * std::max(1.0, std::abs(x(i)));
    xp(i) = x(i) + h;
    const double fp = p.objective(xp);
    const Eigen::VectorXd cp = p.eq_residual(xp);
    const Eigen::VectorXd hp = p.ineq_residual(xp);
    xp(i) = x(i) - h;
    const double fm = p.objective(xp);
    const Eigen::VectorXd cm = p.eq_residual(xp);
    const Eigen::VectorXd hm = p.ineq_residual(xp);
    xp(i) = x(i);
    worst = std::max(worst, rel(g(i), (fp - fm) / (2 * h)));
    if (p.num_eq() > 0) jc_num.col(i) = (cp - cm) / (2 * h);
    if (p.num_ineq() > 0) jh_num.col(i) = (hp - hm) / (2 * h);
  }
  const Eigen::MatrixXd jc = Eigen::MatrixXd(p.eq_jacobian(x));
  const Eigen::MatrixXd jh = Eigen::MatrixXd(p.ineq_jacobian(x));
  for (int r = 0; r < p.num_eq(); ++r)
    for (int i = 0; i < n; ++i) worst = std::max(worst, rel(jc(r, i), jc_num(r, i)));
  for (int r = 0; r < p.num_ineq(); ++r)
    for (int i = 0; i < n; ++i) worst = std::max(worst, rel(jh(r, i), jh_num(r, i)));
  return worst;
}

}  // namespace tcs::nlp
