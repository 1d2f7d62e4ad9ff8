#include <cmath>

#include "tcs/network.hpp"

namespace tcs {

// dp[bar] = mu * mdot^2 fitted to Darcy-Weisbach at the reference flow.
// Colebrook-White: 1/sqrt(l) = -2 log10(k/(3.7 D) + 2.51/(Re sqrt(l))).
FrictionFit precompute_friction(const PipelineParams& pipe, const WaterProperties& water) {
  FrictionFit fit;
  const double area = pipe.cross_section;
  const double re = pipe.reference_flow * pipe.diameter / (area * water.viscosity);
  fit.reynolds = re;

  double lambda;
  if (re < 2300.0) {
    lambda = 64.0 / re;
    fit.laminar = true;
  } else {
    const double rel_rough = pipe.roughness / (3.7 * pipe.diameter);
    double inv_sqrt = 2.0;  // lambda ~ 0.25 start
    for (int it = 0; it < 200; ++it) {
      const double next = -2.0 * std::log10(rel_rough + 2.51 * inv_sqrt / re);
      fit.iterations = it + 1;
      if (std::abs(next - inv_sqrt) <= 1e-10 * std::abs(next)) {
        inv_sqrt = next;
        break;
      }
      inv_sqrt = next;
    }
    lambda = 1.0 / (inv_sqrt * inv_sqrt);
  }
  fit.darcy_factor = lambda;
  fit.mu = lambda * pipe.length / (2.0 * water.density * area * area * pipe.diameter) / kBarToPascal;
  return fit;
}

}  // namespace tcs
