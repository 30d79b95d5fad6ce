// SPDX-License-Identifier: Apache-2.0
// How rho reshapes the averaging weights: beta_T, omega_T, and the share of
// the final average contributed by the last 10% of steps.
#include <cstdio>

#include "amuse/experiments.hpp"

int main() {
  const double beta1 = 0.8;
  const std::size_t t0 = 2000, T = 20000;
  std::printf("%5s  %10s  %12s  %14s\n", "rho", "beta_T", "omega_T", "last-10% mass");
  for (double rho : {0.0, 0.3, 0.7, 1.0}) {
    const auto v = amuse::schedule_viz(beta1, rho, t0, T, 10);
    std::printf("%5.2f  %10.6f  %12.4e  %14.6f\n", rho, v.beta.back(), v.omega.back(), v.histogram.back());
  }
}
