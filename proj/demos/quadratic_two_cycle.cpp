// SPDX-License-Identifier: Apache-2.0
// Gradient descent vs matrix-normalized steps on f(W) = 1/2 tr(W^T A W).
// GD shrinks the steep coordinate geometrically; the normalized step moves it
// by a fixed eta and ends up bouncing between two values.
#include <cstdio>

#include "amuse/quadratic.hpp"

int main() {
  const double lambda = 4.0;
  const auto gd = amuse::run_quadratic(lambda, 0.1, 1.0, 1.0, 8, amuse::QuadMode::gd);
  const auto mn = amuse::run_quadratic(lambda, 0.5, 0.3, 0.45, 8, amuse::QuadMode::matrix_normalized);
  std::printf("%3s  %12s  %12s\n", "t", "a (gd)", "a (normalized)");
  for (std::size_t t = 0; t < gd.size() && t < mn.size(); ++t) {
    std::printf("%3zu  %12.6f  %12.6f\n", t, gd[t].a, mn[t].a);
  }
}
