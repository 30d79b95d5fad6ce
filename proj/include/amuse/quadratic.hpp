// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "amuse/error.hpp"
#include "amuse/linalg.hpp"

namespace amuse {

/// f(W) = 1/2 tr(W^T A W) for symmetric A; grad = A W, Hessian = I (x) A on
/// the row-major vec(W).
class QuadraticObjective {
 public:
  QuadraticObjective(DenseMatrix a, std::size_t cols) : a_(std::move(a)), cols_(cols) {
    if (a_.rows() != a_.cols()) throw ShapeError("QuadraticObjective: A must be square");
    if (cols_ == 0) throw ShapeError("QuadraticObjective: W needs at least one column");
  }

  std::size_t rows() const noexcept { return a_.rows(); }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t dim() const noexcept { return a_.rows() * cols_; }
  const DenseMatrix& a() const noexcept { return a_; }

  double loss(const DenseMatrix& w) const {
    const DenseMatrix aw = matmul(a_, w);
    double s = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) s += w.data()[i] * aw.data()[i];
    return 0.5 * s;
  }
  DenseMatrix grad(const DenseMatrix& w) const { return matmul(a_, w); }

  FlatVector hvp(std::span<const double> v) const {
    if (v.size() != dim()) throw ShapeError("QuadraticObjective::hvp: length mismatch");
    const DenseMatrix vm(rows(), cols_, std::vector<double>(v.begin(), v.end()));
    const DenseMatrix hv = matmul(a_, vm);
    return FlatVector(hv.values().begin(), hv.values().end());
  }

  /// Dense Hessian assembled column by column from unit vectors (oracle).
  DenseMatrix explicit_hessian() const {
    DenseMatrix h(dim(), dim());
    FlatVector e(dim(), 0.0);
    for (std::size_t j = 0; j < dim(); ++j) {
      e[j] = 1.0;
      const FlatVector col = hvp(e);
      for (std::size_t i = 0; i < dim(); ++i) h(i, j) = col[i];
      e[j] = 0.0;
    }
    return h;
  }

 private:
  DenseMatrix a_;
  std::size_t cols_;
};

enum class QuadMode { gd, matrix_normalized };

struct QuadPoint {
  std::size_t t = 0;
  double a = 0.0;
  double b = 0.0;
};

/// 2x2 rotation by `angle`.
inline DenseMatrix rotation2(double angle) {
  return DenseMatrix::from_rows({{std::cos(angle), -std::sin(angle)}, {std::sin(angle), std::cos(angle)}});
}

/// Iterates W <- W - eta * D on f(W) = 1/2 tr(W^T A W) with A = Q diag(lambda, 1) Q^T,
/// D = grad (gd) or Polar(grad) (matrix_normalized, via polar_factor_oracle).
/// Starts at W = Q diag(a0, b0) and reports V = Q^T W's diagonal. Under
/// matrix_normalized, a coordinate reaching zero (below 1e-12 of the larger
/// one, i.e. rounding noise from Q) makes the gradient rank deficient and
/// the run halts early (the trajectory is truncated).
inline std::vector<QuadPoint> run_quadratic(double lambda, double eta, double a0, double b0, std::size_t steps,
                                            QuadMode mode, double q_angle = 0.6154797086703873) {
  if (!(lambda > 1.0)) throw std::invalid_argument("run_quadratic: need lambda > 1");
  if (!(eta > 0.0)) throw std::invalid_argument("run_quadratic: need eta > 0");
  const DenseMatrix q = rotation2(q_angle);
  const DenseMatrix lam = DenseMatrix::from_rows({{lambda, 0.0}, {0.0, 1.0}});
  const QuadraticObjective f(matmul_nt(matmul(q, lam), q), 2);

  DenseMatrix w = matmul(q, DenseMatrix::from_rows({{a0, 0.0}, {0.0, b0}}));
  std::vector<QuadPoint> out{{0, a0, b0}};
  for (std::size_t t = 1; t <= steps; ++t) {
    const DenseMatrix g = f.grad(w);
    DenseMatrix d;
    if (mode == QuadMode::gd) {
      d = g;
    } else {
      const DenseMatrix v = matmul_tn(q, w);
      const double floor = 1e-12 * std::max(std::abs(v(0, 0)), std::abs(v(1, 1)));
      if (std::abs(v(0, 0)) <= floor || std::abs(v(1, 1)) <= floor) break;
      d = polar_factor_oracle(g);
    }
    w -= eta * d;
    const DenseMatrix v = matmul_tn(q, w);
    out.push_back({t, v(0, 0), v(1, 1)});
  }
  return out;
}

}  // namespace amuse
