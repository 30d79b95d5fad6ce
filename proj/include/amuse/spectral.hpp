// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <sstream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "amuse/error.hpp"
#include "amuse/linalg.hpp"
#include "amuse/mlp.hpp"
#include "amuse/rng.hpp"

namespace amuse {

using HvpHandle = std::function<FlatVector(std::span<const double>)>;

/// Top-k Hessian eigenpairs at a parameter point.
struct EigenBasis {
  std::vector<double> eigenvalues;      // descending
  std::vector<FlatVector> eigenvectors; // orthonormal
  std::vector<double> residuals;        // ||H u - lambda u|| / max(|lambda|, floor) per pair
  FlatVector anchor;                    // parameter point (may be empty for abstract operators)
  std::size_t iterations = 0;           // Lanczos steps taken

  std::size_t k() const noexcept { return eigenvalues.size(); }
  std::size_t dim() const noexcept { return eigenvectors.empty() ? 0 : eigenvectors.front().size(); }
};

class LanczosError : public NumericalError {
 public:
  LanczosError(const std::string& what, std::vector<double> residuals)
      : NumericalError(what), residuals_(std::move(residuals)) {}
  const std::vector<double>& residuals() const noexcept { return residuals_; }

 private:
  std::vector<double> residuals_;
};

struct LanczosOptions {
  double tol = 1e-4;              // relative Ritz residual required for each of the top k
  std::size_t check_every = 5;    // convergence test cadence (in Lanczos steps)
  FlatVector start;               // optional starting vector (e.g. built from a previous basis)
};

/// Start vector for a refresh: the previous top-k directions plus a seeded
/// random component so no eigendirection is missed.
inline FlatVector warm_start(const std::vector<FlatVector>& previous, std::uint64_t seed, double noise = 0.1) {
  if (previous.empty()) return {};
  const std::size_t dim = previous.front().size();
  FlatVector v(dim, 0.0);
  for (const auto& u : previous) axpy(1.0, u, v);
  scale_in_place(v, 1.0 / norm2(v));
  Rng rng(seed);
  FlatVector r(dim);
  for (double& x : r) x = rng.normal();
  axpy(noise / norm2(r), r, v);
  return v;
}

namespace detail {

inline void orthogonalize_against(FlatVector& w, const std::vector<FlatVector>& basis) {
  // classical Gram-Schmidt, applied twice
  for (int pass = 0; pass < 2; ++pass)
    for (const auto& q : basis) axpy(-dot(q, w), q, w);
}

inline FlatVector random_unit(std::size_t dim, Rng& rng, const std::vector<FlatVector>& against) {
  for (int attempt = 0; attempt < 8; ++attempt) {
    FlatVector v(dim);
    for (double& x : v) x = rng.normal();
    orthogonalize_against(v, against);
    const double n = norm2(v);
    if (n > 1e-8) {
      scale_in_place(v, 1.0 / n);
      return v;
    }
  }
  throw NumericalError("lanczos: could not draw a vector outside the current Krylov space");
}

}  // namespace detail

/// Lanczos with full reorthogonalization. Stops as soon as the top-k Ritz
/// pairs reach the residual tolerance, or when the Krylov space is the whole
/// space. When the recurrence breaks down (an invariant subspace was found)
/// it continues from a fresh random vector, so repeated eigenvalues are
/// resolved with their multiplicity.
inline EigenBasis lanczos_topk(const HvpHandle& hvp, std::size_t dim, std::size_t k, std::size_t iters,
                               std::uint64_t seed, LanczosOptions opts = {}) {
  if (k == 0 || k > iters || iters > dim) {
    throw std::invalid_argument("lanczos_topk: need 1 <= k <= iters <= dim (k=" + std::to_string(k) +
                                ", iters=" + std::to_string(iters) + ", dim=" + std::to_string(dim) + ")");
  }
  Rng rng(seed);
  std::vector<FlatVector> q;
  std::vector<double> alpha, beta;  // beta[j] couples q[j] and q[j+1]
  if (!opts.start.empty()) {
    if (opts.start.size() != dim) throw ShapeError("lanczos_topk: start vector has wrong length");
    FlatVector v = opts.start;
    const double n = norm2(v);
    if (!(n > 0.0)) throw std::invalid_argument("lanczos_topk: zero start vector");
    scale_in_place(v, 1.0 / n);
    q.push_back(std::move(v));
  } else {
    q.push_back(detail::random_unit(dim, rng, q));
  }

  SymmetricEigen ritz;
  std::vector<double> resid(k, std::numeric_limits<double>::infinity());
  double scale = 0.0;
  bool converged = false;

  for (std::size_t j = 0; j < iters; ++j) {
    FlatVector w = hvp(q[j]);
    if (w.size() != dim) throw ShapeError("lanczos_topk: hvp returned wrong length");
    const double a = dot(w, q[j]);
    alpha.push_back(a);
    axpy(-a, q[j], w);
    if (j > 0) axpy(-beta[j - 1], q[j - 1], w);
    detail::orthogonalize_against(w, q);
    const double b = norm2(w);
    scale = std::max({scale, std::abs(a), b});

    const std::size_t m = j + 1;
    const bool full = (m == dim);
    const bool breakdown = b <= 1e-10 * std::max(scale, 1e-300);
    const bool check = m >= k && (m % opts.check_every == 0 || full || breakdown || m == iters);
    if (check) {
      DenseMatrix t(m, m);
      for (std::size_t i = 0; i < m; ++i) {
        t(i, i) = alpha[i];
        if (i + 1 < m) t(i, i + 1) = t(i + 1, i) = beta[i];
      }
      ritz = symmetric_eigen(t);
      const double floor = 1e-8 * std::max(std::abs(ritz.values.front()), std::abs(ritz.values.back()));
      converged = true;
      for (std::size_t i = 0; i < k; ++i) {
        const double est = (full ? 0.0 : b) * std::abs(ritz.vectors(m - 1, i));
        resid[i] = est / std::max(std::abs(ritz.values[i]), floor);
        if (!(resid[i] < opts.tol)) converged = false;
      }
      // a breakdown only certifies the current invariant subspace; keep exploring
      if (full || (converged && !breakdown)) break;
    }
    if (m == iters) break;

    if (breakdown) {
      beta.push_back(0.0);
      q.push_back(detail::random_unit(dim, rng, q));
    } else {
      beta.push_back(b);
      scale_in_place(w, 1.0 / b);
      q.push_back(std::move(w));
    }
  }
  if (!converged && q.size() < dim) {
    std::ostringstream os;
    os << "lanczos_topk: top-" << k << " not converged after " << alpha.size() << " iterations; residuals:";
    for (double r : resid) os << ' ' << r;
    throw LanczosError(os.str(), resid);
  }

  const std::size_t m = alpha.size();
  EigenBasis out;
  out.iterations = m;
  out.residuals.assign(resid.begin(), resid.begin() + static_cast<std::ptrdiff_t>(k));
  for (std::size_t i = 0; i < k; ++i) {
    FlatVector u(dim, 0.0);
    for (std::size_t j = 0; j < m; ++j) axpy(ritz.vectors(j, i), q[j], u);
    const double n = norm2(u);
    scale_in_place(u, 1.0 / n);
    // deterministic sign: largest-magnitude coordinate positive
    const auto big = std::max_element(u.begin(), u.end(), [](double x, double y) { return std::abs(x) < std::abs(y); });
    if (*big < 0) scale_in_place(u, -1.0);
    out.eigenvalues.push_back(ritz.values[i]);
    out.eigenvectors.push_back(std::move(u));
  }
  return out;
}

/// Top-k eigenpairs of the loss Hessian of `model` over `data`.
inline EigenBasis hessian_topk(const MlpModel& model, const Batch& data, std::size_t k, std::size_t max_iters,
                               std::uint64_t seed, LanczosOptions opts = {}) {
  const HessianOperator op(model, data);
  const std::size_t dim = op.dim();
  EigenBasis basis = lanczos_topk([&op](std::span<const double> v) { return op.apply(v); }, dim, k,
                                  std::min(max_iters, dim), seed, opts);
  basis.anchor = model.params().flatten();
  return basis;
}

struct SubspaceRatios {
  double dominant = 0.0;
  double bulk = 0.0;
};

/// Projection coefficients <u_i, v>.
inline std::vector<double> project_coefficients(std::span<const double> v, const EigenBasis& basis) {
  std::vector<double> c;
  c.reserve(basis.k());
  for (const auto& u : basis.eigenvectors) c.push_back(dot(u, v));
  return c;
}

/// P_k v
inline FlatVector project_dominant(std::span<const double> v, const EigenBasis& basis) {
  FlatVector out(v.size(), 0.0);
  const auto c = project_coefficients(v, basis);
  for (std::size_t i = 0; i < c.size(); ++i) axpy(c[i], basis.eigenvectors[i], out);
  return out;
}

/// r_dom = ||P_k v|| / ||v||, r_bulk = ||v - P_k v|| / ||v||, each measured directly.
inline SubspaceRatios dominant_ratio(std::span<const double> v, const EigenBasis& basis) {
  if (v.size() != basis.dim()) {
    throw ShapeError("dominant_ratio: vector length " + std::to_string(v.size()) + " != basis dim " +
                     std::to_string(basis.dim()));
  }
  const double nv = norm2(v);
  if (nv == 0.0) throw std::invalid_argument("dominant_ratio: zero vector");
  FlatVector rest(v.begin(), v.end());
  const FlatVector p = project_dominant(v, basis);
  axpy(-1.0, p, rest);
  SubspaceRatios r;
  r.dominant = std::min(1.0, norm2(p) / nv);
  r.bulk = std::min(1.0, norm2(rest) / nv);
  return r;
}

/// alpha P_k u + gamma P_k^perp u, evaluated as gamma u + (alpha - gamma) P_k u
/// so that alpha = gamma = 1 returns u unchanged.
inline FlatVector scale_update(std::span<const double> u, const EigenBasis& basis, double alpha, double gamma) {
  if (u.size() != basis.dim()) throw ShapeError("scale_update: length mismatch");
  FlatVector out(u.begin(), u.end());
  if (alpha == gamma) {
    if (gamma != 1.0) scale_in_place(out, gamma);
    return out;
  }
  scale_in_place(out, gamma);
  axpy(alpha - gamma, project_dominant(u, basis), out);
  return out;
}

}  // namespace amuse
