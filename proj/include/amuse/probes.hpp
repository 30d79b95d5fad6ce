// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "amuse/mlp.hpp"
#include "amuse/optim.hpp"
#include "amuse/spectral.hpp"

namespace amuse {

enum class AnchorMode { point, shared };

inline const char* to_string(AnchorMode m) { return m == AnchorMode::point ? "point" : "shared"; }

struct BasisRequest {
  std::size_t k = 10;
  std::size_t max_iters = 150;
  LanczosOptions lanczos;
  std::uint64_t seed = 0;
};

struct AlphaProbe {
  double alpha = 0.0;
  FlatVector gradient;
  double loss = 0.0;
  SubspaceRatios ratios;
  bool measured = false;  // false when the basis did not converge
};

/// Flattened parameters of y^(alpha) = (1 - alpha) z + alpha x.
inline FlatVector interpolation_point(const OptimizerState& st, double alpha) {
  FlatVector out;
  for (std::size_t i = 0; i < st.z.size(); ++i) {
    const double* pz = st.z[i].data();
    const double* px = st.x[i].data();
    for (std::size_t j = 0; j < st.z[i].size(); ++j) {
      out.push_back(alpha == 0.0 ? pz[j] : (1.0 - alpha) * pz[j] + alpha * px[j]);
    }
  }
  return out;
}

/// Gradients at virtual points between z_t and x_t and their dominant ratios.
/// Read-only: works on a private copy of the model. `point` anchors the basis
/// at every y^(alpha); `shared` uses one basis at the current y_t. A basis
/// that fails to converge leaves that entry unmeasured. `warm` carries
/// eigenvectors from a previous call and is updated in place.
inline std::vector<AlphaProbe> grad_probe_alpha(const MlpModel& model, const Optimizer& opt, const Batch& grad_batch,
                                                const Batch& hessian_batch, std::span<const double> alphas,
                                                const BasisRequest& req, AnchorMode anchor,
                                                std::vector<FlatVector>* warm = nullptr) {
  if (!opt.schedule_free()) throw std::invalid_argument("grad_probe_alpha: optimizer is not schedule-free");
  const OptimizerState& st = opt.state();
  MlpModel probe = model;

  auto basis_at = [&](const MlpModel& m, std::uint64_t salt) -> std::optional<EigenBasis> {
    LanczosOptions lo = req.lanczos;
    if (warm && !warm->empty()) lo.start = warm_start(*warm, req.seed ^ salt);
    try {
      EigenBasis b = hessian_topk(m, hessian_batch, req.k, req.max_iters, req.seed ^ salt, lo);
      if (warm) *warm = b.eigenvectors;
      return b;
    } catch (const LanczosError&) {
      return std::nullopt;
    }
  };

  std::optional<EigenBasis> shared;
  if (anchor == AnchorMode::shared) shared = basis_at(model, 0x5eed);

  std::vector<AlphaProbe> out;
  for (std::size_t i = 0; i < alphas.size(); ++i) {
    AlphaProbe p;
    p.alpha = alphas[i];
    probe.params().assign_flat(interpolation_point(st, p.alpha));
    auto lg = loss_and_grad(probe, grad_batch);
    p.loss = lg.loss;
    p.gradient = lg.grad.flatten();
    std::optional<EigenBasis> own;
    if (anchor == AnchorMode::point) own = basis_at(probe, 0x100 + i);
    const auto& basis = anchor == AnchorMode::point ? own : shared;
    if (basis && norm2(p.gradient) > 0.0) {
      p.ratios = dominant_ratio(p.gradient, *basis);
      p.measured = true;
    }
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace amuse
