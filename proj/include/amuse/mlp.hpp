// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "amuse/error.hpp"
#include "amuse/linalg.hpp"
#include "amuse/params.hpp"
#include "amuse/rng.hpp"

namespace amuse {

enum class Activation { tanh, relu };

inline const char* to_string(Activation a) { return a == Activation::tanh ? "tanh" : "relu"; }

struct Batch {
  DenseMatrix inputs;                  // n x d
  std::vector<std::uint32_t> labels;   // n entries in [0, k)

  std::size_t size() const noexcept { return labels.size(); }
};

struct MlpSpec {
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden;  // widths of the hidden layers
  std::size_t output_dim = 0;
  Activation activation = Activation::tanh;
  bool muon_first_last = false;  // also route first/last weights to Muon
};

/// Feed-forward classifier. Layer l maps a_l (n x in_l) to
/// a_l W_l^T + b_l, with W_l stored out_l x in_l and b_l as 1 x out_l.
/// Parameters live in a ParamSet ordered W_0, b_0, W_1, b_1, ...
class MlpModel {
 public:
  MlpModel() = default;

  MlpModel(ParamSet params, Activation activation) : params_(std::move(params)), activation_(activation) {
    validate();
  }

  /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
  static MlpModel init(const MlpSpec& spec, std::uint64_t seed) {
    if (spec.input_dim == 0 || spec.output_dim == 0) throw ShapeError("MlpSpec: dimensions must be positive");
    std::vector<std::size_t> dims{spec.input_dim};
    dims.insert(dims.end(), spec.hidden.begin(), spec.hidden.end());
    dims.push_back(spec.output_dim);
    const std::size_t layers = dims.size() - 1;

    Rng rng(seed);
    ParamSet params;
    for (std::size_t l = 0; l < layers; ++l) {
      const std::size_t in = dims[l], out = dims[l + 1];
      const double bound = 1.0 / std::sqrt(static_cast<double>(in));
      DenseMatrix w(out, in);
      for (double& v : w.values()) v = rng.uniform(-bound, bound);
      DenseMatrix b(1, out);
      for (double& v : b.values()) v = rng.uniform(-bound, bound);
      const bool edge = (l == 0 || l + 1 == layers);
      const ParamGroup wg = (!edge || spec.muon_first_last) ? ParamGroup::muon : ParamGroup::auxiliary;
      params.add("layer" + std::to_string(l) + ".weight", std::move(w), wg);
      params.add("layer" + std::to_string(l) + ".bias", std::move(b), ParamGroup::auxiliary);
    }
    return MlpModel(std::move(params), spec.activation);
  }

  std::size_t layer_count() const noexcept { return params_.count() / 2; }
  const DenseMatrix& weight(std::size_t l) const { return params_[2 * l].value; }
  const DenseMatrix& bias(std::size_t l) const { return params_[2 * l + 1].value; }
  std::size_t input_dim() const { return weight(0).cols(); }
  std::size_t output_dim() const { return weight(layer_count() - 1).rows(); }
  Activation activation() const noexcept { return activation_; }

  ParamSet& params() noexcept { return params_; }
  const ParamSet& params() const noexcept { return params_; }
  std::size_t parameter_count() const { return params_.total_size(); }

  void validate() const {
    if (params_.empty() || params_.count() % 2 != 0) {
      throw ShapeError("MlpModel: expected (weight, bias) pairs, got " + std::to_string(params_.count()) + " params");
    }
    for (std::size_t l = 0; l < layer_count(); ++l) {
      const auto& w = weight(l);
      const auto& b = bias(l);
      if (b.rows() != 1 || b.cols() != w.rows()) {
        throw ShapeError("layer " + std::to_string(l) + ": bias " + b.shape_string() + " does not match weight " +
                         w.shape_string());
      }
      if (l > 0 && w.cols() != weight(l - 1).rows()) {
        throw ShapeError("layer " + std::to_string(l) + ": weight expects input width " + std::to_string(w.cols()) +
                         " but layer " + std::to_string(l - 1) + " outputs " + std::to_string(weight(l - 1).rows()));
      }
    }
  }

 private:
  ParamSet params_;
  Activation activation_ = Activation::tanh;
};

namespace detail {

inline void check_batch(const MlpModel& model, const Batch& batch) {
  if (batch.size() == 0) throw ShapeError("batch is empty");
  if (batch.inputs.rows() != batch.size()) {
    throw ShapeError("batch: " + std::to_string(batch.inputs.rows()) + " input rows but " +
                     std::to_string(batch.size()) + " labels");
  }
  if (batch.inputs.cols() != model.input_dim()) {
    throw ShapeError("layer 0: weight expects input width " + std::to_string(model.input_dim()) +
                     " but batch has " + std::to_string(batch.inputs.cols()) + " features");
  }
  const std::size_t k = model.output_dim();
  for (auto y : batch.labels)
    if (y >= k) throw ShapeError("batch: label " + std::to_string(y) + " out of range for " + std::to_string(k) + " classes");
}

/// z = a W^T + 1 b
inline DenseMatrix affine(const DenseMatrix& a, const DenseMatrix& w, const DenseMatrix& b) {
  DenseMatrix z = matmul_nt(a, w);
  const std::size_t n = z.rows(), m = z.cols();
  for (std::size_t r = 0; r < n; ++r) {
    double* row = z.data() + r * m;
    for (std::size_t c = 0; c < m; ++c) row[c] += b.data()[c];
  }
  return z;
}

inline DenseMatrix column_sums(const DenseMatrix& m) {
  DenseMatrix out(1, m.cols());
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) out.data()[c] += m(r, c);
  return out;
}

inline void hadamard_in_place(DenseMatrix& a, const DenseMatrix& b) {
  for (std::size_t i = 0; i < a.size(); ++i) a.data()[i] *= b.data()[i];
}

/// Forward pass with everything backward and the R-pass need.
struct ForwardCache {
  std::vector<DenseMatrix> acts;    // acts[l] = input of layer l; acts[0] = X
  std::vector<DenseMatrix> dact;    // sigma'(z_l) for hidden layers
  std::vector<DenseMatrix> ddact;   // sigma''(z_l) for hidden layers
  DenseMatrix probs;                // softmax(logits)
  double loss = 0.0;
};

inline ForwardCache forward(const MlpModel& model, const Batch& batch) {
  check_batch(model, batch);
  ForwardCache fc;
  const std::size_t L = model.layer_count();
  fc.acts.push_back(batch.inputs);
  for (std::size_t l = 0; l + 1 < L; ++l) {
    DenseMatrix z = affine(fc.acts.back(), model.weight(l), model.bias(l));
    DenseMatrix d1(z.rows(), z.cols()), d2(z.rows(), z.cols());
    for (std::size_t i = 0; i < z.size(); ++i) {
      double& v = z.data()[i];
      if (model.activation() == Activation::tanh) {
        const double t = std::tanh(v);
        const double s = 1.0 - t * t;
        v = t;
        d1.data()[i] = s;
        d2.data()[i] = -2.0 * t * s;
      } else {
        const bool on = v > 0.0;
        v = on ? v : 0.0;
        d1.data()[i] = on ? 1.0 : 0.0;
        d2.data()[i] = 0.0;
      }
    }
    fc.acts.push_back(std::move(z));
    fc.dact.push_back(std::move(d1));
    fc.ddact.push_back(std::move(d2));
  }
  DenseMatrix logits = affine(fc.acts.back(), model.weight(L - 1), model.bias(L - 1));

  const std::size_t n = logits.rows(), k = logits.cols();
  fc.probs = DenseMatrix(n, k);
  double total = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    const double* row = logits.data() + r * k;
    double mx = row[0];
    for (std::size_t c = 1; c < k; ++c) mx = std::max(mx, row[c]);
    double se = 0.0;
    for (std::size_t c = 0; c < k; ++c) se += std::exp(row[c] - mx);
    const double lse = mx + std::log(se);
    total += lse - row[batch.labels[r]];
    for (std::size_t c = 0; c < k; ++c) fc.probs(r, c) = std::exp(row[c] - lse);
  }
  fc.loss = total / static_cast<double>(n);
  return fc;
}

/// Reverse pass; deltas[l] is dLoss/dz_l, backprops[l] = deltas[l] W_l (l >= 1).
struct BackwardCache {
  std::vector<DenseMatrix> deltas;
  std::vector<DenseMatrix> backprops;
};

inline BackwardCache backward_pass(const MlpModel& model, const Batch& batch, const ForwardCache& fc, ParamSet* grad) {
  const std::size_t L = model.layer_count();
  const std::size_t n = batch.size();
  BackwardCache bc;
  bc.deltas.resize(L);
  bc.backprops.resize(L);
  DenseMatrix delta = fc.probs;
  for (std::size_t r = 0; r < n; ++r) delta(r, batch.labels[r]) -= 1.0;
  delta *= 1.0 / static_cast<double>(n);
  for (std::size_t l = L; l-- > 0;) {
    if (grad) {
      (*grad)[2 * l].value = matmul_tn(delta, fc.acts[l]);
      (*grad)[2 * l + 1].value = column_sums(delta);
    }
    bc.deltas[l] = delta;
    if (l > 0) {
      DenseMatrix bp = matmul(delta, model.weight(l));
      delta = bp;
      hadamard_in_place(delta, fc.dact[l - 1]);
      bc.backprops[l] = std::move(bp);
    }
  }
  return bc;
}

}  // namespace detail

/// Mean cross-entropy, log-sum-exp stabilized.
inline double forward_loss(const MlpModel& model, const Batch& batch) { return detail::forward(model, batch).loss; }

struct LossAndGrad {
  double loss = 0.0;
  ParamSet grad;
};

inline LossAndGrad loss_and_grad(const MlpModel& model, const Batch& batch) {
  LossAndGrad out;
  const auto fc = detail::forward(model, batch);
  out.loss = fc.loss;
  out.grad = model.params().zeros_like();
  detail::backward_pass(model, batch, fc, &out.grad);
  return out;
}

/// Exact reverse-mode gradient of the mean cross-entropy.
inline ParamSet backward(const MlpModel& model, const Batch& batch) { return loss_and_grad(model, batch).grad; }

/// Matrix-free Hessian of the batch loss at a fixed parameter point. The
/// forward and reverse passes are cached; each apply() runs the directional
/// derivative of the reverse pass (forward-over-reverse).
class HessianOperator {
 public:
  HessianOperator(const MlpModel& model, const Batch& batch)
      : model_(&model), batch_(&batch), fc_(detail::forward(model, batch)),
        bc_(detail::backward_pass(model, batch, fc_, nullptr)) {}

  std::size_t dim() const { return model_->parameter_count(); }
  double loss() const noexcept { return fc_.loss; }

  FlatVector apply(std::span<const double> v) const {
    if (v.size() != dim()) {
      throw ShapeError("hvp: direction length " + std::to_string(v.size()) + " != parameter count " +
                       std::to_string(dim()));
    }
    const MlpModel& model = *model_;
    const std::size_t L = model.layer_count();
    const std::size_t n = batch_->size();

    std::vector<DenseMatrix> vw, vb;
    {
      std::size_t off = 0;
      for (std::size_t l = 0; l < L; ++l) {
        const auto& w = model.weight(l);
        DenseMatrix a(w.rows(), w.cols());
        std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(off), a.size(), a.data());
        off += a.size();
        DenseMatrix b(1, w.rows());
        std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(off), b.size(), b.data());
        off += b.size();
        vw.push_back(std::move(a));
        vb.push_back(std::move(b));
      }
    }

    // R-forward: rz[l] = R{z_l}, racts[l] = R{a_l}
    std::vector<DenseMatrix> rz(L), racts(L);
    for (std::size_t l = 0; l < L; ++l) {
      DenseMatrix z = detail::affine(fc_.acts[l], vw[l], vb[l]);
      if (l > 0) z += matmul_nt(racts[l], model.weight(l));
      if (l + 1 < L) {
        DenseMatrix ra = z;
        detail::hadamard_in_place(ra, fc_.dact[l]);
        racts[l + 1] = std::move(ra);
      }
      rz[l] = std::move(z);
    }

    // R{delta_out} = R{softmax}/n
    const std::size_t k = fc_.probs.cols();
    DenseMatrix rdelta(n, k);
    const DenseMatrix& rl = rz[L - 1];
    for (std::size_t r = 0; r < n; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < k; ++c) s += fc_.probs(r, c) * rl(r, c);
      for (std::size_t c = 0; c < k; ++c) rdelta(r, c) = fc_.probs(r, c) * (rl(r, c) - s) / static_cast<double>(n);
    }

    FlatVector out(dim());
    std::vector<DenseMatrix> rgw(L), rgb(L);
    for (std::size_t l = L; l-- > 0;) {
      DenseMatrix gw = matmul_tn(rdelta, fc_.acts[l]);
      if (l > 0) gw += matmul_tn(bc_.deltas[l], racts[l]);
      rgw[l] = std::move(gw);
      rgb[l] = detail::column_sums(rdelta);
      if (l > 0) {
        DenseMatrix next = matmul(rdelta, model.weight(l));
        next += matmul(bc_.deltas[l], vw[l]);
        detail::hadamard_in_place(next, fc_.dact[l - 1]);
        const DenseMatrix& bp = bc_.backprops[l];
        const DenseMatrix& dd = fc_.ddact[l - 1];
        const DenseMatrix& zprev = rz[l - 1];
        for (std::size_t i = 0; i < next.size(); ++i) next.data()[i] += bp.data()[i] * dd.data()[i] * zprev.data()[i];
        rdelta = std::move(next);
      }
    }
    std::size_t off = 0;
    for (std::size_t l = 0; l < L; ++l) {
      std::copy(rgw[l].values().begin(), rgw[l].values().end(), out.begin() + static_cast<std::ptrdiff_t>(off));
      off += rgw[l].size();
      std::copy(rgb[l].values().begin(), rgb[l].values().end(), out.begin() + static_cast<std::ptrdiff_t>(off));
      off += rgb[l].size();
    }
    return out;
  }

 private:
  const MlpModel* model_;
  const Batch* batch_;
  detail::ForwardCache fc_;
  detail::BackwardCache bc_;
};

inline FlatVector hvp(const MlpModel& model, const Batch& batch, std::span<const double> v) {
  return HessianOperator(model, batch).apply(v);
}

// ---------------------------------------------------------------------------
// Finite-difference oracles

inline void check_fd_step(double h) {
  if (!(h >= 1e-7 && h <= 1e-3)) throw std::invalid_argument("finite difference step must lie in [1e-7, 1e-3]");
}

/// Central differences on the listed flat coordinates.
inline FlatVector finite_diff_grad_at(const MlpModel& model, const Batch& batch, double h,
                                      std::span<const std::size_t> coords) {
  check_fd_step(h);
  MlpModel probe = model;
  FlatVector theta = model.params().flatten();
  FlatVector out;
  out.reserve(coords.size());
  for (std::size_t idx : coords) {
    const double saved = theta[idx];
    theta[idx] = saved + h;
    probe.params().assign_flat(theta);
    const double up = forward_loss(probe, batch);
    theta[idx] = saved - h;
    probe.params().assign_flat(theta);
    const double down = forward_loss(probe, batch);
    theta[idx] = saved;
    out.push_back((up - down) / (2.0 * h));
  }
  return out;
}

/// Full central-difference gradient, one coordinate at a time.
inline ParamSet finite_diff_grad(const MlpModel& model, const Batch& batch, double h) {
  std::vector<std::size_t> all(model.parameter_count());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  ParamSet g = model.params().zeros_like();
  g.assign_flat(finite_diff_grad_at(model, batch, h, all));
  return g;
}

/// (grad(theta + h v) - grad(theta - h v)) / 2h
inline FlatVector finite_diff_hvp(const MlpModel& model, const Batch& batch, std::span<const double> v, double h) {
  check_fd_step(h);
  const FlatVector theta = model.params().flatten();
  if (v.size() != theta.size()) throw ShapeError("finite_diff_hvp: length mismatch");
  MlpModel probe = model;
  FlatVector shifted = theta;
  axpy(h, v, shifted);
  probe.params().assign_flat(shifted);
  const FlatVector up = backward(probe, batch).flatten();
  shifted = theta;
  axpy(-h, v, shifted);
  probe.params().assign_flat(shifted);
  const FlatVector down = backward(probe, batch).flatten();
  FlatVector out(theta.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (up[i] - down[i]) / (2.0 * h);
  return out;
}

}  // namespace amuse
