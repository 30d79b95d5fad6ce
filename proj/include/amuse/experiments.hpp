// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "amuse/data.hpp"
#include "amuse/mlp.hpp"
#include "amuse/optim.hpp"
#include "amuse/probes.hpp"
#include "amuse/spectral.hpp"

namespace amuse {

enum ProbeFlag : unsigned { kProbeSubspace = 1u, kProbeGradAlpha = 2u, kProbeNorms = 4u, kProbeCosine = 8u };

struct ProbeConfig {
  unsigned probes = 0;          // ProbeFlag bits
  std::size_t every = 50;       // measurement cadence (steps)
  std::size_t start = 0;        // first step eligible for measurement
  std::size_t end = 0;          // last eligible step; 0 = no limit
  std::size_t k = 0;            // basis size; 0 = number of classes
  std::size_t lanczos_iters = 200;
  double lanczos_tol = 1e-4;
  std::vector<double> alphas{0.0, 0.25, 0.5, 0.75, 1.0};
  AnchorMode anchor = AnchorMode::point;
  std::size_t hessian_samples = 0;  // 0 = whole dataset

  bool has(ProbeFlag f) const noexcept { return (probes & f) != 0; }
  bool measures(std::uint64_t t) const noexcept {
    if (every == 0 || t < start || (end != 0 && t > end)) return false;
    return t % every == 0;
  }
};

struct TrainConfig {
  MlpSpec model;
  OptimizerConfig opt;
  std::uint64_t seed = 0;  // model init and batch order
  std::size_t steps = 1000;
  std::size_t batch_size = 50;
  ProbeConfig probe;
  std::size_t eval_every = 50;  // full-data loss at x
  std::size_t checkpoint_every = 500;
};

inline constexpr double kUnmeasured = std::numeric_limits<double>::quiet_NaN();

/// One CSV record. Unmeasured fields are NaN and written empty.
struct MetricRow {
  std::uint64_t step = 0;
  double train_loss = kUnmeasured;     // minibatch loss at the gradient point
  double eval_loss = kUnmeasured;      // full-data loss at x after the step
  double rdom_update = kUnmeasured;    // dx_t (theta update, or x update for SF kinds)
  double rdom_grad = kUnmeasured;      // minibatch gradient at the evaluation point
  double rdom_momentum = kUnmeasured;  // Muon momentum M_t, Muon blocks only
  double rdom_orth = kUnmeasured;      // O(M_t), Muon blocks only
  double update_norm = kUnmeasured;    // ||dx_t||
  double cos_prev = kUnmeasured;       // cos(dx_{t-1}, dx_t)
  double beta = kUnmeasured;
  double omega = kUnmeasured;
  double lr = kUnmeasured;
};

struct AlphaRow {
  std::uint64_t step = 0;
  double alpha = 0.0;
  double rdom_grad = kUnmeasured;
  double grad_norm = kUnmeasured;
  double loss = kUnmeasured;
};

struct RunResult {
  std::vector<MetricRow> rows;
  std::vector<AlphaRow> alpha_rows;
  MlpModel model;          // final model (last good one when aborted)
  OptimizerState state;
  bool aborted = false;
  std::string abort_reason;
  std::size_t lanczos_failures = 0;
};

using CheckpointSink = std::function<void(std::uint64_t step, const MlpModel&, const OptimizerState&)>;

/// Training loop driver: owns the model and optimizer; step t (1-based) uses
/// batch (t-1) mod B of epoch (t-1)/B, so a resumed run sees the same data.
class Trainer {
 public:
  Trainer(TrainConfig cfg, const Dataset& ds)
      : cfg_(std::move(cfg)), ds_(&ds), model_(MlpModel::init(cfg_.model, cfg_.seed)), opt_(cfg_.opt, model_.params()) {
    check();
  }

  Trainer(TrainConfig cfg, const Dataset& ds, MlpModel model, const OptimizerState& st)
      : cfg_(std::move(cfg)), ds_(&ds), model_(std::move(model)), opt_(cfg_.opt, model_.params()) {
    check();
    opt_.load_state(st, model_.params());
  }

  std::uint64_t step() const noexcept { return opt_.state().t; }
  MlpModel& model() noexcept { return model_; }
  const MlpModel& model() const noexcept { return model_; }
  Optimizer& optimizer() noexcept { return opt_; }
  const Optimizer& optimizer() const noexcept { return opt_; }
  const TrainConfig& config() const noexcept { return cfg_; }

  std::size_t batches_per_epoch() const { return (ds_->size() + cfg_.batch_size - 1) / cfg_.batch_size; }

  const Batch& batch_for(std::uint64_t t) {
    const std::uint64_t nb = batches_per_epoch();
    const std::uint64_t epoch = (t - 1) / nb;
    if (!cached_epoch_ || *cached_epoch_ != epoch) {
      epoch_batches_ = batches(*ds_, cfg_.batch_size, cfg_.seed, epoch);
      cached_epoch_ = epoch;
    }
    return epoch_batches_[(t - 1) % nb];
  }

  struct Step {
    StepInfo info;
    double loss = 0.0;
    ParamSet grad;
  };

  Step advance(MuonTrace* trace = nullptr) {
    const Batch& b = batch_for(step() + 1);
    auto lg = loss_and_grad(model_, b);
    if (!std::isfinite(lg.loss)) {
      throw NumericalError("non-finite training loss at step " + std::to_string(step() + 1));
    }
    Step s;
    s.loss = lg.loss;
    s.grad = lg.grad;
    s.info = opt_.step(model_.params(), std::move(lg.grad), trace);
    return s;
  }

  /// Flattened x (stored average for SF kinds, the parameters otherwise).
  FlatVector x_flat() const {
    if (!opt_.schedule_free()) return model_.params().flatten();
    return vectorize(opt_.state().x);
  }

  /// Loss of x on `data`.
  double loss_at_x(const Batch& data) {
    EvalSwap swap(model_.params(), opt_, SwapMode::stored);
    return forward_loss(model_, data);
  }

 private:
  void check() const {
    if (cfg_.batch_size == 0) throw ConfigError("batch_size must be >= 1");
    if (cfg_.model.input_dim != ds_->dim()) throw ConfigError("model input_dim does not match the dataset");
    if (cfg_.model.output_dim != ds_->num_classes) throw ConfigError("model output_dim does not match num_classes");
  }

  TrainConfig cfg_;
  const Dataset* ds_;
  MlpModel model_;
  Optimizer opt_;
  std::optional<std::uint64_t> cached_epoch_;
  std::vector<Batch> epoch_batches_;
};

namespace detail {

inline double safe_ratio(std::span<const double> v, const EigenBasis& basis) {
  if (norm2(v) == 0.0) return kUnmeasured;
  return dominant_ratio(v, basis).dominant;
}

inline double cosine(std::span<const double> a, std::span<const double> b) {
  const double na = norm2(a), nb = norm2(b);
  if (na == 0.0 || nb == 0.0) return kUnmeasured;
  return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

/// Embeds per-parameter matrices at their flat offsets; zeros elsewhere.
inline FlatVector embed(const ParamSet& layout, const std::vector<std::size_t>& index,
                        const std::vector<DenseMatrix>& blocks) {
  FlatVector out(layout.total_size(), 0.0);
  for (std::size_t j = 0; j < index.size(); ++j) {
    std::copy(blocks[j].values().begin(), blocks[j].values().end(),
              out.begin() + static_cast<std::ptrdiff_t>(layout.offset_of(index[j])));
  }
  return out;
}

inline Batch hessian_batch(const Dataset& ds, std::size_t samples) {
  if (samples == 0 || samples >= ds.size()) return ds.as_batch();
  return take_first(ds, samples).as_batch();
}

/// Warm-started basis; nullopt (and a failure count) if Lanczos does not converge.
inline std::optional<EigenBasis> try_basis(const MlpModel& m, const Batch& data, const ProbeConfig& pc, std::size_t k,
                                           std::uint64_t seed, std::vector<FlatVector>& warm, std::size_t& failures) {
  LanczosOptions lo;
  lo.tol = pc.lanczos_tol;
  if (!warm.empty()) lo.start = warm_start(warm, seed);
  try {
    EigenBasis b = hessian_topk(m, data, k, pc.lanczos_iters, seed, lo);
    warm = b.eigenvectors;
    return b;
  } catch (const LanczosError&) {
    ++failures;
    return std::nullopt;
  }
}

inline std::uint64_t probe_seed(std::uint64_t seed, std::uint64_t step, std::uint64_t slot) {
  std::uint64_t s = seed ^ (step * 0x9e3779b97f4a7c15ULL) ^ (slot << 56);
  return splitmix64(s);
}

}  // namespace detail

/// Trains with the configured optimizer and emits one row per step; probes
/// are read-only with respect to the training state. A non-finite loss stops
/// the run with `aborted` set and the last good model/state in the result.
inline RunResult run_training(const TrainConfig& cfg, const Dataset& ds, const CheckpointSink& sink = nullptr) {
  Trainer tr(cfg, ds);
  const ProbeConfig& pc = cfg.probe;
  const Batch full = ds.as_batch();
  const bool need_hessian = pc.has(kProbeSubspace) || pc.has(kProbeGradAlpha);
  const Batch hess = need_hessian ? detail::hessian_batch(ds, pc.hessian_samples) : Batch{};
  const std::size_t k = pc.k ? pc.k : ds.num_classes;
  const bool sf = tr.optimizer().schedule_free();
  const bool track_dx = pc.has(kProbeNorms) || pc.has(kProbeCosine) || pc.has(kProbeSubspace);

  RunResult res;
  std::vector<FlatVector> warm_y, warm_x, warm_alpha;
  FlatVector prev_dx;
  MlpModel last_model = tr.model();
  OptimizerState last_state = tr.optimizer().state();

  for (std::uint64_t t = 1; t <= cfg.steps; ++t) {
    const bool measure = pc.measures(t);
    MetricRow row;
    row.step = t;

    std::optional<EigenBasis> by;
    if (measure && pc.has(kProbeSubspace)) {
      by = detail::try_basis(tr.model(), hess, pc, k, detail::probe_seed(cfg.seed, t, 1), warm_y, res.lanczos_failures);
    }
    if (measure && pc.has(kProbeGradAlpha) && sf) {
      BasisRequest req{k, pc.lanczos_iters, LanczosOptions{pc.lanczos_tol, 5, {}}, detail::probe_seed(cfg.seed, t, 2)};
      const auto probes = grad_probe_alpha(tr.model(), tr.optimizer(), full, hess, pc.alphas, req, pc.anchor, &warm_alpha);
      for (const auto& p : probes) {
        AlphaRow ar;
        ar.step = t;
        ar.alpha = p.alpha;
        ar.loss = p.loss;
        ar.grad_norm = norm2(p.gradient);
        if (p.measured) ar.rdom_grad = p.ratios.dominant;
        else ++res.lanczos_failures;
        res.alpha_rows.push_back(ar);
      }
    }

    const FlatVector x_before = track_dx ? tr.x_flat() : FlatVector{};
    MuonTrace trace;
    Trainer::Step s;
    try {
      s = tr.advance(&trace);
    } catch (const NumericalError& e) {
      res.aborted = true;
      res.abort_reason = e.what();
      break;
    }
    row.train_loss = s.loss;
    row.beta = sf ? s.info.beta : kUnmeasured;
    row.omega = sf ? s.info.omega : kUnmeasured;
    row.lr = s.info.lr;

    FlatVector dx;
    if (track_dx) {
      dx = tr.x_flat();
      axpy(-1.0, x_before, dx);
      if (pc.has(kProbeNorms)) row.update_norm = norm2(dx);
      if (pc.has(kProbeCosine) && !prev_dx.empty()) row.cos_prev = detail::cosine(prev_dx, dx);
    }

    if (by) {
      row.rdom_grad = detail::safe_ratio(s.grad.flatten(), *by);
      if (!trace.index.empty()) {
        row.rdom_momentum = detail::safe_ratio(detail::embed(tr.model().params(), trace.index, trace.momentum), *by);
        row.rdom_orth = detail::safe_ratio(detail::embed(tr.model().params(), trace.index, trace.orthogonal), *by);
      }
      if (!sf) {
        row.rdom_update = detail::safe_ratio(dx, *by);
      } else {
        MlpModel at_x = tr.model();
        at_x.params().assign_flat(x_before);
        const auto bx =
            detail::try_basis(at_x, hess, pc, k, detail::probe_seed(cfg.seed, t, 3), warm_x, res.lanczos_failures);
        if (bx) row.rdom_update = detail::safe_ratio(dx, *bx);
      }
    }
    if (track_dx) prev_dx = std::move(dx);

    const double loss_now = (cfg.eval_every && t % cfg.eval_every == 0) || t == cfg.steps ? tr.loss_at_x(full) : kUnmeasured;
    if (!std::isnan(loss_now) && !std::isfinite(loss_now)) {
      res.aborted = true;
      res.abort_reason = "non-finite eval loss at step " + std::to_string(t);
      break;
    }
    row.eval_loss = loss_now;
    res.rows.push_back(row);

    last_model = tr.model();
    last_state = tr.optimizer().state();
    if (sink && cfg.checkpoint_every && t % cfg.checkpoint_every == 0) sink(t, tr.model(), tr.optimizer().state());
  }
  res.model = std::move(last_model);
  res.state = std::move(last_state);
  return res;
}

/// Muon with the update u = vec(O(M_t)) replaced by alpha P_k u + gamma P_k^perp u
/// from `start_step` on; the basis is refreshed every probe.every steps at the
/// current iterate. Rows carry the minibatch loss every step and the full-data
/// loss every eval_every steps.
inline RunResult run_subspace_scaling(const TrainConfig& cfg, const Dataset& ds, double alpha, double gamma,
                                      std::size_t start_step, const CheckpointSink& sink = nullptr) {
  if (start_step == 0) throw std::invalid_argument("run_subspace_scaling: start_step must be >= 1");
  if (cfg.opt.kind != OptimizerKind::muon) throw ConfigError("subspace scaling runs use the muon optimizer");
  Trainer tr(cfg, ds);
  const ProbeConfig& pc = cfg.probe;
  const Batch full = ds.as_batch();
  const bool project = alpha != gamma;
  const Batch hess = project ? detail::hessian_batch(ds, pc.hessian_samples) : Batch{};
  const std::size_t k = pc.k ? pc.k : ds.num_classes;
  const std::size_t every = pc.every ? pc.every : 1;

  RunResult res;
  auto basis = std::make_shared<std::optional<EigenBasis>>();
  std::vector<FlatVector> warm;
  MlpModel last_model = tr.model();
  OptimizerState last_state = tr.optimizer().state();

  for (std::uint64_t t = 1; t <= cfg.steps; ++t) {
    if (t == start_step) {
      tr.optimizer().set_update_transform([basis, alpha, gamma, project](std::span<const double> u) {
        if (!project) {
          FlatVector out(u.begin(), u.end());
          if (gamma != 1.0) scale_in_place(out, gamma);
          return out;
        }
        return scale_update(u, **basis, alpha, gamma);
      });
    }
    if (project && t >= start_step && ((t - start_step) % every == 0 || !*basis)) {
      auto fresh = detail::try_basis(tr.model(), hess, pc, k, detail::probe_seed(cfg.seed, t, 4), warm,
                                     res.lanczos_failures);
      if (fresh) *basis = std::move(fresh);
      if (!*basis) throw NumericalError("subspace scaling: no converged basis at step " + std::to_string(t));
    }
    MetricRow row;
    row.step = t;
    Trainer::Step s;
    try {
      s = tr.advance();
    } catch (const NumericalError& e) {
      res.aborted = true;
      res.abort_reason = e.what();
      break;
    }
    row.train_loss = s.loss;
    row.lr = s.info.lr;
    if ((cfg.eval_every && t % cfg.eval_every == 0) || t == cfg.steps) {
      row.eval_loss = tr.loss_at_x(full);
      if (!std::isfinite(row.eval_loss)) {
        res.aborted = true;
        res.abort_reason = "non-finite eval loss at step " + std::to_string(t);
        break;
      }
    }
    res.rows.push_back(row);
    last_model = tr.model();
    last_state = tr.optimizer().state();
    if (sink && cfg.checkpoint_every && t % cfg.checkpoint_every == 0) sink(t, tr.model(), tr.optimizer().state());
  }
  res.model = std::move(last_model);
  res.state = std::move(last_state);
  return res;
}

/// theta_bar_0 = theta_0, theta_bar_t = coeff theta_bar_{t-1} + (1 - coeff) theta_t.
inline std::vector<FlatVector> ewa_sequence(const std::vector<FlatVector>& thetas, double coeff) {
  if (!(coeff > 0.0 && coeff < 1.0)) throw std::invalid_argument("ewa: coeff must lie in (0, 1)");
  std::vector<FlatVector> out;
  out.reserve(thetas.size());
  for (std::size_t t = 0; t < thetas.size(); ++t) {
    if (t == 0) {
      out.push_back(thetas[0]);
      continue;
    }
    FlatVector bar = out.back();
    if (bar.size() != thetas[t].size()) throw ShapeError("ewa: parameter lengths differ along the stream");
    for (std::size_t i = 0; i < bar.size(); ++i) bar[i] = coeff * bar[i] + (1.0 - coeff) * thetas[t][i];
    out.push_back(std::move(bar));
  }
  return out;
}

/// Loss of each EWA iterate, evaluated with `like`'s architecture.
inline std::vector<double> ewa_trace(const std::vector<FlatVector>& thetas, double coeff, const MlpModel& like,
                                     const Batch& eval) {
  MlpModel m = like;
  std::vector<double> out;
  for (const auto& bar : ewa_sequence(thetas, coeff)) {
    m.params().assign_flat(bar);
    out.push_back(forward_loss(m, eval));
  }
  return out;
}

/// Continues a run from (model, state) for decay_steps steps while the lr
/// falls linearly from eta_start to 0; returns the full-data loss at x after
/// every step. eta_start = 0 is a flat trace.
inline std::vector<double> decay_probe(TrainConfig cfg, const Dataset& ds, MlpModel model, const OptimizerState& state,
                                       double eta_start, std::size_t decay_steps) {
  if (decay_steps == 0) throw std::invalid_argument("decay_probe: decay_steps must be >= 1");
  if (eta_start < 0.0) throw std::invalid_argument("decay_probe: eta_start must be >= 0");
  const Batch full = ds.as_batch();
  if (eta_start == 0.0) {
    Trainer tr(cfg, ds, std::move(model), state);
    return std::vector<double>(decay_steps, tr.loss_at_x(full));
  }
  cfg.opt.lr = eta_start;
  cfg.opt.lr_schedule = LrSchedule::linear_decay;
  cfg.opt.decay_start = state.t;
  cfg.opt.decay_end = state.t + decay_steps;
  Trainer tr(cfg, ds, std::move(model), state);
  std::vector<double> out;
  out.reserve(decay_steps);
  for (std::size_t i = 0; i < decay_steps; ++i) {
    tr.advance();
    out.push_back(tr.loss_at_x(full));
  }
  return out;
}

struct ScheduleViz {
  std::vector<double> beta;       // beta_1 .. beta_T
  std::vector<double> omega;      // omega_1 .. omega_T
  std::vector<double> alpha;      // alpha_1 .. alpha_T (weights of y_t in x_T)
  std::vector<double> histogram;  // alpha mass per bin of equal step width
};

/// omega_t for c_t = 1/t with the closed-form beta: for t > T0,
/// 1 / ((t-1)^(1-rho) (T0-1)^rho (1-beta_1) + 1).
inline double omega_closed(std::size_t t, std::size_t t0, double beta1, double rho) {
  if (t <= t0 || rho == 0.0) return omega_uniform(t, beta_closed(t, t0, beta1, rho));
  const double span_t = std::pow(static_cast<double>(t - 1), 1.0 - rho);
  const double span_0 = std::pow(static_cast<double>(t0 - 1), rho);
  return 1.0 / (span_t * span_0 * (1.0 - beta1) + 1.0);
}

inline ScheduleViz schedule_viz(double beta1, double rho, std::size_t t0, std::size_t T, std::size_t bins = 50) {
  if (T < t0) throw std::invalid_argument("schedule_viz: need T >= T0");
  if (t0 == 0) throw std::invalid_argument("schedule_viz: need T0 >= 1");
  if (bins == 0) throw std::invalid_argument("schedule_viz: need at least one bin");
  ScheduleViz v;
  for (std::size_t t = 1; t <= T; ++t) {
    v.beta.push_back(beta_closed(t, t0, beta1, rho));
    v.omega.push_back(t == 1 ? 1.0 : omega_closed(t, t0, beta1, rho));
  }
  v.alpha.resize(T);
  double tail = 1.0;
  for (std::size_t t = T; t-- > 0;) {
    v.alpha[t] = v.omega[t] * tail;
    tail *= 1.0 - v.omega[t];
  }
  v.histogram.assign(bins, 0.0);
  for (std::size_t t = 0; t < T; ++t) v.histogram[t * bins / T] += v.alpha[t];
  return v;
}

}  // namespace amuse
