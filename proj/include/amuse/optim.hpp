// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "amuse/error.hpp"
#include "amuse/linalg.hpp"
#include "amuse/params.hpp"

namespace amuse {

enum class OptimizerKind { sgd, adamw, muon, sf_sgd, sf_adamw, sf_muon, amuse };
enum class AuxOptimizer { sgd, adamw };
enum class LrSchedule { constant, cosine, linear_decay };
/// Averaging coefficient for the x sequence:
///   lr_weighted  c_{t+1} = eta_t^2 / sum_{i<=t} eta_i^2
///   uniform      c_{t+1} = 1 / (t + 1)
///   frozen       c = 0 (x never moves; only for degeneracy checks)
enum class Averaging { lr_weighted, uniform, frozen };
/// exact: beta from the realised c_t history. closed: the 1/t special case in t.
enum class BetaForm { exact, closed };

inline const char* to_string(OptimizerKind k) {
  switch (k) {
    case OptimizerKind::sgd: return "sgd";
    case OptimizerKind::adamw: return "adamw";
    case OptimizerKind::muon: return "muon";
    case OptimizerKind::sf_sgd: return "sf_sgd";
    case OptimizerKind::sf_adamw: return "sf_adamw";
    case OptimizerKind::sf_muon: return "sf_muon";
    case OptimizerKind::amuse: return "amuse";
  }
  return "?";
}
inline const char* to_string(AuxOptimizer a) { return a == AuxOptimizer::sgd ? "sgd" : "adamw"; }
inline const char* to_string(LrSchedule s) {
  switch (s) {
    case LrSchedule::constant: return "constant";
    case LrSchedule::cosine: return "cosine";
    case LrSchedule::linear_decay: return "linear_decay";
  }
  return "?";
}
inline const char* to_string(Averaging a) {
  switch (a) {
    case Averaging::lr_weighted: return "lr_weighted";
    case Averaging::uniform: return "uniform";
    case Averaging::frozen: return "frozen";
  }
  return "?";
}
inline const char* to_string(BetaForm f) { return f == BetaForm::exact ? "exact" : "closed"; }

inline bool is_schedule_free(OptimizerKind k) {
  return k == OptimizerKind::sf_sgd || k == OptimizerKind::sf_adamw || k == OptimizerKind::sf_muon ||
         k == OptimizerKind::amuse;
}
inline bool uses_muon(OptimizerKind k) {
  return k == OptimizerKind::muon || k == OptimizerKind::sf_muon || k == OptimizerKind::amuse;
}

inline constexpr double kAdamEps = 1e-8;

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::amuse;
  double lr = 1e-3;
  double aux_lr = 0.0;  // learning rate of the auxiliary group; 0 means "same as lr"
  double weight_decay = 0.0;
  std::size_t warmup_steps = 1;  // T0, shared by the lr warmup and the beta pivot
  double muon_momentum = 0.95;
  bool nesterov = false;
  double adamw_beta1 = 0.9;
  double adamw_beta2 = 0.999;
  double sgd_momentum = 0.0;  // heavy-ball, non-SF SGD only
  AuxOptimizer aux = AuxOptimizer::sgd;
  double beta1 = 0.9;  // fixed beta for sf_* kinds, beta_1 for amuse
  double rho = 0.0;    // amuse only; sf_* kinds behave as rho = 0
  double grad_clip = 0.0;  // global-norm bound on raw gradients; 0 disables
  LrSchedule lr_schedule = LrSchedule::constant;
  std::size_t total_steps = 0;  // cosine horizon
  std::size_t decay_start = 0;  // linear_decay: eta at decay_start, 0 at decay_end
  std::size_t decay_end = 0;
  Averaging averaging = Averaging::lr_weighted;
  BetaForm beta_form = BetaForm::exact;
  NsCoefficients ns_coeffs = NsCoefficients::muon_fast;
  int ns_iters = 5;
  bool ns_rms_match = false;

  double effective_rho() const { return kind == OptimizerKind::amuse ? rho : 0.0; }
  double effective_aux_lr() const { return aux_lr > 0.0 ? aux_lr : lr; }

  void validate() const {
    auto range = [](const char* name, double v, bool ok, const char* valid) {
      if (!ok) throw ConfigError(std::string(name) + " = " + std::to_string(v) + " out of range; valid: " + valid);
    };
    range("lr", lr, lr > 0.0 && std::isfinite(lr), "(0, inf)");
    range("aux_lr", aux_lr, aux_lr >= 0.0 && std::isfinite(aux_lr), "[0, inf)");
    range("weight_decay", weight_decay, weight_decay >= 0.0, "[0, inf)");
    range("warmup_steps", static_cast<double>(warmup_steps), warmup_steps >= 1, "[1, inf)");
    range("muon_momentum", muon_momentum, muon_momentum >= 0.0 && muon_momentum < 1.0, "[0, 1)");
    range("adamw_beta1", adamw_beta1, adamw_beta1 >= 0.0 && adamw_beta1 < 1.0, "[0, 1)");
    range("adamw_beta2", adamw_beta2, adamw_beta2 >= 0.0 && adamw_beta2 < 1.0, "[0, 1)");
    range("sgd_momentum", sgd_momentum, sgd_momentum >= 0.0 && sgd_momentum < 1.0, "[0, 1)");
    range("beta1", beta1, beta1 >= 0.0 && beta1 < 1.0, "[0, 1)");
    range("rho", rho, rho >= 0.0 && rho <= 1.0, "[0, 1]");
    range("grad_clip", grad_clip, grad_clip >= 0.0, "[0, inf)");
    range("ns_iters", ns_iters, ns_iters >= 1, "[1, inf)");
    if (lr_schedule == LrSchedule::cosine && total_steps <= warmup_steps) {
      throw ConfigError("cosine schedule needs total_steps > warmup_steps");
    }
    if (lr_schedule == LrSchedule::linear_decay && decay_end <= decay_start) {
      throw ConfigError("linear_decay needs decay_end > decay_start");
    }
    if (averaging == Averaging::frozen && effective_rho() > 0.0) {
      throw ConfigError("frozen averaging requires rho = 0 (beta schedule is undefined without c_t)");
    }
  }
};

// ---------------------------------------------------------------------------
// Scalar schedules

/// eta_t: linear warmup over T0 steps, then the configured schedule.
inline double lr_at(const OptimizerConfig& cfg, std::size_t t) {
  if (t == 0) throw std::invalid_argument("lr_at: steps are 1-based");
  const double td = static_cast<double>(t);
  const double t0 = static_cast<double>(cfg.warmup_steps);
  const double warm = std::min(1.0, td / t0);
  switch (cfg.lr_schedule) {
    case LrSchedule::constant: return cfg.lr * warm;
    case LrSchedule::cosine: {
      if (t <= cfg.warmup_steps) return cfg.lr * warm;
      const double frac = std::min(1.0, (td - t0) / (static_cast<double>(cfg.total_steps) - t0));
      return cfg.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
    }
    case LrSchedule::linear_decay: {
      if (t <= cfg.decay_start) return cfg.lr * warm;
      if (t >= cfg.decay_end) return 0.0;
      const double s = static_cast<double>(cfg.decay_start), e = static_cast<double>(cfg.decay_end);
      return cfg.lr * warm * (e - td) / (e - s);
    }
  }
  return cfg.lr * warm;
}

/// c_{t+1} = eta_t^2 / sum_{i<=t} eta_i^2.
inline double averaging_coeff(double lr_t, double sum_lr2) { return sum_lr2 > 0.0 ? (lr_t * lr_t) / sum_lr2 : 0.0; }

/// beta_t from the realised coefficients c_t and c_{T0}.
inline double beta_exact(double c_t, double c_t0, double beta1, double rho) {
  if (rho == 0.0) return beta1;
  const double ratio = (c_t * (1.0 - c_t0)) / (c_t0 * (1.0 - c_t));
  return 1.0 - std::pow(ratio, rho) * (1.0 - beta1);
}

/// beta_t = 1 - ((T0 - 1)/(t - 1))^rho (1 - beta_1) for t > T0, beta_1 otherwise.
inline double beta_closed(std::size_t t, std::size_t t0, double beta1, double rho) {
  if (rho == 0.0 || t <= t0) return beta1;
  const double ratio = static_cast<double>(t0 - 1) / static_cast<double>(t - 1);
  return 1.0 - std::pow(ratio, rho) * (1.0 - beta1);
}

/// Per-step weight of y_t in x_t = (1 - w) x_{t-1} + w y_t, for any c_t.
inline double omega_from(double c_t, double beta_t) { return c_t / (1.0 - beta_t * (1.0 - c_t)); }

/// The c_t = 1/t case: 1 / ((t - 1)(1 - beta_t) + 1).
inline double omega_uniform(std::size_t t, double beta_t) {
  return 1.0 / (static_cast<double>(t - 1) * (1.0 - beta_t) + 1.0);
}

// ---------------------------------------------------------------------------
// State

/// Optimizer state. For schedule-free kinds the model holds y; z and x are
/// stored explicitly (x is not re-derived from y and z in the reference path).
struct OptimizerState {
  std::uint64_t t = 0;        // completed steps
  double sum_lr2 = 0.0;       // sum_{i<=t} eta_i^2
  double c_current = 1.0;     // coefficient that formed the current x (c_1 = 1)
  double c_t0 = 1.0;          // c_{T0}, cached once t reaches T0
  double beta = 0.0;          // beta of the y currently held in the model
  std::vector<DenseMatrix> z, x;   // SF sequences
  std::vector<DenseMatrix> m;      // Muon momentum / AdamW first moment / SGD heavy-ball buffer
  std::vector<DenseMatrix> v;      // AdamW second moment

  friend bool operator==(const OptimizerState&, const OptimizerState&) = default;
};

/// What the last step did; for probes and metric rows.
struct StepInfo {
  std::uint64_t t = 0;   // the step just taken
  double lr = 0.0;       // eta_t
  double beta = 0.0;     // beta_t at which the gradient was evaluated
  double c_next = 0.0;   // c_{t+1}
  double omega = 0.0;    // effective weight of y_t in x_t
};

/// Per-Muon-parameter momentum and its orthogonalization from the last step.
struct MuonTrace {
  std::vector<std::size_t> index;       // parameter indices
  std::vector<DenseMatrix> momentum;    // M_t
  std::vector<DenseMatrix> orthogonal;  // O(M_t) (or of the Nesterov input)
};

/// Replaces the flattened Muon update u (O(M_t) in Muon blocks, zeros
/// elsewhere) with a full-length vector applied as theta -= eta * u~.
using UpdateTransform = std::function<FlatVector(std::span<const double>)>;

namespace detail {

inline void check_gradients(const ParamSet& params, const ParamSet& grads) {
  if (!params.same_layout(grads)) throw ShapeError("optimizer: gradient layout does not match parameters");
  for (const auto& g : grads) {
    if (!g.value.all_finite()) throw NumericalError("optimizer: non-finite gradient in " + g.name);
  }
}

/// w <- (1 - eta*lambda) w - eta d
inline void descend(DenseMatrix& w, const DenseMatrix& d, double eta, double lambda) {
  const double keep = 1.0 - eta * lambda;
  double* pw = w.data();
  const double* pd = d.data();
  if (lambda == 0.0) {
    for (std::size_t i = 0; i < w.size(); ++i) pw[i] -= eta * pd[i];
  } else {
    for (std::size_t i = 0; i < w.size(); ++i) pw[i] = keep * pw[i] - eta * pd[i];
  }
}

/// Second-moment normalized direction G / (sqrt(V / (1 - b2^t)) + eps); updates V.
inline DenseMatrix adam_rms_direction(DenseMatrix& v, const DenseMatrix& g, double b2, std::uint64_t t) {
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(t));
  DenseMatrix u(g.rows(), g.cols());
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double gi = g.data()[i];
    v.data()[i] = b2 * v.data()[i] + (1.0 - b2) * gi * gi;
    u.data()[i] = gi / (std::sqrt(v.data()[i] / bc2) + kAdamEps);
  }
  return u;
}

}  // namespace detail

class Optimizer {
 public:
  Optimizer(OptimizerConfig cfg, const ParamSet& params) : cfg_(std::move(cfg)) {
    cfg_.validate();
    reset(params);
  }

  const OptimizerConfig& config() const noexcept { return cfg_; }
  const OptimizerState& state() const noexcept { return st_; }
  bool schedule_free() const noexcept { return is_schedule_free(cfg_.kind); }

  /// Restores a checkpointed state; layouts must match `params`.
  void load_state(OptimizerState s, const ParamSet& params) {
    auto check = [&](const std::vector<DenseMatrix>& buf, const char* what) {
      if (buf.empty()) return;
      if (buf.size() != params.count()) throw ShapeError(std::string("optimizer state: ") + what + " count mismatch");
      for (std::size_t i = 0; i < buf.size(); ++i)
        if (!buf[i].same_shape(params[i].value))
          throw ShapeError(std::string("optimizer state: ") + what + " shape mismatch at " + params[i].name);
    };
    check(s.z, "z");
    check(s.x, "x");
    check(s.m, "m");
    check(s.v, "v");
    st_ = std::move(s);
  }

  void set_update_transform(UpdateTransform fn) { transform_ = std::move(fn); }
  void clear_update_transform() { transform_ = nullptr; }

  /// Stored x for schedule-free kinds; the parameters themselves otherwise.
  std::vector<DenseMatrix> averaged(const ParamSet& params) const {
    if (schedule_free()) return st_.x;
    std::vector<DenseMatrix> out;
    for (const auto& p : params) out.push_back(p.value);
    return out;
  }

  /// One step. `grads` is the gradient at the point currently held in
  /// `params` (y for schedule-free kinds). On return `params` holds the next
  /// evaluation point.
  StepInfo step(ParamSet& params, ParamSet grads, MuonTrace* trace = nullptr) {
    detail::check_gradients(params, grads);
    clip(grads);
    const std::uint64_t t = st_.t + 1;
    const double eta = lr_at(cfg_, t);
    const double eta_aux = eta * (cfg_.effective_aux_lr() / cfg_.lr);
    if (trace) *trace = MuonTrace{};

    StepInfo info;
    info.t = t;
    info.lr = eta;
    info.beta = schedule_free() ? st_.beta : 0.0;

    if (schedule_free()) {
      sf_step(params, grads, t, eta, eta_aux, trace);
    } else {
      plain_step(params, grads, t, eta, eta_aux, trace);
    }

    st_.sum_lr2 += eta * eta;
    double c_next = 0.0;
    switch (cfg_.averaging) {
      case Averaging::lr_weighted: c_next = averaging_coeff(eta, st_.sum_lr2); break;
      case Averaging::uniform: c_next = 1.0 / static_cast<double>(t + 1); break;
      case Averaging::frozen: c_next = 0.0; break;
    }
    info.c_next = c_next;
    info.omega = omega_from(st_.c_current, info.beta);
    st_.t = t;

    if (schedule_free()) {
      for (std::size_t i = 0; i < params.count(); ++i) {
        if (c_next == 0.0) continue;
        double* px = st_.x[i].data();
        const double* pz = st_.z[i].data();
        for (std::size_t j = 0; j < st_.x[i].size(); ++j) px[j] = (1.0 - c_next) * px[j] + c_next * pz[j];
      }
      st_.c_current = c_next;
      if (t + 1 == cfg_.warmup_steps) st_.c_t0 = c_next;
      st_.beta = next_beta(t + 1);
      write_y(params);
    }
    return info;
  }

  /// beta for step `t` given the current c history.
  double next_beta(std::uint64_t t) const {
    const double rho = cfg_.effective_rho();
    if (rho == 0.0 || t <= cfg_.warmup_steps) return cfg_.beta1;
    if (cfg_.beta_form == BetaForm::closed) return beta_closed(t, cfg_.warmup_steps, cfg_.beta1, rho);
    return beta_exact(st_.c_current, st_.c_t0, cfg_.beta1, rho);
  }

 private:
  void reset(const ParamSet& params) {
    st_ = OptimizerState{};
    st_.beta = cfg_.beta1;
    const std::size_t n = params.count();
    auto zeros = [&]() {
      std::vector<DenseMatrix> out;
      out.reserve(n);
      for (const auto& p : params) out.emplace_back(p.value.rows(), p.value.cols());
      return out;
    };
    if (schedule_free()) {
      for (const auto& p : params) st_.z.push_back(p.value);
      st_.x = st_.z;
    }
    const bool any_adam = cfg_.kind == OptimizerKind::adamw || cfg_.kind == OptimizerKind::sf_adamw ||
                          (uses_muon(cfg_.kind) && cfg_.aux == AuxOptimizer::adamw);
    st_.m = zeros();
    if (any_adam) st_.v = zeros();
    if (cfg_.kind == OptimizerKind::sf_sgd || cfg_.kind == OptimizerKind::sf_adamw) st_.m.clear();
  }

  void clip(ParamSet& grads) const {
    if (cfg_.grad_clip <= 0.0) return;
    const double n = global_norm(grads);
    if (n <= cfg_.grad_clip) return;
    const double s = cfg_.grad_clip / n;
    for (auto& g : grads) g.value *= s;
  }

  /// Muon direction for parameter i; accumulates momentum.
  DenseMatrix muon_direction(std::size_t i, const DenseMatrix& g, MuonTrace* trace) {
    DenseMatrix& m = st_.m[i];
    const double mu = cfg_.muon_momentum;
    for (std::size_t j = 0; j < m.size(); ++j) m.data()[j] = mu * m.data()[j] + g.data()[j];
    DenseMatrix o;
    if (cfg_.nesterov) {
      DenseMatrix in(m.rows(), m.cols());
      for (std::size_t j = 0; j < m.size(); ++j) in.data()[j] = mu * m.data()[j] + g.data()[j];
      o = newton_schulz(in, cfg_.ns_iters, cfg_.ns_coeffs, cfg_.ns_rms_match);
    } else {
      o = newton_schulz(m, cfg_.ns_iters, cfg_.ns_coeffs, cfg_.ns_rms_match);
    }
    if (trace) {
      trace->index.push_back(i);
      trace->momentum.push_back(m);
      trace->orthogonal.push_back(o);
    }
    return o;
  }

  void plain_step(ParamSet& params, const ParamSet& grads, std::uint64_t t, double eta, double eta_aux,
                  MuonTrace* trace) {
    const double lambda = cfg_.weight_decay;
    std::vector<DenseMatrix> muon_dirs(params.count());
    for (std::size_t i = 0; i < params.count(); ++i) {
      DenseMatrix& w = params[i].value;
      const DenseMatrix& g = grads[i].value;
      const bool muon_param = cfg_.kind == OptimizerKind::muon && params[i].group == ParamGroup::muon;
      if (muon_param) {
        muon_dirs[i] = muon_direction(i, g, trace);
        if (!transform_) detail::descend(w, muon_dirs[i], eta, lambda);
        continue;
      }
      const bool adam = cfg_.kind == OptimizerKind::adamw ||
                        (cfg_.kind == OptimizerKind::muon && cfg_.aux == AuxOptimizer::adamw);
      const double lr_i = cfg_.kind == OptimizerKind::muon ? eta_aux : eta;
      if (adam) {
        DenseMatrix& m = st_.m[i];
        DenseMatrix& v = st_.v[i];
        const double b1 = cfg_.adamw_beta1, b2 = cfg_.adamw_beta2;
        const double bc1 = 1.0 - std::pow(b1, static_cast<double>(t));
        const double bc2 = 1.0 - std::pow(b2, static_cast<double>(t));
        DenseMatrix u(g.rows(), g.cols());
        for (std::size_t j = 0; j < g.size(); ++j) {
          const double gj = g.data()[j];
          m.data()[j] = b1 * m.data()[j] + (1.0 - b1) * gj;
          v.data()[j] = b2 * v.data()[j] + (1.0 - b2) * gj * gj;
          u.data()[j] = (m.data()[j] / bc1) / (std::sqrt(v.data()[j] / bc2) + kAdamEps);
        }
        detail::descend(w, u, lr_i, lambda);
      } else if (cfg_.sgd_momentum > 0.0) {
        DenseMatrix& buf = st_.m[i];
        for (std::size_t j = 0; j < g.size(); ++j) buf.data()[j] = cfg_.sgd_momentum * buf.data()[j] + g.data()[j];
        detail::descend(w, buf, lr_i, lambda);
      } else {
        detail::descend(w, g, lr_i, lambda);
      }
    }
    if (transform_ && cfg_.kind == OptimizerKind::muon) apply_transform(params, muon_dirs, eta, lambda);
  }

  void apply_transform(ParamSet& params, const std::vector<DenseMatrix>& muon_dirs, double eta, double lambda) {
    FlatVector u(params.total_size(), 0.0);
    for (std::size_t i = 0; i < params.count(); ++i) {
      if (muon_dirs[i].empty()) continue;
      std::copy(muon_dirs[i].values().begin(), muon_dirs[i].values().end(),
                u.begin() + static_cast<std::ptrdiff_t>(params.offset_of(i)));
    }
    const FlatVector ut = transform_(u);
    if (ut.size() != u.size()) throw ShapeError("update transform returned wrong length");
    std::size_t off = 0;
    for (std::size_t i = 0; i < params.count(); ++i) {
      DenseMatrix& w = params[i].value;
      DenseMatrix d(w.rows(), w.cols());
      std::copy_n(ut.begin() + static_cast<std::ptrdiff_t>(off), w.size(), d.data());
      off += w.size();
      detail::descend(w, d, eta, muon_dirs[i].empty() ? 0.0 : lambda);
    }
  }

  void sf_step(ParamSet& params, const ParamSet& grads, std::uint64_t t, double eta, double eta_aux,
               MuonTrace* trace) {
    const double lambda = cfg_.weight_decay;
    for (std::size_t i = 0; i < params.count(); ++i) {
      DenseMatrix& z = st_.z[i];
      const DenseMatrix& g = grads[i].value;
      const bool muon_param = uses_muon(cfg_.kind) && params[i].group == ParamGroup::muon;
      if (muon_param) {
        detail::descend(z, muon_direction(i, g, trace), eta, lambda);
        continue;
      }
      const bool adam = cfg_.kind == OptimizerKind::sf_adamw ||
                        (uses_muon(cfg_.kind) && cfg_.aux == AuxOptimizer::adamw);
      const double lr_i = uses_muon(cfg_.kind) ? eta_aux : eta;
      if (adam) {
        detail::descend(z, detail::adam_rms_direction(st_.v[i], g, cfg_.adamw_beta2, t), lr_i, lambda);
      } else {
        detail::descend(z, g, lr_i, lambda);
      }
    }
  }

  /// y = (1 - beta) z + beta x
  void write_y(ParamSet& params) const {
    const double b = st_.beta;
    for (std::size_t i = 0; i < params.count(); ++i) {
      DenseMatrix& y = params[i].value;
      if (b == 0.0) {
        y = st_.z[i];
        continue;
      }
      const double* pz = st_.z[i].data();
      const double* px = st_.x[i].data();
      double* py = y.data();
      for (std::size_t j = 0; j < y.size(); ++j) py[j] = (1.0 - b) * pz[j] + b * px[j];
    }
  }

  OptimizerConfig cfg_;
  OptimizerState st_;
  UpdateTransform transform_;
};

// ---------------------------------------------------------------------------
// Eval swap

enum class SwapMode { derive, stored };

/// While alive, the parameters hold x. `derive` reconstructs
/// x = (y - (1 - beta) z) / beta from the model and z (stored x when beta = 0);
/// `stored` copies the explicitly maintained x. The destructor restores the
/// saved y bitwise.
class EvalSwap {
 public:
  EvalSwap(ParamSet& params, const Optimizer& opt, SwapMode mode = SwapMode::derive) : params_(params) {
    if (!opt.schedule_free()) return;
    const auto& st = opt.state();
    if (st.beta >= 1.0) return;  // y == x already
    active_ = true;
    for (const auto& p : params_) saved_.push_back(p.value);
    const double b = st.beta;
    for (std::size_t i = 0; i < params_.count(); ++i) {
      DenseMatrix& w = params_[i].value;
      if (mode == SwapMode::stored || b == 0.0) {
        w = st.x[i];
        continue;
      }
      const double* pz = st.z[i].data();
      double* pw = w.data();
      for (std::size_t j = 0; j < w.size(); ++j) pw[j] = (pw[j] - (1.0 - b) * pz[j]) / b;
    }
  }
  EvalSwap(const EvalSwap&) = delete;
  EvalSwap& operator=(const EvalSwap&) = delete;
  ~EvalSwap() {
    if (!active_) return;
    for (std::size_t i = 0; i < params_.count(); ++i) params_[i].value = std::move(saved_[i]);
  }

 private:
  ParamSet& params_;
  std::vector<DenseMatrix> saved_;
  bool active_ = false;
};

// ---------------------------------------------------------------------------
// Averaging oracles

/// x_t = sum_i w_i z_i with w_i = c_i prod_{s=i+1}^{t} (1 - c_s), c_1 = 1.
/// c[i] is the coefficient applied when z[i] entered (c[0] is ignored).
inline FlatVector closed_form_x(const std::vector<FlatVector>& z_history, std::span<const double> c) {
  if (z_history.empty()) throw std::invalid_argument("closed_form_x: empty history");
  if (c.size() != z_history.size()) throw std::invalid_argument("closed_form_x: history lengths differ");
  const std::size_t t = z_history.size();
  FlatVector x(z_history.front().size(), 0.0);
  for (std::size_t i = 0; i < t; ++i) {
    double w = i == 0 ? 1.0 : c[i];
    for (std::size_t s = i + 1; s < t; ++s) w *= 1.0 - c[s];
    axpy(w, z_history[i], x);
  }
  return x;
}

/// Delta x_t = -(eta / (t (t + 1))) sum_{j<=t} j O_j, for constant eta and
/// c_{t+1} = 1/(t+1). orth_history[j-1] is O_j.
inline FlatVector delta_x_weighted(const std::vector<FlatVector>& orth_history, double eta, std::size_t t) {
  if (t == 0 || t > orth_history.size()) throw std::invalid_argument("delta_x_weighted: need 1 <= t <= history");
  FlatVector d(orth_history.front().size(), 0.0);
  for (std::size_t j = 1; j <= t; ++j) axpy(static_cast<double>(j), orth_history[j - 1], d);
  scale_in_place(d, -eta / (static_cast<double>(t) * static_cast<double>(t + 1)));
  return d;
}

struct EffectiveWeights {
  std::vector<double> omega;  // omega_1 .. omega_T
  std::vector<double> alpha;  // alpha_1 .. alpha_T
};

/// omega_t = c_t / (1 - beta_t (1 - c_t)); alpha_t = omega_t prod_{s>t} (1 - omega_s).
/// beta[t-1] and c[t-1] hold beta_t and c_t; c_1 is taken as 1.
inline EffectiveWeights effective_weights(std::span<const double> beta, std::span<const double> c, std::size_t T) {
  if (T == 0 || beta.size() < T || c.size() < T) throw std::invalid_argument("effective_weights: histories too short");
  EffectiveWeights w;
  w.omega.resize(T);
  for (std::size_t t = 0; t < T; ++t) w.omega[t] = t == 0 ? 1.0 : omega_from(c[t], beta[t]);
  w.alpha.resize(T);
  double tail = 1.0;
  for (std::size_t t = T; t-- > 0;) {
    w.alpha[t] = w.omega[t] * tail;
    tail *= 1.0 - w.omega[t];
  }
  return w;
}

/// beta_t and c_t for t = 1..T under constant lr with c_t = 1/t.
struct ScheduleSeries {
  std::vector<double> beta;
  std::vector<double> c;
};

inline ScheduleSeries uniform_schedule(double beta1, double rho, std::size_t t0, std::size_t T) {
  ScheduleSeries s;
  for (std::size_t t = 1; t <= T; ++t) {
    s.c.push_back(1.0 / static_cast<double>(t));
    s.beta.push_back(beta_closed(t, t0, beta1, rho));
  }
  return s;
}

}  // namespace amuse
