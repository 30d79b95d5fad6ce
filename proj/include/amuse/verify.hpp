// SPDX-License-Identifier: Apache-2.0
#pragma once

// Oracle and invariant checks shared by `amuse verify` and the acceptance
// test. Each check is self-contained, seeded, and reports its own runtime.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "amuse/data.hpp"
#include "amuse/experiments.hpp"
#include "amuse/linalg.hpp"
#include "amuse/mlp.hpp"
#include "amuse/optim.hpp"
#include "amuse/quadratic.hpp"
#include "amuse/rng.hpp"
#include "amuse/spectral.hpp"

namespace amuse {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
  double budget_seconds = 0.0;  // 0 = unbounded
};

namespace verify_detail {

template <typename Fn>
CheckResult timed(std::string name, double budget, Fn&& body) {
  CheckResult r;
  r.name = std::move(name);
  r.budget_seconds = budget;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    r.passed = body(r.detail);
  } catch (const std::exception& e) {
    r.passed = false;
    r.detail = std::string("exception: ") + e.what();
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (budget > 0.0 && r.seconds >= budget) {
    r.passed = false;
    r.detail += " (over the " + std::to_string(budget) + " s budget)";
  }
  return r;
}

inline std::string sci(double v) {
  std::ostringstream os;
  os.precision(3);
  os << std::scientific << v;
  return os.str();
}

inline std::string exact(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline DenseMatrix random_matrix(std::size_t r, std::size_t c, Rng& rng) {
  DenseMatrix m(r, c);
  for (double& v : m.values()) v = rng.normal();
  return m;
}

/// Orthonormal columns from modified Gram-Schmidt on a Gaussian matrix.
inline std::vector<FlatVector> random_orthonormal(std::size_t dim, std::size_t k, Rng& rng) {
  std::vector<FlatVector> out;
  while (out.size() < k) {
    FlatVector v(dim);
    for (double& x : v) x = rng.normal();
    for (int pass = 0; pass < 2; ++pass)
      for (const auto& u : out) axpy(-dot(u, v), u, v);
    const double n = norm2(v);
    if (n < 1e-8) continue;
    scale_in_place(v, 1.0 / n);
    out.push_back(std::move(v));
  }
  return out;
}

inline Eigen::MatrixXd to_eigen(const DenseMatrix& m) {
  Eigen::MatrixXd e(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) e(i, j) = m(i, j);
  return e;
}

/// Dense Hessian from unit-vector HVPs, symmetrized.
inline Eigen::MatrixXd dense_operator(const HvpHandle& op, std::size_t dim) {
  Eigen::MatrixXd h(dim, dim);
  FlatVector e(dim, 0.0);
  for (std::size_t j = 0; j < dim; ++j) {
    e[j] = 1.0;
    const FlatVector col = op(e);
    for (std::size_t i = 0; i < dim; ++i) h(i, j) = col[i];
    e[j] = 0.0;
  }
  return 0.5 * (h + h.transpose());
}

inline double max_abs(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline Batch random_batch(std::size_t n, std::size_t d, std::size_t k, Rng& rng) {
  Batch b;
  b.inputs = random_matrix(n, d, rng);
  for (std::size_t i = 0; i < n; ++i) b.labels.push_back(static_cast<std::uint32_t>(i % k));
  return b;
}

}  // namespace verify_detail

/// Cubic Newton-Schulz (20 iterations) against the eigen-based polar factor on
/// matrices M = O P whose polar factor O is known by construction.
inline CheckResult check_orthogonalization(std::uint64_t seed = 1) {
  using namespace verify_detail;
  return timed("orthogonalization", 10.0, [seed](std::string& detail) {
    Rng rng(seed);
    double worst_ns = 0.0, worst_orth = 0.0, worst_truth = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
      const auto r = static_cast<std::size_t>(2 + rng.uniform(0.0, 63.0));
      const auto c = static_cast<std::size_t>(2 + rng.uniform(0.0, 63.0));
      const bool tall = r >= c;
      const std::size_t small = tall ? c : r;
      // O: orthonormal columns (tall) or rows (wide); P: SPD with spectrum in [0.5, 1]
      const auto cols = random_orthonormal(tall ? r : c, small, rng);
      DenseMatrix o(r, c);
      for (std::size_t j = 0; j < small; ++j)
        for (std::size_t i = 0; i < cols[j].size(); ++i) (tall ? o(i, j) : o(j, i)) = cols[j][i];
      const auto basis = random_orthonormal(small, small, rng);
      DenseMatrix p(small, small);
      for (std::size_t j = 0; j < small; ++j) {
        const double s = rng.uniform(0.5, 1.0);
        for (std::size_t a = 0; a < small; ++a)
          for (std::size_t b = 0; b < small; ++b) p(a, b) += s * basis[j][a] * basis[j][b];
      }
      const DenseMatrix m = tall ? matmul(o, p) : matmul(p, o);

      const DenseMatrix oracle = polar_factor_oracle(m);
      const DenseMatrix ns = newton_schulz(m, 20, NsCoefficients::cubic_exact);
      const DenseMatrix gram = tall ? matmul_tn(oracle, oracle) : matmul_nt(oracle, oracle);
      worst_ns = std::max(worst_ns, frobenius_distance(ns, oracle));
      worst_orth = std::max(worst_orth, frobenius_distance(gram, DenseMatrix::identity(small)));
      worst_truth = std::max(worst_truth, frobenius_distance(oracle, o));
    }
    detail = "max ||NS - polar||_F = " + sci(worst_ns) + ", max ||O^T O - I||_F = " + sci(worst_orth) +
             ", max ||polar - O_true||_F = " + sci(worst_truth);
    return worst_ns < 1e-5 && worst_orth < 1e-9 && worst_truth < 1e-9;
  });
}

/// Backward pass and HVP against central differences; HVP symmetry.
inline CheckResult check_gradients_and_hvp(std::uint64_t seed = 2) {
  using namespace verify_detail;
  return timed("gradient_hvp", 30.0, [seed](std::string& detail) {
    Rng rng(seed);
    double worst_g = 0.0, worst_h = 0.0, worst_sym = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
      MlpSpec spec;
      spec.input_dim = 2 + static_cast<std::size_t>(rng.uniform(0.0, 6.0));
      const auto depth = 1 + static_cast<std::size_t>(rng.uniform(0.0, 2.0));
      for (std::size_t l = 0; l < depth; ++l) spec.hidden.push_back(2 + static_cast<std::size_t>(rng.uniform(0.0, 7.0)));
      spec.output_dim = 2 + static_cast<std::size_t>(rng.uniform(0.0, 3.0));
      spec.activation = Activation::tanh;
      const MlpModel model = MlpModel::init(spec, seed * 1000 + static_cast<std::uint64_t>(trial));
      const Batch batch = random_batch(3 + static_cast<std::size_t>(rng.uniform(0.0, 8.0)), spec.input_dim,
                                       spec.output_dim, rng);

      const FlatVector g = backward(model, batch).flatten();
      const FlatVector gfd = finite_diff_grad(model, batch, 1e-5).flatten();
      FlatVector diff = g;
      axpy(-1.0, gfd, diff);
      worst_g = std::max(worst_g, norm2(diff) / std::max({norm2(g), norm2(gfd), 1e-12}));

      FlatVector u(g.size()), v(g.size());
      for (double& x : u) x = rng.normal();
      for (double& x : v) x = rng.normal();
      const FlatVector hv = hvp(model, batch, v);
      const FlatVector hu = hvp(model, batch, u);
      const FlatVector hfd = finite_diff_hvp(model, batch, v, 1e-4);
      FlatVector dh = hv;
      axpy(-1.0, hfd, dh);
      worst_h = std::max(worst_h, norm2(dh) / std::max({norm2(hv), norm2(hfd), 1e-12}));
      const double a = dot(u, hv), b = dot(v, hu);
      worst_sym = std::max(worst_sym, std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-12}));
    }
    detail = "grad rel err " + sci(worst_g) + ", hvp rel err " + sci(worst_h) + ", symmetry " + sci(worst_sym);
    return worst_g < 1e-5 && worst_h < 1e-4 && worst_sym < 1e-8;
  });
}

/// GD contraction and the matrix-normalized two-cycle on the 2x2 quadratic.
inline CheckResult check_quadratic_dynamics() {
  using namespace verify_detail;
  return timed("quadratic_dynamics", 5.0, [](std::string& detail) {
    const double lambdas[] = {1.5, 2.0, 4.0, 10.0, 100.0};
    const double fracs[] = {0.1, 0.3, 0.5, 0.7, 0.9};
    std::size_t cells = 0;
    double worst = 0.0;
    bool ok = true;
    for (double lambda : lambdas) {
      for (double fe : fracs) {
        for (double fa : fracs) {
          ++cells;
          // GD: 0 < eta < 1/lambda
          const double eta_gd = fe / lambda;
          const auto gd = run_quadratic(lambda, eta_gd, fa * 3.0 - 1.0, 0.7, 40, QuadMode::gd);
          for (std::size_t t = 0; t + 1 < gd.size(); ++t) {
            const double a = gd[t].a, a1 = gd[t + 1].a;
            worst = std::max(worst, std::abs(a1 - (1.0 - eta_gd * lambda) * a));
            // below 1e-12 the readout is rounding noise from the b coordinate
            if (std::abs(a) > 1e-12 && (!(std::abs(a1) < std::abs(a)) || std::signbit(a1) != std::signbit(a))) ok = false;
          }
          // matrix-normalized: 0 < a0 < eta and 0 < b0 < eta
          const double eta = 0.05 + fe;
          const auto mn = run_quadratic(lambda, eta, fa * eta, (1.0 - fa) * eta, 40, QuadMode::matrix_normalized);
          if (mn.size() != 41) ok = false;
          for (std::size_t t = 0; t + 2 < mn.size(); ++t) {
            worst = std::max({worst, std::abs(mn[t + 2].a - mn[t].a), std::abs(mn[t + 2].b - mn[t].b)});
          }
          if (mn.size() > 1) worst = std::max(worst, std::abs(mn[1].a - (mn[0].a - eta)));
        }
      }
    }
    detail = std::to_string(cells) + " cells, max deviation " + sci(worst);
    return ok && worst < 1e-12;
  });
}

/// Averaging identities along real optimizer trajectories with random
/// gradients: recursion vs closed form, weighted-sum increments, omega form,
/// and sum(alpha) = 1; for rho in {0, 0.5, 1}.
inline CheckResult check_averaging_identities(std::uint64_t seed = 4) {
  using namespace verify_detail;
  return timed("averaging_identities", 10.0, [seed](std::string& detail) {
    double e_closed = 0.0, e_delta = 0.0, e_omega = 0.0, e_alpha = 0.0;
    for (double rho : {0.0, 0.5, 1.0}) {
      Rng rng(seed + static_cast<std::uint64_t>(rho * 10));
      ParamSet params;
      params.add("w0", random_matrix(8, 6, rng), ParamGroup::muon);
      params.add("w1", random_matrix(5, 7, rng), ParamGroup::muon);
      OptimizerConfig oc;
      oc.kind = OptimizerKind::amuse;
      oc.lr = 0.01;
      oc.beta1 = 0.8;
      oc.rho = rho;
      oc.warmup_steps = 50;
      oc.averaging = Averaging::uniform;
      oc.ns_iters = 5;
      Optimizer opt(oc, params);

      std::vector<FlatVector> z_hist{vectorize(opt.state().z)};
      std::vector<FlatVector> x_hist{vectorize(opt.state().x)};
      std::vector<FlatVector> scaled_orth;
      std::vector<double> c_hist{1.0}, beta_hist{opt.state().beta};
      const std::size_t T = 500;
      for (std::size_t t = 1; t <= T; ++t) {
        ParamSet g = params.zeros_like();
        for (auto& p : g)
          for (double& v : p.value.values()) v = rng.normal();
        MuonTrace trace;
        const StepInfo info = opt.step(params, g, &trace);
        FlatVector o = vectorize(trace.orthogonal);
        scale_in_place(o, info.lr);
        scaled_orth.push_back(std::move(o));
        const auto& st = opt.state();
        z_hist.push_back(vectorize(st.z));
        x_hist.push_back(vectorize(st.x));
        c_hist.push_back(st.c_current);
        beta_hist.push_back(st.beta);

        // Delta x_t = -(1/(t(t+1))) sum_j j eta_j O_j (per-step eta folded in)
        FlatVector dx = x_hist[t];
        axpy(-1.0, x_hist[t - 1], dx);
        e_delta = std::max(e_delta, max_abs(dx, delta_x_weighted(scaled_orth, 1.0, t)));

        // x_{t+1} = (1 - omega) x_t + omega y_{t+1}
        const double w = omega_from(st.c_current, st.beta);
        FlatVector rebuilt = x_hist[t - 1];
        scale_in_place(rebuilt, 1.0 - w);
        axpy(w, params.flatten(), rebuilt);
        e_omega = std::max(e_omega, max_abs(rebuilt, x_hist[t]));

        if (t % 50 == 0) {
          const std::vector<FlatVector> zs(z_hist.begin(), z_hist.end());
          e_closed = std::max(e_closed, max_abs(closed_form_x(zs, c_hist), x_hist[t]));
        }
      }
      const auto ew = effective_weights(beta_hist, c_hist, T + 1);
      double s = 0.0;
      for (double a : ew.alpha) s += a;
      e_alpha = std::max(e_alpha, std::abs(s - 1.0));
    }
    detail = "closed form " + sci(e_closed) + ", delta-x sum " + sci(e_delta) + ", omega form " + sci(e_omega) +
             ", |sum alpha - 1| " + sci(e_alpha);
    return e_closed < 1e-10 && e_delta < 1e-10 && e_omega < 1e-10 && e_alpha < 1e-10;
  });
}

/// Beta/omega schedule shape and the exact-vs-closed agreement.
inline CheckResult check_schedule_properties() {
  using namespace verify_detail;
  return timed("schedule_properties", 1.0, [](std::string& detail) {
    bool ok = true;
    std::string why;
    const double beta1 = 0.8;
    const std::size_t t0 = 2000, T = 20000;
    for (std::size_t t = 1; t <= T; ++t) {
      if (beta_closed(t, t0, beta1, 0.0) != beta1 || beta_exact(1.0 / t, 1.0 / t0, beta1, 0.0) != beta1) {
        ok = false;
        why = "rho=0 not constant";
      }
    }
    for (double rho : {0.1, 0.3, 0.5, 0.7, 1.0}) {
      double prev_b = 0.0, prev_w = 2.0;
      for (std::size_t t = 1; t <= T; ++t) {
        const double b = beta_closed(t, t0, beta1, rho);
        if (b < prev_b || !(b < 1.0)) {
          ok = false;
          why = "beta not non-decreasing below 1";
        }
        prev_b = b;
        if (t >= t0) {
          const double w = omega_closed(t, t0, beta1, rho);
          if (w > prev_w) {
            ok = false;
            why = "omega increased after T0";
          }
          prev_w = w;
        }
      }
    }
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
      const double rho = (i % 10) / 9.0;
      const std::size_t t = t0 + 1 + static_cast<std::size_t>(i) * 37;
      worst = std::max(worst, std::abs(beta_exact(1.0 / t, 1.0 / t0, beta1, rho) - beta_closed(t, t0, beta1, rho)));
    }
    const double pinned = beta_closed(3999, 2000, 0.8, 1.0);
    if (pinned != 0.9) {
      ok = false;
      why = "pinned beta = " + std::to_string(pinned);
    }
    detail = "exact vs closed max diff " + sci(worst) + ", beta(3999) = " + exact(pinned) + (why.empty() ? "" : "; " + why);
    return ok && worst < 1e-12;
  });
}

/// Degenerate configurations reduce to simpler optimizers bit for bit; the
/// eval swap is neutral and reconstructs x.
inline CheckResult check_wrapper_degeneracies(std::uint64_t seed = 6) {
  using namespace verify_detail;
  return timed("wrapper_degeneracies", 60.0, [seed](std::string& detail) {
    const Dataset ds = synthetic_gaussian(seed, 240, 8, 3, 4.0);
    MlpSpec spec{8, {16, 16}, 3, Activation::tanh, false};
    const auto bs = batches(ds, 24, seed, 0);

    auto run_pair = [&](OptimizerConfig a, OptimizerConfig b, std::size_t steps) {
      MlpModel ma = MlpModel::init(spec, seed), mb = MlpModel::init(spec, seed);
      Optimizer oa(a, ma.params()), ob(b, mb.params());
      for (std::size_t t = 0; t < steps; ++t) {
        const Batch& batch = bs[t % bs.size()];
        oa.step(ma.params(), backward(ma, batch));
        ob.step(mb.params(), backward(mb, batch));
        if (!(ma.params() == mb.params())) return false;
      }
      return true;
    };

    OptimizerConfig muon;
    muon.kind = OptimizerKind::muon;
    muon.lr = 0.02;
    muon.muon_momentum = 0.9;
    muon.warmup_steps = 10;
    OptimizerConfig sf0 = muon;
    sf0.kind = OptimizerKind::sf_muon;
    sf0.beta1 = 0.0;
    sf0.averaging = Averaging::frozen;
    const bool sf_equals_muon = run_pair(muon, sf0, 100);

    OptimizerConfig sf = muon;
    sf.kind = OptimizerKind::sf_muon;
    sf.beta1 = 0.9;
    OptimizerConfig am = sf;
    am.kind = OptimizerKind::amuse;
    am.rho = 0.0;
    const bool amuse_equals_sf = run_pair(sf, am, 100);

    OptimizerConfig live = sf;
    live.kind = OptimizerKind::amuse;
    live.beta1 = 0.8;
    live.rho = 0.6;
    live.warmup_steps = 20;
    MlpModel m = MlpModel::init(spec, seed);
    Optimizer opt(live, m.params());
    bool neutral = true;
    double worst_x = 0.0;
    for (std::size_t t = 0; t < 1000; ++t) {
      opt.step(m.params(), backward(m, bs[t % bs.size()]));
      const ParamSet before = m.params();
      {
        EvalSwap swap(m.params(), opt);
        worst_x = std::max(worst_x, max_abs(m.params().flatten(), vectorize(opt.state().x)));
      }
      if (!(m.params() == before)) neutral = false;
    }
    detail = std::string("sf(beta=0,frozen)==muon: ") + (sf_equals_muon ? "yes" : "no") +
             ", amuse(rho=0)==sf_muon: " + (amuse_equals_sf ? "yes" : "no") + ", swap neutral: " +
             (neutral ? "yes" : "no") + ", swap x err " + sci(worst_x);
    return sf_equals_muon && amuse_equals_sf && neutral && worst_x < 1e-10;
  });
}

/// Ratio identity, Lanczos vs a dense eigensolver, and the quadratic's top
/// eigenvalue.
inline CheckResult check_subspace_identities(std::uint64_t seed = 7) {
  using namespace verify_detail;
  return timed("subspace_identities", 60.0, [seed](std::string& detail) {
    Rng rng(seed);
    double worst_pyth = 0.0;
    {
      EigenBasis basis;
      basis.eigenvectors = random_orthonormal(200, 10, rng);
      basis.eigenvalues.assign(10, 1.0);
      for (int i = 0; i < 1000; ++i) {
        FlatVector v(200);
        const double scale = std::exp(rng.uniform(-5.0, 5.0));
        for (double& x : v) x = scale * rng.normal();
        const auto r = dominant_ratio(v, basis);
        worst_pyth = std::max(worst_pyth, std::abs(r.dominant * r.dominant + r.bulk * r.bulk - 1.0));
      }
    }

    double worst_val = 0.0, worst_vec = 0.0;
    auto compare = [&](const HvpHandle& op, std::size_t dim, std::size_t k, std::uint64_t s) {
      const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(dense_operator(op, dim));
      LanczosOptions lo;
      lo.tol = 1e-12;
      const EigenBasis b = lanczos_topk(op, dim, k, dim, s, lo);
      const double scale = es.eigenvalues().cwiseAbs().maxCoeff();
      for (std::size_t i = 0; i < k; ++i) {
        const auto idx = static_cast<Eigen::Index>(dim - 1 - i);  // ascending order
        worst_val = std::max(worst_val, std::abs(b.eigenvalues[i] - es.eigenvalues()(idx)) / scale);
        // eigenvector check only where the eigenvalue is well separated
        const double gap_lo = idx > 0 ? es.eigenvalues()(idx) - es.eigenvalues()(idx - 1) : scale;
        const double gap_hi = i > 0 ? es.eigenvalues()(idx + 1) - es.eigenvalues()(idx) : scale;
        if (std::min(gap_lo, gap_hi) > 1e-3 * scale) {
          double ip = 0.0;
          for (std::size_t j = 0; j < dim; ++j) ip += b.eigenvectors[i][j] * es.eigenvectors()(static_cast<Eigen::Index>(j), idx);
          worst_vec = std::max(worst_vec, 1.0 - std::abs(ip));
        }
      }
    };

    for (std::size_t dim : {std::size_t{30}, std::size_t{80}, std::size_t{200}}) {
      DenseMatrix a = random_matrix(dim, dim, rng);
      DenseMatrix sym = a + transpose(a);
      const HvpHandle op = [&sym](std::span<const double> v) {
        const DenseMatrix out = matmul(sym, DenseMatrix(sym.rows(), 1, FlatVector(v.begin(), v.end())));
        return FlatVector(out.values().begin(), out.values().end());
      };
      compare(op, dim, 5, seed + dim);
    }
    {
      MlpSpec spec{5, {8, 8}, 3, Activation::tanh, false};
      const MlpModel model = MlpModel::init(spec, seed);
      const Batch batch = random_batch(20, 5, 3, rng);
      const std::size_t dim = model.parameter_count();
      const HessianOperator op(model, batch);
      compare([&op](std::span<const double> v) { return op.apply(v); }, dim, 5, seed + 1);
    }

    double worst_quad = 0.0;
    for (double lambda : {1.5, 4.0, 17.3, 250.0}) {
      const DenseMatrix q = rotation2(0.37 * lambda);
      const DenseMatrix a = matmul_nt(matmul(q, DenseMatrix::from_rows({{lambda, 0.0}, {0.0, 1.0}})), q);
      const QuadraticObjective f(a, 2);
      LanczosOptions lo;
      lo.tol = 1e-12;
      const EigenBasis b = lanczos_topk([&f](std::span<const double> v) { return f.hvp(v); }, f.dim(), 1, f.dim(),
                                        seed, lo);
      worst_quad = std::max(worst_quad, std::abs(b.eigenvalues[0] - lambda));
    }
    detail = "|r_dom^2 + r_bulk^2 - 1| " + sci(worst_pyth) + ", lanczos eigenvalue rel err " + sci(worst_val) +
             ", eigenvector 1-|cos| " + sci(worst_vec) + ", quadratic top eig err " + sci(worst_quad);
    return worst_pyth < 1e-10 && worst_val < 1e-8 && worst_vec < 1e-8 && worst_quad < 1e-6;
  });
}

inline std::vector<CheckResult> run_core_checks() {
  return {check_orthogonalization(),    check_gradients_and_hvp(),    check_quadratic_dynamics(),
          check_averaging_identities(), check_schedule_properties(),  check_wrapper_degeneracies(),
          check_subspace_identities()};
}

}  // namespace amuse
