// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>

#include "amuse/optim.hpp"
#include "amuse/rng.hpp"

using namespace amuse;

namespace {

ParamSet two_params(std::uint64_t seed) {
  Rng rng(seed);
  ParamSet p;
  DenseMatrix w(4, 3), b(1, 3);
  for (double& v : w.values()) v = rng.normal();
  for (double& v : b.values()) v = rng.normal();
  p.add("w", w, ParamGroup::muon);
  p.add("b", b, ParamGroup::auxiliary);
  return p;
}

ParamSet random_like(const ParamSet& p, Rng& rng) {
  ParamSet g = p.zeros_like();
  for (auto& q : g)
    for (double& v : q.value.values()) v = rng.normal();
  return g;
}

OptimizerConfig config(OptimizerKind kind, double lr) {
  OptimizerConfig c;
  c.kind = kind;
  c.lr = lr;
  return c;
}

}  // namespace

TEST(Schedule, WarmupIsLinearThenConstant) {
  OptimizerConfig c = config(OptimizerKind::sgd, 0.1);
  c.warmup_steps = 4;
  EXPECT_DOUBLE_EQ(lr_at(c, 1), 0.025);
  EXPECT_DOUBLE_EQ(lr_at(c, 2), 0.05);
  EXPECT_DOUBLE_EQ(lr_at(c, 4), 0.1);
  EXPECT_DOUBLE_EQ(lr_at(c, 1000), 0.1);
  EXPECT_THROW(lr_at(c, 0), std::invalid_argument);
}

TEST(Schedule, CosineAndLinearDecayEndpoints) {
  OptimizerConfig c = config(OptimizerKind::sgd, 0.2);
  c.lr_schedule = LrSchedule::cosine;
  c.warmup_steps = 10;
  c.total_steps = 110;
  EXPECT_DOUBLE_EQ(lr_at(c, 10), 0.2);
  EXPECT_NEAR(lr_at(c, 60), 0.1, 1e-15);
  EXPECT_NEAR(lr_at(c, 110), 0.0, 1e-15);

  OptimizerConfig d = config(OptimizerKind::muon, 1e-4);
  d.lr_schedule = LrSchedule::linear_decay;
  d.decay_start = 100;
  d.decay_end = 200;
  EXPECT_DOUBLE_EQ(lr_at(d, 100), 1e-4);
  EXPECT_DOUBLE_EQ(lr_at(d, 150), 0.5e-4);
  EXPECT_EQ(lr_at(d, 200), 0.0);
  EXPECT_EQ(lr_at(d, 250), 0.0);
}

TEST(Schedule, BetaExamples) {
  EXPECT_EQ(beta_closed(3999, 2000, 0.8, 1.0), 0.9);
  EXPECT_EQ(beta_closed(1500, 2000, 0.8, 1.0), 0.8);  // before T0
  EXPECT_EQ(beta_closed(50000, 2000, 0.8, 0.0), 0.8);
  // exact form with c_t = 1/t reduces to the closed form
  for (std::size_t t : {2001u, 2500u, 10007u})
    for (double rho : {0.3, 0.6, 1.0})
      EXPECT_NEAR(beta_exact(1.0 / t, 1.0 / 2000, 0.8, rho), beta_closed(t, 2000, 0.8, rho), 1e-14);
}

TEST(Schedule, OmegaForms) {
  for (std::size_t t : {2u, 10u, 5000u}) {
    const double b = 0.93;
    EXPECT_NEAR(omega_from(1.0 / t, b), omega_uniform(t, b), 1e-15);
  }
  EXPECT_EQ(omega_from(1.0, 0.9), 1.0);
}

TEST(Config, RangeErrorsCiteValidRange) {
  OptimizerConfig c = config(OptimizerKind::amuse, 1e-3);
  c.rho = 1.5;
  try {
    c.validate();
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("rho"), std::string::npos);
    EXPECT_NE(msg.find("[0, 1]"), std::string::npos);
  }
  OptimizerConfig bad_lr = config(OptimizerKind::sgd, 0.0);
  EXPECT_THROW(bad_lr.validate(), ConfigError);
  OptimizerConfig beta = config(OptimizerKind::sf_muon, 1e-3);
  beta.beta1 = 1.0;
  EXPECT_THROW(beta.validate(), ConfigError);
  OptimizerConfig frozen = config(OptimizerKind::amuse, 1e-3);
  frozen.rho = 0.5;
  frozen.averaging = Averaging::frozen;
  EXPECT_THROW(frozen.validate(), ConfigError);
  OptimizerConfig cosine = config(OptimizerKind::sgd, 1e-3);
  cosine.lr_schedule = LrSchedule::cosine;
  EXPECT_THROW(cosine.validate(), ConfigError);
}

TEST(Optimizer, SgdStepIsExact) {
  ParamSet p = two_params(1);
  const ParamSet p0 = p;
  Rng rng(2);
  const ParamSet g = random_like(p, rng);
  Optimizer opt(config(OptimizerKind::sgd, 0.1), p);
  const StepInfo info = opt.step(p, g);
  EXPECT_EQ(info.t, 1u);
  EXPECT_EQ(info.lr, 0.1);
  for (std::size_t i = 0; i < p.count(); ++i)
    for (std::size_t j = 0; j < p[i].value.size(); ++j)
      EXPECT_EQ(p[i].value.data()[j], p0[i].value.data()[j] - 0.1 * g[i].value.data()[j]);
}

TEST(Optimizer, HeavyBallAccumulates) {
  ParamSet p = two_params(1);
  OptimizerConfig c = config(OptimizerKind::sgd, 1.0);
  c.sgd_momentum = 0.5;
  Optimizer opt(c, p);
  ParamSet g = p.zeros_like();
  for (auto& q : g)
    for (double& v : q.value.values()) v = 1.0;
  const double w0 = p[0].value(0, 0);
  opt.step(p, g);
  opt.step(p, g);
  EXPECT_DOUBLE_EQ(p[0].value(0, 0), w0 - 1.0 - 1.5);
}

TEST(Optimizer, AdamWFirstStepIsSignLike) {
  ParamSet p = two_params(3);
  const ParamSet p0 = p;
  Rng rng(4);
  const ParamSet g = random_like(p, rng);
  OptimizerConfig c = config(OptimizerKind::adamw, 0.01);
  c.weight_decay = 0.1;
  Optimizer opt(c, p);
  opt.step(p, g);
  for (std::size_t i = 0; i < p.count(); ++i)
    for (std::size_t j = 0; j < p[i].value.size(); ++j) {
      const double gj = g[i].value.data()[j];
      const double expect = (1.0 - 0.01 * 0.1) * p0[i].value.data()[j] - 0.01 * gj / (std::abs(gj) + kAdamEps);
      EXPECT_NEAR(p[i].value.data()[j], expect, 1e-15);
    }
}

TEST(Optimizer, MuonUsesOrthogonalizedMomentumOnMatrixGroup) {
  ParamSet p = two_params(5);
  const ParamSet p0 = p;
  Rng rng(6);
  const ParamSet g = random_like(p, rng);
  OptimizerConfig c = config(OptimizerKind::muon, 0.02);
  c.aux_lr = 0.005;
  Optimizer opt(c, p);
  MuonTrace trace;
  opt.step(p, g, &trace);
  ASSERT_EQ(trace.index, std::vector<std::size_t>{0});
  EXPECT_TRUE(trace.momentum[0] == g[0].value);
  const DenseMatrix o = newton_schulz(g[0].value, 5, NsCoefficients::muon_fast);
  EXPECT_TRUE(trace.orthogonal[0] == o);
  DenseMatrix expect = p0[0].value;
  expect -= 0.02 * o;
  EXPECT_LT(max_abs_diff(p[0].value, expect), 1e-15);
  DenseMatrix bias = p0[1].value;
  bias -= 0.005 * g[1].value;
  EXPECT_LT(max_abs_diff(p[1].value, bias), 1e-15);
}

TEST(Optimizer, NesterovChangesTheOrthogonalizedInput) {
  ParamSet a = two_params(7), b = two_params(7);
  Rng rng(8);
  const ParamSet g1 = random_like(a, rng), g2 = random_like(a, rng);
  OptimizerConfig c = config(OptimizerKind::muon, 0.02);
  OptimizerConfig n = c;
  n.nesterov = true;
  Optimizer oa(c, a), ob(n, b);
  oa.step(a, g1);
  ob.step(b, g1);
  oa.step(a, g2);
  ob.step(b, g2);
  EXPECT_FALSE(a[0].value == b[0].value);
}

TEST(Optimizer, GradClipBoundsGlobalNorm) {
  ParamSet p = two_params(9);
  const ParamSet p0 = p;
  Rng rng(10);
  ParamSet g = random_like(p, rng);
  for (auto& q : g) q.value *= 100.0;
  OptimizerConfig c = config(OptimizerKind::sgd, 1.0);
  c.grad_clip = 0.5;
  Optimizer opt(c, p);
  opt.step(p, g);
  ParamSet diff = p0;
  for (std::size_t i = 0; i < p.count(); ++i) diff[i].value -= p[i].value;
  EXPECT_NEAR(global_norm(diff), 0.5, 1e-12);
}

TEST(Optimizer, RejectsNonFiniteAndMismatchedGradients) {
  ParamSet p = two_params(11);
  Optimizer opt(config(OptimizerKind::muon, 0.01), p);
  ParamSet g = p.zeros_like();
  g[1].value(0, 0) = std::nan("");
  EXPECT_THROW(opt.step(p, g), NumericalError);
  ParamSet wrong;
  wrong.add("w", DenseMatrix(2, 2), ParamGroup::muon);
  EXPECT_THROW(opt.step(p, wrong), ShapeError);
}

TEST(Optimizer, LoadStateChecksShapes) {
  ParamSet p = two_params(12);
  Optimizer opt(config(OptimizerKind::sf_muon, 0.01), p);
  OptimizerState s = opt.state();
  s.z[0] = DenseMatrix(2, 2);
  EXPECT_THROW(opt.load_state(s, p), ShapeError);
}

TEST(ScheduleFree, FirstStepMovesZAndResetsXToZ) {
  ParamSet p = two_params(13);
  const ParamSet p0 = p;
  Rng rng(14);
  const ParamSet g = random_like(p, rng);
  OptimizerConfig c = config(OptimizerKind::sf_sgd, 0.1);
  c.beta1 = 0.9;
  Optimizer opt(c, p);
  EXPECT_EQ(opt.state().beta, 0.9);
  const StepInfo info = opt.step(p, g);
  EXPECT_EQ(info.c_next, 1.0);  // lr-weighted: eta_1^2 / eta_1^2
  for (std::size_t i = 0; i < p.count(); ++i) {
    DenseMatrix z = p0[i].value;
    z -= 0.1 * g[i].value;
    EXPECT_LT(max_abs_diff(opt.state().z[i], z), 1e-15);
    EXPECT_TRUE(opt.state().x[i] == opt.state().z[i]);
    EXPECT_LT(max_abs_diff(p[i].value, z), 1e-15);
  }
}

TEST(ScheduleFree, UniformAveragingIsTheRunningMeanOfZ) {
  ParamSet p = two_params(15);
  OptimizerConfig c = config(OptimizerKind::sf_sgd, 0.05);
  c.averaging = Averaging::uniform;
  c.beta1 = 0.5;
  Optimizer opt(c, p);
  Rng rng(16);
  FlatVector sum = vectorize(opt.state().z);
  for (int t = 1; t <= 30; ++t) {
    opt.step(p, random_like(p, rng));
    axpy(1.0, vectorize(opt.state().z), sum);
    FlatVector mean = sum;
    scale_in_place(mean, 1.0 / (t + 1));
    const FlatVector x = vectorize(opt.state().x);
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(x[i], mean[i], 1e-13);
  }
}

TEST(ScheduleFree, AmuseBetaFollowsScheduleAfterPivot) {
  ParamSet p = two_params(17);
  OptimizerConfig c = config(OptimizerKind::amuse, 0.01);
  c.beta1 = 0.8;
  c.rho = 1.0;
  c.warmup_steps = 10;
  c.averaging = Averaging::uniform;
  Optimizer opt(c, p);
  Rng rng(18);
  for (std::size_t t = 1; t <= 40; ++t) {
    const StepInfo info = opt.step(p, random_like(p, rng));
    const double expect = t <= 10 ? 0.8 : beta_closed(t, 10, 0.8, 1.0);
    EXPECT_NEAR(info.beta, expect, 1e-14) << "t=" << t;
  }
  OptimizerConfig closed = c;
  closed.beta_form = BetaForm::closed;
  EXPECT_EQ(Optimizer(closed, p).next_beta(19), beta_closed(19, 10, 0.8, 1.0));
}

TEST(ScheduleFree, EvalSwapRestoresBitwiseAndYieldsX) {
  ParamSet p = two_params(19);
  OptimizerConfig c = config(OptimizerKind::sf_muon, 0.01);
  c.beta1 = 0.9;
  Optimizer opt(c, p);
  Rng rng(20);
  for (int t = 0; t < 25; ++t) opt.step(p, random_like(p, rng));
  const ParamSet before = p;
  {
    EvalSwap swap(p, opt);
    for (std::size_t i = 0; i < p.count(); ++i) EXPECT_LT(max_abs_diff(p[i].value, opt.state().x[i]), 1e-12);
  }
  EXPECT_TRUE(p == before);
  {
    EvalSwap swap(p, opt, SwapMode::stored);
    for (std::size_t i = 0; i < p.count(); ++i) EXPECT_TRUE(p[i].value == opt.state().x[i]);
  }
  EXPECT_TRUE(p == before);

  ParamSet plain = two_params(21);
  Optimizer sgd(config(OptimizerKind::sgd, 0.1), plain);
  const ParamSet snapshot = plain;
  { EvalSwap swap(plain, sgd); EXPECT_TRUE(plain == snapshot); }
}

TEST(AveragingOracles, HandUnrolledExamples) {
  const std::vector<FlatVector> z{{1.0}, {2.0}, {3.0}};
  const std::vector<double> c{1.0, 0.5, 1.0 / 3.0};
  EXPECT_NEAR(closed_form_x(z, c)[0], 2.0, 1e-15);
  const std::vector<FlatVector> o{{1.0}, {1.0}};
  EXPECT_DOUBLE_EQ(delta_x_weighted(o, 1.0, 2)[0], -0.5);
  EXPECT_THROW(delta_x_weighted(o, 1.0, 3), std::invalid_argument);
}

TEST(AveragingOracles, EffectiveWeightsSumToOne) {
  Rng rng(22);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t T = 1 + rng.below(300);
    std::vector<double> beta(T), c(T);
    for (std::size_t t = 0; t < T; ++t) {
      beta[t] = rng.uniform(0.0, 0.999);
      c[t] = rng.uniform(0.001, 1.0);
    }
    const auto w = effective_weights(beta, c, T);
    double s = 0.0;
    for (double a : w.alpha) {
      EXPECT_GE(a, 0.0);
      s += a;
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}
