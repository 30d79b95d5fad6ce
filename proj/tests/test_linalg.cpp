// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <Eigen/Dense>

#include "amuse/linalg.hpp"
#include "amuse/rng.hpp"

using namespace amuse;

namespace {

DenseMatrix random_matrix(std::size_t r, std::size_t c, Rng& rng) {
  DenseMatrix m(r, c);
  for (double& v : m.values()) v = rng.normal();
  return m;
}

Eigen::MatrixXd to_eigen(const DenseMatrix& m) {
  Eigen::MatrixXd e(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) e(i, j) = m(i, j);
  return e;
}

double gram_defect(const DenseMatrix& o) {
  const bool tall = o.rows() >= o.cols();
  const DenseMatrix g = tall ? matmul_tn(o, o) : matmul_nt(o, o);
  return frobenius_distance(g, DenseMatrix::identity(g.rows()));
}

}  // namespace

TEST(Linalg, MatmulVariantsAgreeWithNaiveProducts) {
  Rng rng(11);
  const DenseMatrix a = random_matrix(7, 5, rng), b = random_matrix(5, 4, rng), c = random_matrix(7, 4, rng);
  const DenseMatrix ab = matmul(a, b);
  for (std::size_t i = 0; i < 7; ++i)
    for (std::size_t j = 0; j < 4; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < 5; ++k) s += a(i, k) * b(k, j);
      EXPECT_NEAR(ab(i, j), s, 1e-12);
    }
  EXPECT_LT(max_abs_diff(matmul_tn(a, c), matmul(transpose(a), c)), 1e-12);
  EXPECT_LT(max_abs_diff(matmul_nt(c, b), matmul(c, transpose(b))), 1e-12);
}

TEST(Linalg, ShapeMismatchesThrow) {
  EXPECT_THROW(matmul(DenseMatrix(2, 3), DenseMatrix(2, 3)), ShapeError);
  EXPECT_THROW(dot(FlatVector{1, 2}, FlatVector{1}), ShapeError);
  EXPECT_THROW(DenseMatrix(2, 2, FlatVector{1, 2, 3}), ShapeError);
  const std::vector<Shape> shapes{{2, 2}};
  EXPECT_THROW(de_vectorize(FlatVector{1, 2, 3}, shapes), ShapeError);
}

TEST(Linalg, VectorizeRoundTrip) {
  Rng rng(3);
  const std::vector<DenseMatrix> ms{random_matrix(3, 2, rng), random_matrix(1, 5, rng), random_matrix(4, 4, rng)};
  const FlatVector flat = vectorize(ms);
  ASSERT_EQ(flat.size(), 6u + 5u + 16u);
  EXPECT_EQ(flat[6], ms[1](0, 0));  // row-major, declaration order
  const std::vector<Shape> shapes{{3, 2}, {1, 5}, {4, 4}};
  const auto back = de_vectorize(flat, shapes);
  for (std::size_t i = 0; i < ms.size(); ++i) EXPECT_TRUE(back[i] == ms[i]);
}

TEST(Linalg, SymmetricEigenMatchesEigenSolver) {
  Rng rng(5);
  for (std::size_t n : {1u, 2u, 9u, 40u}) {
    const DenseMatrix a = random_matrix(n, n, rng);
    const DenseMatrix s = a + transpose(a);
    const auto ours = symmetric_eigen(s);
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ref(to_eigen(s));
    for (std::size_t i = 0; i < n; ++i) {
      EXPECT_NEAR(ours.values[i], ref.eigenvalues()(static_cast<Eigen::Index>(n - 1 - i)), 1e-10);
      if (i > 0) EXPECT_GE(ours.values[i - 1], ours.values[i]);
    }
    // S V = V diag(values)
    const DenseMatrix sv = matmul(s, ours.vectors);
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(sv(i, j), ours.values[j] * ours.vectors(i, j), 1e-9);
  }
}

TEST(Linalg, PolarOracleIsOrthogonalAndRecoversFactor) {
  Rng rng(7);
  for (auto [r, c] : std::vector<Shape>{{6, 6}, {9, 4}, {3, 8}, {1, 5}}) {
    const DenseMatrix g = random_matrix(r, c, rng);
    const DenseMatrix o = polar_factor_oracle(g);
    EXPECT_LT(gram_defect(o), 1e-9);
    // G = O P with P symmetric positive semidefinite (tall) or G = P O (wide)
    const DenseMatrix p = r >= c ? matmul_tn(o, g) : matmul_nt(g, o);
    EXPECT_LT(max_abs_diff(p, transpose(p)), 1e-10);
    for (double ev : symmetric_eigen(0.5 * (p + transpose(p))).values) EXPECT_GT(ev, 0.0);
  }
}

TEST(Linalg, PolarOracleRejectsRankDeficientInput) {
  const DenseMatrix g = DenseMatrix::from_rows({{1, 2}, {2, 4}});
  EXPECT_THROW(polar_factor_oracle(g), NumericalError);
}

TEST(Linalg, NewtonSchulzCubicConvergesToPolar) {
  Rng rng(9);
  for (auto [r, c] : std::vector<Shape>{{8, 8}, {12, 5}, {5, 12}}) {
    // well-conditioned: singular values in [0.5, 1]
    const DenseMatrix q = polar_factor_oracle(random_matrix(r, c, rng));
    const std::size_t k = std::min(r, c);
    std::vector<double> s(k);
    for (double& x : s) x = rng.uniform(0.5, 1.0);
    const DenseMatrix d = DenseMatrix::diagonal(s);
    const DenseMatrix g = r >= c ? matmul(q, d) : matmul(d, q);
    EXPECT_LT(frobenius_distance(newton_schulz(g, 25, NsCoefficients::cubic_exact), q), 1e-9);
  }
}

TEST(Linalg, NewtonSchulzIsScaleInvariantAndTransposeEquivariant) {
  Rng rng(13);
  const DenseMatrix g = random_matrix(6, 10, rng);
  const DenseMatrix a = newton_schulz(g, 5, NsCoefficients::muon_fast);
  DenseMatrix g3 = g;
  g3 *= 1000.0;
  EXPECT_LT(max_abs_diff(a, newton_schulz(g3, 5, NsCoefficients::muon_fast)), 1e-6);
  EXPECT_LT(max_abs_diff(transpose(a), newton_schulz(transpose(g), 5, NsCoefficients::muon_fast)), 1e-12);
}

TEST(Linalg, NewtonSchulzQuinticApproximatelyOrthogonal) {
  Rng rng(17);
  const DenseMatrix g = random_matrix(32, 16, rng);
  // the fast quintic only pushes singular values into roughly [0.7, 1.2]
  for (double s : singular_values(newton_schulz(g, 5, NsCoefficients::muon_fast))) {
    EXPECT_GT(s, 0.6);
    EXPECT_LT(s, 1.25);
  }
}

TEST(Linalg, NewtonSchulzRmsMatchScalesEntries) {
  Rng rng(19);
  const DenseMatrix g = random_matrix(16, 4, rng);
  const DenseMatrix plain = newton_schulz(g, 30, NsCoefficients::cubic_exact);
  const DenseMatrix rms = newton_schulz(g, 30, NsCoefficients::cubic_exact, true);
  EXPECT_NEAR(frobenius_norm(rms) / frobenius_norm(plain), 4.0, 1e-12);
}

TEST(Linalg, NewtonSchulzRejectsDegenerateInput) {
  EXPECT_THROW(newton_schulz(DenseMatrix(3, 3), 5, NsCoefficients::muon_fast), NumericalError);
  DenseMatrix bad(2, 2, 1.0);
  bad(0, 1) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(newton_schulz(bad, 5, NsCoefficients::muon_fast), NumericalError);
  EXPECT_THROW(newton_schulz(DenseMatrix(2, 2, 1.0), 0, NsCoefficients::muon_fast), std::invalid_argument);
}
