#include <gtest/gtest.h>

#include <cmath>

#include "fedosd/linalg.hpp"
#include "oracles.hpp"

using namespace fedosd;

namespace {

GradientMatrix rows_to_matrix(const std::vector<std::vector<double>>& rows) {
  GradientMatrix g(rows.empty() ? 0 : rows[0].size());
  for (std::size_t i = 0; i < rows.size(); ++i) g.add(i, rows[i]);
  return g;
}

double rel_diff(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> d(a);
  axpy(-1.0, b, d);
  return norm(d) / norm(b);
}

}  // namespace

TEST(GradientMatrix, EnforcesAscendingIdsAndLength) {
  GradientMatrix g(3);
  g.add(1, std::vector<double>{1, 2, 3});
  EXPECT_THROW(g.add(1, std::vector<double>{1, 2, 3}), PreconditionError);
  EXPECT_THROW(g.add(0, std::vector<double>{1, 2, 3}), PreconditionError);
  EXPECT_THROW(g.add(2, std::vector<double>{1, 2}), PreconditionError);
  g.add(4, std::vector<double>{0, 0, 1});
  EXPECT_EQ(g.client_ids(), (std::vector<std::size_t>{1, 4}));
}

TEST(Gram, MatchesPairwiseDots) {
  const auto g = rows_to_matrix({{1, 2, 0}, {0, 1, -1}, {3, 0, 4}});
  const Matrix k = gram(g);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) EXPECT_DOUBLE_EQ(k(i, j), dot(g.row(i), g.row(j)));
}

TEST(SymEig, KnownTwoByTwo) {
  Matrix a(2, 2);
  a(0, 0) = 2;
  a(0, 1) = a(1, 0) = 1;
  a(1, 1) = 2;
  const EigenDecomp e = sym_eig(a);
  EXPECT_NEAR(e.values[0], 3.0, 1e-14);
  EXPECT_NEAR(e.values[1], 1.0, 1e-14);
  EXPECT_NEAR(std::abs(e.vectors(0, 0)), 1 / std::sqrt(2.0), 1e-14);
}

TEST(SymEig, ReconstructsRandomSymmetricMatrices) {
  Rng rng(1);
  for (int t = 0; t < 50; ++t) {
    const std::size_t n = 1 + rng.below(8);
    Matrix a(n, n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j <= i; ++j) a(i, j) = a(j, i) = rng.normal();
    const EigenDecomp e = sym_eig(a);
    for (std::size_t k = 1; k < n; ++k) EXPECT_GE(e.values[k - 1], e.values[k]);
    Matrix rec(n, n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        for (std::size_t k = 0; k < n; ++k) rec(i, j) += e.vectors(i, k) * e.values[k] * e.vectors(j, k);
    const Matrix vtv = matmul(e.vectors.transposed(), e.vectors);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        EXPECT_NEAR(rec(i, j), a(i, j), 1e-12);
        EXPECT_NEAR(vtv(i, j), i == j ? 1.0 : 0.0, 1e-12);
      }
  }
}

TEST(SymEig, RejectsAsymmetricInput) {
  Matrix a(2, 2);
  a(0, 1) = 1.0;
  EXPECT_THROW(sym_eig(a), PreconditionError);
}

TEST(NullSpaceProjector, RankOfDuplicatedRows) {
  const auto g = rows_to_matrix({{1, 0, 0, 0}, {1, 0, 0, 0}, {0, 1, 0, 0}});
  const NullSpaceProjector p(g);
  EXPECT_EQ(p.rank(), 2u);
  EXPECT_FALSE(p.trivial());
  const auto y = p.apply(std::vector<double>{1, 2, 3, 4});
  EXPECT_NEAR(y[0], 0, 1e-15);
  EXPECT_NEAR(y[1], 0, 1e-15);
  EXPECT_NEAR(y[2], 3, 1e-15);
  EXPECT_NEAR(y[3], 4, 1e-15);
}

TEST(OsdDirection, EmptyMatrixGivesNegativeTarget) {
  const GradVec gu(std::vector<double>{1, -2, 3});
  const auto d = osd_direction(GradientMatrix(3), gu);
  ASSERT_TRUE(d);
  EXPECT_EQ(d->flat, (std::vector<double>{-1, 2, -3}));
}

TEST(OsdDirection, OrthogonalTargetIsUnchangedNegation) {
  const auto g = rows_to_matrix({{1, 0, 0}});
  const auto d = osd_direction(g, GradVec(std::vector<double>{0, 3, 4}));
  ASSERT_TRUE(d);
  EXPECT_NEAR(d->flat[0], 0, 1e-15);
  EXPECT_NEAR(d->flat[1], -3, 1e-15);
  EXPECT_NEAR(d->flat[2], -4, 1e-15);
}

TEST(OsdDirection, HandExampleMatchesDirectComputation) {
  // G = [1 1 0], g_u = (2, 0, 1): residual of -g_u is (-1, 1, -1), rescaled to sqrt(5).
  const auto d = osd_direction(rows_to_matrix({{1, 1, 0}}), GradVec(std::vector<double>{2, 0, 1}));
  ASSERT_TRUE(d);
  const double s = std::sqrt(5.0 / 3.0);
  EXPECT_NEAR(d->flat[0], -s, 1e-14);
  EXPECT_NEAR(d->flat[1], s, 1e-14);
  EXPECT_NEAR(d->flat[2], -s, 1e-14);
}

TEST(OsdDirection, TargetInRowspaceIsDegenerate) {
  const auto g = rows_to_matrix({{1, 0, 0}, {0, 1, 0}});
  EXPECT_FALSE(osd_direction(g, GradVec(std::vector<double>{2, -1, 0})));
  EXPECT_FALSE(osd_direction_formula(g, GradVec(std::vector<double>{2, -1, 0})));
}

TEST(OsdDirection, FullRankMatrixIsDegenerate) {
  const auto g = rows_to_matrix({{1, 0}, {0, 1}});
  EXPECT_FALSE(osd_direction(g, GradVec(std::vector<double>{1, 1})));
}

TEST(OsdDirection, Preconditions) {
  const auto g = rows_to_matrix({{1, 0, 0}});
  EXPECT_THROW(osd_direction(g, GradVec(3)), PreconditionError);
  EXPECT_THROW(osd_direction(g, GradVec(std::vector<double>{1, 2})), PreconditionError);
}

TEST(OsdDirection, ScaleInvariantInG) {
  Rng rng(4);
  const auto inst = oracle::random_osd_instance(rng, 1);
  auto scaled = inst.rows;
  for (auto& r : scaled)
    for (double& x : r) x *= 1e6;
  const auto a = osd_direction(inst.matrix(), GradVec(inst.g_u));
  const auto b = osd_direction(rows_to_matrix(scaled), GradVec(inst.g_u));
  ASSERT_TRUE(a && b);
  EXPECT_LE(rel_diff(a->flat, b->flat), 1e-10);
}

TEST(OsdDirection, MatchesGramSchmidtOracleOnRandomInstances) {
  Rng rng(2024);
  for (std::size_t t = 0; t < 200; ++t) {
    const auto inst = oracle::random_osd_instance(rng, t);
    const auto d = osd_direction(inst.matrix(), GradVec(inst.g_u));
    const auto ref = oracle::osd_reference(inst.rows, inst.g_u);
    ASSERT_TRUE(d);
    ASSERT_FALSE(ref.empty());
    EXPECT_LE(rel_diff(d->flat, ref), 1e-7) << "instance " << t;
    EXPECT_LE(dot(d->flat, inst.g_u), 0.0);
    EXPECT_NEAR(norm(d->flat), norm(inst.g_u), 1e-10 * norm(inst.g_u));
  }
}

TEST(OsdDirection, FormulaAgreesWithProjection) {
  Rng rng(7);
  for (std::size_t t = 0; t < 200; ++t) {
    const auto inst = oracle::random_osd_instance(rng, t);
    const auto a = osd_direction(inst.matrix(), GradVec(inst.g_u));
    const auto b = osd_direction_formula(inst.matrix(), GradVec(inst.g_u));
    ASSERT_TRUE(a && b);
    EXPECT_LE(rel_diff(b->flat, a->flat), 1e-8) << "instance " << t;
  }
}

// With mu = ||r|| / (2 ||g_u||^4) the closed form returns a vector of norm
// ||g_u||^2 instead of ||g_u||. The cube restores the constraint.
TEST(OsdDirection, NormMultiplierPowerFixesTheNorm) {
  const auto g = rows_to_matrix({{1, 0, 0, 0}});
  const GradVec gu(std::vector<double>{1, 2, 2, 0});  // ||g_u|| = 3
  const double gn = 3.0;
  std::vector<double> r{0, -2, -2, 0};  // G^T (GG^T)^+ G g_u - g_u
  const double rn = norm(r);
  const double mu_quartic = rn / (2 * std::pow(gn, 4));
  std::vector<double> d4 = r;
  scale(d4, 1.0 / (2 * gn * gn * mu_quartic));
  EXPECT_NEAR(norm(d4), gn * gn, 1e-12);

  EXPECT_DOUBLE_EQ(osd_norm_multiplier(rn, gn), rn / (2 * std::pow(gn, 3)));
  const auto d = osd_direction_formula(g, gu);
  ASSERT_TRUE(d);
  EXPECT_NEAR(norm(d->flat), gn, 1e-12);
}

TEST(ProjectNormalPlane, PassesThroughWhenNotPointingAtOrigin) {
  const GradVec g(std::vector<double>{1, 0}), ga(std::vector<double>{-1, 1});
  const auto p = project_normal_plane(g, ga);
  EXPECT_FALSE(p.projected);
  EXPECT_EQ(p.gradient, g);
  const auto z = project_normal_plane(g, GradVec(2));
  EXPECT_FALSE(z.projected);
  EXPECT_EQ(z.gradient, g);
}

TEST(ProjectNormalPlane, RemovesComponentAndKeepsNorm) {
  const GradVec g(std::vector<double>{3, 4}), ga(std::vector<double>{1, 0});
  const auto p = project_normal_plane(g, ga);
  EXPECT_TRUE(p.projected);
  EXPECT_NEAR(p.gradient.flat[0], 0.0, 1e-15);
  EXPECT_NEAR(p.gradient.flat[1], 5.0, 1e-14);
}

TEST(ProjectNormalPlane, ParallelGradientBecomesZero) {
  const auto p = project_normal_plane(GradVec(std::vector<double>{2, 2}), GradVec(std::vector<double>{1, 1}));
  EXPECT_TRUE(p.parallel);
  EXPECT_EQ(norm(p.gradient.flat), 0.0);
}

TEST(ProjectNormalPlane, RandomPairsSatisfyBounds) {
  Rng rng(99);
  for (int t = 0; t < 500; ++t) {
    const std::size_t n = 2 + rng.below(30);
    GradVec g(n), ga(n);
    for (std::size_t k = 0; k < n; ++k) {
      g.flat[k] = rng.normal();
      ga.flat[k] = rng.normal();
    }
    const auto p = project_normal_plane(g, ga);
    if (dot(g.flat, ga.flat) <= 0) {
      EXPECT_EQ(p.gradient, g);
      continue;
    }
    EXPECT_NEAR(dot(p.gradient.flat, ga.flat), 0.0, 1e-12 * norm(g.flat) * norm(ga.flat));
    EXPECT_NEAR(norm(p.gradient.flat), norm(g.flat), 1e-12 * norm(g.flat));
    EXPECT_LE(distance(p.gradient.flat, g.flat), std::sqrt(2.0) * norm(g.flat) * (1 + 1e-12));
  }
}

TEST(ConflictCount, CountsRowsOpposingTheDirection) {
  const auto g = rows_to_matrix({{1, 0}, {-1, 0}, {0, 1}, {-1, -1}});
  EXPECT_EQ(conflict_count(std::vector<double>{1, 0}, g), 2u);
  EXPECT_EQ(conflict_count(std::vector<double>{0, 0}, g), 0u);
}

TEST(ConflictCount, NullSpaceDirectionHasNoConflicts) {
  Rng rng(5);
  for (std::size_t t = 0; t < 50; ++t) {
    const auto inst = oracle::random_osd_instance(rng, t);
    const auto d = osd_direction(inst.matrix(), GradVec(inst.g_u));
    ASSERT_TRUE(d);
    EXPECT_EQ(conflict_count(d->flat, inst.matrix()), 0u);
  }
}

TEST(CosSim, ClampedAndRejectsZero) {
  EXPECT_DOUBLE_EQ(cos_sim(std::vector<double>{1, 1}, std::vector<double>{2, 2}), 1.0);
  EXPECT_DOUBLE_EQ(cos_sim(std::vector<double>{1, 0}, std::vector<double>{-3, 0}), -1.0);
  EXPECT_THROW(cos_sim(std::vector<double>{0, 0}, std::vector<double>{1, 0}), PreconditionError);
}

TEST(Gram, OrthonormalRowsGiveIdentityAndDuplicatesRepeat) {
  const auto id = gram(rows_to_matrix({{1, 0, 0}, {0, 0, 1}}));
  EXPECT_EQ(id, Matrix::identity(2));
  const auto dup = gram(rows_to_matrix({{1, 2}, {1, 2}}));
  EXPECT_EQ(dup(0, 0), dup(1, 1));
  EXPECT_EQ(dup(0, 1), dup(0, 0));
}

TEST(Gram, RandomMatchesTripleLoop) {
  Rng rng(6);
  std::vector<std::vector<double>> rows(3, std::vector<double>(5));
  for (auto& r : rows)
    for (double& x : r) x = rng.normal();
  const Matrix k = gram(rows_to_matrix(rows));
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      double s = 0;
      for (std::size_t t = 0; t < 5; ++t) s += rows[i][t] * rows[j][t];
      EXPECT_NEAR(k(i, j), s, 1e-12);
    }
}

TEST(SymEig, DiagonalInputIsSortedPermutation) {
  Matrix a(3, 3);
  a(0, 0) = 1;
  a(1, 1) = 5;
  a(2, 2) = 3;
  const EigenDecomp e = sym_eig(a);
  EXPECT_EQ(e.values, (std::vector<double>{5, 3, 1}));
  EXPECT_EQ(std::abs(e.vectors(1, 0)), 1.0);
  EXPECT_EQ(std::abs(e.vectors(2, 1)), 1.0);
  EXPECT_EQ(std::abs(e.vectors(0, 2)), 1.0);
}

TEST(SymEig, RandomPsdReconstruction) {
  Rng rng(10);
  Matrix b(5, 5);
  for (double& x : b.data) x = rng.normal();
  const Matrix a = matmul(b, b.transposed());
  const EigenDecomp e = sym_eig(a);
  Matrix rec(5, 5);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 5; ++j)
      for (std::size_t k = 0; k < 5; ++k) rec(i, j) += e.vectors(i, k) * e.values[k] * e.vectors(j, k);
  Matrix diff = rec;
  for (std::size_t k = 0; k < 25; ++k) diff.data[k] -= a.data[k];
  EXPECT_LE(frobenius_norm(diff), 1e-8 * frobenius_norm(a));
}

TEST(OsdDirection, ThreeDimensionalHandExample) {
  const auto d = osd_direction(rows_to_matrix({{1, 0, 0}}), GradVec(std::vector<double>{1, 1, 0}));
  ASSERT_TRUE(d);
  EXPECT_NEAR(d->flat[0], 0.0, 1e-15);
  EXPECT_NEAR(d->flat[1], -std::sqrt(2.0), 1e-15);
  EXPECT_NEAR(d->flat[2], 0.0, 1e-15);
  EXPECT_FALSE(osd_direction(rows_to_matrix({{1, 0, 0}, {0, 1, 1}}), GradVec(std::vector<double>{1, 0, 0})));
}

TEST(OsdDirection, TwentyByFourMatchesOracle) {
  Rng rng(20);
  std::vector<std::vector<double>> rows(4, std::vector<double>(20));
  for (auto& r : rows)
    for (double& x : r) x = rng.normal();
  std::vector<double> gu(20);
  for (double& x : gu) x = rng.normal();
  const auto d = osd_direction(rows_to_matrix(rows), GradVec(gu));
  ASSERT_TRUE(d);
  EXPECT_LE(rel_diff(d->flat, oracle::osd_reference(rows, gu)), 1e-7);
}

TEST(ProjectNormalPlane, HandExample) {
  const auto p = project_normal_plane(GradVec(std::vector<double>{1, 1}), GradVec(std::vector<double>{1, 0}));
  EXPECT_NEAR(p.gradient.flat[0], 0.0, 1e-15);
  EXPECT_NEAR(p.gradient.flat[1], std::sqrt(2.0), 1e-15);
  const GradVec perp(std::vector<double>{0, 2});
  EXPECT_EQ(project_normal_plane(perp, GradVec(std::vector<double>{1, 0})).gradient, perp);
}

TEST(CosSim, HandExample) {
  EXPECT_NEAR(cos_sim(std::vector<double>{1, 0}, std::vector<double>{1, 1}), std::sqrt(0.5), 1e-15);
}

TEST(ConflictCount, NegatedRowAndLoopOracle) {
  EXPECT_EQ(conflict_count(std::vector<double>{-1, -2}, rows_to_matrix({{1, 2}})), 1u);
  Rng rng(31);
  std::vector<std::vector<double>> rows(5, std::vector<double>(6));
  for (auto& r : rows)
    for (double& x : r) x = rng.normal();
  std::vector<double> d(6);
  for (double& x : d) x = rng.normal();
  std::size_t ref = 0;
  for (const auto& r : rows) ref += oracle::dot(r, d) < 0;
  EXPECT_EQ(conflict_count(d, rows_to_matrix(rows)), ref);
}
