#include "natgrad/numkit.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace natgrad;

namespace {

std::mt19937_64& rng() {
  static std::mt19937_64 r(20240611);
  return r;
}

DenseMatrix gaussian(Index m, Index n) {
  std::normal_distribution<double> d;
  DenseMatrix a(m, n);
  for (Index j = 0; j < n; ++j)
    for (Index i = 0; i < m; ++i) a(i, j) = d(rng());
  return a;
}

DenseMatrix ranked(Index m, Index n, Index r) { return gaussian(m, r) * gaussian(r, n); }

// pseudoinverse from the SVD with the usual cutoff
DenseMatrix svd_pinv(const DenseMatrix& a) {
  Eigen::JacobiSVD<DenseMatrix> svd(a, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vector s = svd.singularValues();
  const double cut = 1e-10 * s(0);
  DenseMatrix sinv = DenseMatrix::Zero(a.cols(), a.rows());
  for (Index i = 0; i < s.size(); ++i)
    if (s(i) > cut) sinv(i, i) = 1.0 / s(i);
  return svd.matrixV() * sinv * svd.matrixU().transpose();
}

Index svd_rank(const DenseMatrix& a) {
  Eigen::JacobiSVD<DenseMatrix> svd(a);
  const Vector s = svd.singularValues();
  Index r = 0;
  for (Index i = 0; i < s.size(); ++i) r += s(i) > 1e-10 * s(0);
  return r;
}

}  // namespace

TEST(QrEconomy, TwoByOneByHand) {
  DenseMatrix a(2, 1);
  a << 3, 4;
  const auto f = qr_economy(a);
  EXPECT_NEAR(std::abs(f.q(0, 0)), 0.6, 1e-15);
  EXPECT_NEAR(std::abs(f.q(1, 0)), 0.8, 1e-15);
  EXPECT_NEAR(std::abs(f.r(0, 0)), 5.0, 1e-14);
  EXPECT_LT(relative_error(DenseMatrix(f.q * f.r), a), 1e-15);
}

TEST(QrEconomy, IdentityUpToSigns) {
  const DenseMatrix id = DenseMatrix::Identity(3, 3);
  const auto f = qr_economy(id);
  EXPECT_LT((f.q.cwiseAbs() - id).norm(), 1e-15);
  EXPECT_LT((f.r.cwiseAbs() - id).norm(), 1e-15);
}

TEST(QrEconomy, RandomReconstructionAndOrthonormality) {
  for (int trial = 0; trial < 20; ++trial) {
    const DenseMatrix a = gaussian(50, 10);
    const auto f = qr_economy(a);
    EXPECT_LE(relative_error(DenseMatrix(f.q * f.r), a), 1e-12);
    EXPECT_LE((f.q.transpose() * f.q - DenseMatrix::Identity(10, 10)).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_EQ(DenseMatrix(f.r.triangularView<Eigen::StrictlyLower>()).norm(), 0.0);
  }
}

TEST(QrEconomy, RejectsWideInput) { EXPECT_THROW(qr_economy(gaussian(2, 3)), DimensionError); }

TEST(QrColumnPivoted, RankOneByConstruction) {
  DenseMatrix a(2, 2);
  a << 1, 2, 2, 4;
  EXPECT_EQ(qr_column_pivoted(a, 1e-10).numerical_rank, 1);
}

TEST(QrColumnPivoted, FullRankMatchesSvd) {
  const DenseMatrix a = gaussian(20, 5);
  const auto f = qr_column_pivoted(a, 1e-10);
  EXPECT_EQ(f.numerical_rank, svd_rank(a));
  EXPECT_EQ(f.numerical_rank, 5);
}

TEST(QrColumnPivoted, TinyDiagonalTruncated) {
  DenseMatrix a(2, 2);
  a << 1, 0, 0, 1e-14;
  EXPECT_EQ(qr_column_pivoted(a, 1e-10).numerical_rank, 1);
}

TEST(QrColumnPivoted, ReconstructionAndMonotoneDiagonal) {
  for (int trial = 0; trial < 20; ++trial) {
    const DenseMatrix a = ranked(30, 12, 1 + trial % 12);
    const auto f = qr_column_pivoted(a, 1e-10);
    EXPECT_LE(relative_error(DenseMatrix(f.q * f.r), DenseMatrix(a * f.permutation)), 1e-12);
    for (Index i = 1; i < f.r.rows(); ++i) EXPECT_LE(std::abs(f.r(i, i)), std::abs(f.r(i - 1, i - 1)) * (1 + 1e-12));
    EXPECT_EQ(f.numerical_rank, svd_rank(a));
  }
}

TEST(QrColumnPivoted, ToleranceOutsideUnitIntervalRejected) {
  EXPECT_THROW(qr_column_pivoted(gaussian(3, 3), 0.0), DomainError);
  EXPECT_THROW(qr_column_pivoted(gaussian(3, 3), 1.0), DomainError);
}

TEST(MinNormLeastSquares, Identity) {
  const Vector b = (Vector(2) << 3, -1).finished();
  const auto s = solve_least_squares_min_norm(DenseMatrix::Identity(2, 2), b);
  EXPECT_LT((s.solution - b).norm(), 1e-15);
}

TEST(MinNormLeastSquares, RankOneHand) {
  DenseMatrix a(2, 2);
  a << 1, 1, 1, 1;
  const auto s = solve_least_squares_min_norm(a, Vector::Ones(2));
  EXPECT_NEAR(s.solution(0), 0.5, 1e-14);
  EXPECT_NEAR(s.solution(1), 0.5, 1e-14);
  EXPECT_EQ(s.rank, 1);
}

TEST(MinNormLeastSquares, MatchesSvdPseudoinverse) {
  for (int trial = 0; trial < 30; ++trial) {
    const Index m = 10 + trial * 3 % 90;
    const Index n = 2 + trial % 29;
    const Index r = 1 + trial % std::min(m, n);
    const DenseMatrix a = ranked(m, n, r);
    const Vector b = gaussian(m, 1);
    const auto s = solve_least_squares_min_norm(a, b);
    EXPECT_LE(relative_error(s.solution, Vector(svd_pinv(a) * b)), 1e-8) << m << "x" << n << " rank " << r;
  }
}

TEST(MinNormLeastSquares, RankDeficient30x8) {
  const DenseMatrix a = ranked(30, 8, 4);
  const Vector b = gaussian(30, 1);
  const auto s = solve_least_squares_min_norm(a, b);
  EXPECT_EQ(s.rank, 4);
  EXPECT_LE(relative_error(s.solution, Vector(svd_pinv(a) * b)), 1e-8);
}

TEST(MinNormLeastSquares, ZeroMatrixFlagged) {
  const auto s = solve_least_squares_min_norm(DenseMatrix::Zero(3, 2), Vector::Ones(3));
  EXPECT_TRUE(s.degenerate);
  EXPECT_EQ(s.solution.norm(), 0.0);
}

TEST(TriangularSolve, UpperHand) {
  DenseMatrix r(2, 2);
  r << 2, 1, 0, 4;
  const Vector x = triangular_solve(r, (Vector(2) << 4, 8).finished(), Triangle::upper);
  EXPECT_NEAR(x(0), 1.0, 1e-15);
  EXPECT_NEAR(x(1), 2.0, 1e-15);
}

TEST(TriangularSolve, IdentityAndLower) {
  const Vector b = gaussian(4, 1);
  EXPECT_EQ(triangular_solve(DenseMatrix::Identity(4, 4), b, Triangle::upper), b);
  DenseMatrix l(2, 2);
  l << 3, 0, 1, 2;
  const Vector x = triangular_solve(l, (Vector(2) << 3, 3).finished(), Triangle::lower);
  EXPECT_NEAR(x(0), 1.0, 1e-15);
  EXPECT_NEAR(x(1), 1.0, 1e-15);
}

TEST(TriangularSolve, ZeroDiagonalThrows) {
  DenseMatrix r(2, 2);
  r << 1, 1, 0, 0;
  EXPECT_THROW(triangular_solve(r, Vector::Ones(2), Triangle::upper), SingularError);
}

TEST(Cg, Diagonal) {
  const Vector d = (Vector(2) << 1, 2).finished();
  const auto rep = cg_solve([&](const Vector& v) { return Vector(d.cwiseProduct(v)); }, (Vector(2) << 1, 2).finished(), 1e-12, 10);
  EXPECT_TRUE(rep.converged);
  EXPECT_LE(rep.iterations, 2);
  EXPECT_LT((rep.solution - Vector::Ones(2)).norm(), 1e-12);
}

TEST(Cg, TwoByTwoHand) {
  DenseMatrix a(2, 2);
  a << 2, 1, 1, 2;
  const auto rep = cg_solve([&](const Vector& v) { return Vector(a * v); }, (Vector(2) << 3, 3).finished(), 1e-12, 10);
  EXPECT_LT((rep.solution - Vector::Ones(2)).norm(), 1e-12);
}

TEST(Cg, ZeroRightHandSide) {
  const auto rep = cg_solve([](const Vector& v) { return v; }, Vector::Zero(5), 1e-10, 10);
  EXPECT_EQ(rep.iterations, 0);
  EXPECT_EQ(rep.solution.norm(), 0.0);
  EXPECT_TRUE(rep.converged);
}

DenseMatrix spd_with_spectrum(Index p, double kappa) {
  Eigen::HouseholderQR<DenseMatrix> qr(gaussian(p, p));
  const DenseMatrix q = qr.householderQ();
  Vector ev(p);
  for (Index i = 0; i < p; ++i) ev(i) = std::pow(kappa, static_cast<double>(i) / static_cast<double>(p - 1));
  return q * ev.asDiagonal() * q.transpose();
}

TEST(Cg, SpdWithinPPlusFive) {
  for (Index p : {5, 20, 50}) {
    const DenseMatrix a = spd_with_spectrum(p, 10.0);
    const Vector b = gaussian(p, 1);
    const auto rep = cg_solve([&](const Vector& v) { return Vector(a * v); }, b, 1e-10, p + 5);
    EXPECT_TRUE(rep.converged) << p;
    EXPECT_LE((a * rep.solution - b).norm(), 1e-10 * b.norm() * 1.01) << p;
  }
}

// Rounding breaks finite termination once the spectrum spreads, but the
// residual target is still met.
TEST(Cg, IllConditionedStillConverges) {
  for (double kappa : {1e2, 1e3, 1e4}) {
    const DenseMatrix a = spd_with_spectrum(50, kappa);
    const Vector b = gaussian(50, 1);
    const auto rep = cg_solve([&](const Vector& v) { return Vector(a * v); }, b, 1e-10, 500);
    EXPECT_TRUE(rep.converged) << kappa;
    EXPECT_LE((a * rep.solution - b).norm(), 1e-9 * b.norm()) << kappa;
  }
}

TEST(Cg, ReportsNonConvergenceWithBestIterate) {
  const DenseMatrix m = gaussian(30, 30);
  const DenseMatrix a = m * m.transpose() + 1e-3 * DenseMatrix::Identity(30, 30);
  const Vector b = gaussian(30, 1);
  const auto rep = cg_solve([&](const Vector& v) { return Vector(a * v); }, b, 1e-14, 3);
  EXPECT_FALSE(rep.converged);
  EXPECT_EQ(rep.iterations, 3);
  EXPECT_LE(rep.final_relative_residual, 1.0);
}

TEST(PseudoApply, OneByTwoHand) {
  DenseMatrix bt(2, 1);
  bt << 1, 1;
  const Vector y = pseudo_apply_underdetermined(qr_economy(bt), (Vector(1) << 2).finished());
  EXPECT_NEAR(y(0), 1.0, 1e-15);
  EXPECT_NEAR(y(1), 1.0, 1e-15);
}

TEST(PseudoApply, Identity) {
  const Vector z = gaussian(4, 1);
  EXPECT_LT((pseudo_apply_underdetermined(qr_economy(DenseMatrix::Identity(4, 4)), z) - z).norm(), 1e-15);
}

// Pseudoinverse consistency against an SVD null-space basis, up to 50 x 100.
TEST(PseudoApply, ConsistencyAgainstSvdNullSpace) {
  for (auto [k, n] : std::vector<std::pair<Index, Index>>{{9, 18}, {20, 35}, {50, 100}}) {
    const DenseMatrix b = gaussian(k, n);
    const Vector z = gaussian(k, 1);
    const Vector y = pseudo_apply_underdetermined(qr_economy(b.transpose()), z);
    EXPECT_LE((b * y - z).norm() / z.norm(), 1e-10);
    Eigen::JacobiSVD<DenseMatrix> svd(b, Eigen::ComputeFullV);
    const DenseMatrix null = svd.matrixV().rightCols(n - k);
    EXPECT_LE((null.transpose() * y).norm() / y.norm(), 1e-10);
  }
}

TEST(PseudoApply, RankDeficientSignals) {
  DenseMatrix bt(3, 2);
  bt << 1, 2, 1, 2, 1, 2;
  EXPECT_THROW(pseudo_apply_underdetermined(qr_economy(bt), Vector::Ones(2)), SingularError);
}

TEST(UnderdeterminedPseudoinverse, SparseFullRankMatchesSvd) {
  const DenseMatrix dense = gaussian(12, 30);
  const SparseMatrix b = dense.sparseView();
  const UnderdeterminedPseudoinverse p(b);
  EXPECT_TRUE(p.full_row_rank());
  const DenseMatrix pinv = svd_pinv(dense);
  const Vector z = gaussian(12, 1);
  const Vector y = gaussian(30, 1);
  EXPECT_LE(relative_error(p.apply(z), Vector(pinv * z)), 1e-10);
  EXPECT_LE(relative_error(p.apply_transpose(y), Vector(pinv.transpose() * y)), 1e-10);
}

TEST(UnderdeterminedPseudoinverse, RankDeficientFallbackMatchesSvd) {
  const DenseMatrix dense = ranked(10, 25, 7);
  const UnderdeterminedPseudoinverse p(SparseMatrix(dense.sparseView()));
  EXPECT_EQ(p.rank(), 7);
  const DenseMatrix pinv = svd_pinv(dense);
  const Vector z = gaussian(10, 1);
  const Vector y = gaussian(25, 1);
  EXPECT_LE(relative_error(p.apply(z), Vector(pinv * z)), 1e-8);
  EXPECT_LE(relative_error(p.apply_transpose(y), Vector(pinv.transpose() * y)), 1e-8);
}
