// Dense and sparse linear-algebra kernels shared by the metric and solver
// layers: (pivoted) QR, minimum-norm least squares, triangular solves,
// conjugate gradient and pseudoinverse application for short-wide systems.
//
// Storage is Eigen (column-major). All reals are double.

#ifndef NATGRAD_NUMKIT_HPP
#define NATGRAD_NUMKIT_HPP

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace natgrad {

using Index = Eigen::Index;
using Vector = Eigen::VectorXd;
using DenseMatrix = Eigen::MatrixXd;
using SparseMatrix = Eigen::SparseMatrix<double>;  // compressed column
using Triplet = Eigen::Triplet<double>;

struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct DomainError : std::domain_error {
  using std::domain_error::domain_error;
};

// A triangular factor has an exactly zero (or numerically dead) diagonal.
struct SingularError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline constexpr double kDefaultRankTol = 1e-10;

inline void require_finite(const DenseMatrix& a, const char* what) {
  if (!a.allFinite()) throw DomainError(std::string(what) + ": non-finite entries");
}

struct QRFactors {
  DenseMatrix q;  // k x p, orthonormal columns
  DenseMatrix r;  // p x p, upper triangular
};

struct PivotedQRFactors {
  DenseMatrix q;  // m x min(m,n)
  DenseMatrix r;  // min(m,n) x n, upper trapezoidal
  Eigen::PermutationMatrix<Eigen::Dynamic, Eigen::Dynamic, int> permutation;  // a * P = q * r
  Index numerical_rank = 0;
  double truncation_tolerance = kDefaultRankTol;

  // Index list form of the permutation: column j of a*P is column perm[j] of a.
  [[nodiscard]] std::vector<Index> permutation_indices() const {
    std::vector<Index> out(static_cast<std::size_t>(permutation.size()));
    for (Index j = 0; j < permutation.size(); ++j) out[j] = permutation.indices()[j];
    return out;
  }
};

struct CgReport {
  Vector solution;
  Index iterations = 0;
  double final_relative_residual = 0.0;
  bool converged = false;
};

struct LeastSquaresSolution {
  Vector solution;
  Index rank = 0;
  bool degenerate = false;  // input was the zero matrix
};

enum class Triangle { upper, lower };

/// Economy QR of a tall matrix: a = q r with q k x p orthonormal.
inline QRFactors qr_economy(const DenseMatrix& a) {
  const Index k = a.rows(), p = a.cols();
  if (k < p) throw DimensionError("qr_economy: requires rows >= cols");
  require_finite(a, "qr_economy");
  Eigen::HouseholderQR<DenseMatrix> qr(a);
  QRFactors out;
  out.q = qr.householderQ() * DenseMatrix::Identity(k, p);
  out.r = qr.matrixQR().topRows(p).triangularView<Eigen::Upper>();
  return out;
}

/// Rank from a pivoted R: count of leading |R_ii| > tol * |R_00|.
inline Index numerical_rank_from_r(const DenseMatrix& r, double tol) {
  const Index n = std::min(r.rows(), r.cols());
  if (n == 0) return 0;
  const double lead = std::abs(r(0, 0));
  if (lead == 0.0) return 0;
  Index rank = 0;
  for (Index i = 0; i < n; ++i) {
    if (std::abs(r(i, i)) > tol * lead) rank = i + 1;
  }
  return rank;
}

/// Column-pivoted (rank-revealing) QR, a * P = q * r.
inline PivotedQRFactors qr_column_pivoted(const DenseMatrix& a, double tol = kDefaultRankTol) {
  if (!(tol > 0.0 && tol < 1.0)) throw DomainError("qr_column_pivoted: tol must lie in (0,1)");
  require_finite(a, "qr_column_pivoted");
  const Index m = a.rows(), n = a.cols(), d = std::min(m, n);
  Eigen::ColPivHouseholderQR<DenseMatrix> qr(a);
  PivotedQRFactors out;
  out.q = qr.householderQ() * DenseMatrix::Identity(m, d);
  out.r = qr.matrixQR().topRows(d).triangularView<Eigen::Upper>();
  out.permutation = qr.colsPermutation();
  out.truncation_tolerance = tol;
  out.numerical_rank = numerical_rank_from_r(out.r, tol);
  return out;
}

inline Vector triangular_solve(const DenseMatrix& r, const Vector& b, Triangle mode) {
  if (r.rows() != r.cols() || r.rows() != b.size()) throw DimensionError("triangular_solve: shape mismatch");
  for (Index i = 0; i < r.rows(); ++i) {
    if (r(i, i) == 0.0) throw SingularError("triangular_solve: zero diagonal at " + std::to_string(i));
  }
  if (mode == Triangle::upper) return r.triangularView<Eigen::Upper>().solve(b);
  return r.triangularView<Eigen::Lower>().solve(b);
}

/// Minimum-norm least squares by two QR factorizations. With a*P = Q R and
/// numerical rank r, the truncated R~ (r x p) is factored as R~^T = Q1 R1 so
/// that eta = P Q1 R1^{-T} Q~^T b.
inline LeastSquaresSolution solve_least_squares_min_norm(const DenseMatrix& a, const Vector& b,
                                                         double tol = kDefaultRankTol) {
  if (a.rows() != b.size()) throw DimensionError("solve_least_squares_min_norm: rows(a) != size(b)");
  LeastSquaresSolution out;
  out.solution = Vector::Zero(a.cols());
  if (a.cols() == 0) return out;
  if (a.cwiseAbs().maxCoeff() == 0.0) {
    out.degenerate = true;
    return out;
  }
  const PivotedQRFactors f = qr_column_pivoted(a, tol);
  const Index r = f.numerical_rank;
  out.rank = r;
  const Vector qtb = f.q.leftCols(r).transpose() * b;
  const DenseMatrix rt = f.r.topRows(r).transpose();  // p x r, tall
  const QRFactors second = qr_economy(rt);
  const Vector z = triangular_solve(second.r.transpose(), qtb, Triangle::lower);
  out.solution = f.permutation * (second.q * z);
  return out;
}

/// Minimum-norm solution of B y = zeta from the economy QR of B^T:
/// B^+ = Q R^{-T}.
inline Vector pseudo_apply_underdetermined(const QRFactors& bt, const Vector& zeta) {
  if (bt.r.rows() != zeta.size()) throw DimensionError("pseudo_apply_underdetermined: size mismatch");
  const double scale = bt.r.diagonal().cwiseAbs().maxCoeff();
  for (Index i = 0; i < bt.r.rows(); ++i) {
    if (std::abs(bt.r(i, i)) <= std::numeric_limits<double>::epsilon() * scale * bt.q.rows()) {
      throw SingularError("pseudo_apply_underdetermined: B is row-rank deficient");
    }
  }
  return bt.q * triangular_solve(bt.r.transpose(), zeta, Triangle::lower);
}

using LinearAction = std::function<Vector(const Vector&)>;

/// Plain conjugate gradient for a symmetric positive (semi)definite action.
/// Returns the iterate with the smallest recursive residual when max_iter is
/// exhausted.
inline CgReport cg_solve(const LinearAction& apply_a, const Vector& b, double tol, Index max_iter) {
  if (!(tol > 0.0)) throw DomainError("cg_solve: tol must be positive");
  CgReport rep;
  rep.solution = Vector::Zero(b.size());
  const double bnorm = b.norm();
  if (bnorm == 0.0) {
    rep.converged = true;
    return rep;
  }
  Vector x = Vector::Zero(b.size());
  Vector r = b;
  Vector p = r;
  double rr = r.squaredNorm();
  double best = 1.0;
  Vector best_x = x;
  for (Index it = 0; it < max_iter; ++it) {
    const Vector ap = apply_a(p);
    const double pap = p.dot(ap);
    if (!(pap > 0.0)) break;  // hit the null space of a semidefinite operator
    const double alpha = rr / pap;
    x += alpha * p;
    r -= alpha * ap;
    const double rr_new = r.squaredNorm();
    rep.iterations = it + 1;
    const double rel = std::sqrt(rr_new) / bnorm;
    if (rel < best) {
      best = rel;
      best_x = x;
    }
    if (rel <= tol) break;
    p = r + (rr_new / rr) * p;
    rr = rr_new;
  }
  rep.solution = best_x;
  rep.final_relative_residual = best;
  rep.converged = best <= tol;
  return rep;
}

/// Pseudoinverse of a short-wide sparse matrix B (rows <= cols), applied
/// without forming it. Full-row-rank B goes through a sparse LDL^T of B B^T
/// (B^+ = B^T (B B^T)^{-1}). Rank-deficient B falls back to the
/// dense two-QR construction B^T P = Q~ R2^T Q2^T, B^+ = Q~ R2^{-1} Q2^T P^T.
enum class RankHint { detect, full };

class UnderdeterminedPseudoinverse {
 public:
  UnderdeterminedPseudoinverse() = default;

  explicit UnderdeterminedPseudoinverse(const SparseMatrix& b, double rank_tol = kDefaultRankTol,
                                        RankHint hint = RankHint::detect)
      : rows_(b.rows()), cols_(b.cols()) {
    if (rows_ > cols_) throw DimensionError("UnderdeterminedPseudoinverse: B must be short-wide");
    b_ = b;
    b_.makeCompressed();
    const SparseMatrix gram = b_ * b_.transpose();
    auto chol = std::make_shared<Eigen::SimplicialLDLT<SparseMatrix>>(gram);
    bool ok = chol->info() == Eigen::Success && rows_ > 0;
    if (ok && hint == RankHint::detect) {
      const Vector d = chol->vectorD();
      const double lead = d.cwiseAbs().maxCoeff();
      ok = lead > 0.0 && d.minCoeff() > rank_tol * lead;
    }
    if (ok) {
      gram_ = std::move(chol);
      rank_ = rows_;
      return;
    }
    b_ = SparseMatrix();
    build_dense_fallback(DenseMatrix(b.transpose()), rank_tol);
  }

  [[nodiscard]] Index rows() const { return rows_; }
  [[nodiscard]] Index cols() const { return cols_; }
  [[nodiscard]] Index rank() const { return rank_; }
  [[nodiscard]] bool full_row_rank() const { return rank_ == rows_; }

  /// y = B^+ zeta (minimum-norm solution, or least-squares when zeta is
  /// outside range(B)).
  [[nodiscard]] Vector apply(const Vector& zeta) const {
    if (zeta.size() != rows_) throw DimensionError("B^+ apply: size mismatch");
    if (gram_) return b_.transpose() * gram_->solve(zeta);
    const Vector pz = perm_.transpose() * zeta;
    const Vector t = q2_.transpose() * pz;
    const Vector s = r2_.triangularView<Eigen::Upper>().solve(t);
    return qt_ * s;
  }

  /// x = (B^+)^T y.
  [[nodiscard]] Vector apply_transpose(const Vector& y) const {
    if (y.size() != cols_) throw DimensionError("B^+ transpose apply: size mismatch");
    if (gram_) return gram_->solve(b_ * y);
    const Vector t = qt_.transpose() * y;
    const Vector s = r2_.transpose().triangularView<Eigen::Lower>().solve(t);
    return perm_ * (q2_ * s);
  }

 private:
  void build_dense_fallback(const DenseMatrix& bt, double tol) {
    const PivotedQRFactors f = qr_column_pivoted(bt, tol);
    rank_ = f.numerical_rank;
    perm_ = f.permutation;
    qt_ = f.q.leftCols(rank_);
    const DenseMatrix rt = f.r.topRows(rank_).transpose();  // rows_ x rank
    const QRFactors second = qr_economy(rt);
    q2_ = second.q;
    r2_ = second.r;
  }

  Index rows_ = 0;
  Index cols_ = 0;
  Index rank_ = 0;
  SparseMatrix b_;
  std::shared_ptr<Eigen::SimplicialLDLT<SparseMatrix>> gram_;
  Eigen::PermutationMatrix<Eigen::Dynamic, Eigen::Dynamic, int> perm_;
  DenseMatrix qt_, q2_, r2_;
};

inline double relative_error(const Vector& got, const Vector& want) {
  const double denom = want.norm();
  return denom == 0.0 ? got.norm() : (got - want).norm() / denom;
}

inline double relative_error(const DenseMatrix& got, const DenseMatrix& want) {
  const double denom = want.norm();
  return denom == 0.0 ? got.norm() : (got - want).norm() / denom;
}

}  // namespace natgrad

#endif  // NATGRAD_NUMKIT_HPP
