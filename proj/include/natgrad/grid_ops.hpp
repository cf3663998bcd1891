// Uniform-grid difference operators: central differences, the staggered
// zero-Neumann gradient and its Laplacian, cached elliptic solves, and the
// density-weighted divergence used by the Wasserstein metric.
//
// Grid values live on interior nodes x_i = lower + (i+1) * h, i < n, with
// h = (upper - lower) / (n + 1). Two-dimensional fields are flattened with
// axis 0 outermost: index = i * n1 + j.

#ifndef NATGRAD_GRID_OPS_HPP
#define NATGRAD_GRID_OPS_HPP

#include "natgrad/numkit.hpp"

#include <Eigen/SparseCholesky>

#include <array>
#include <memory>

namespace natgrad {

struct Grid {
  int dim = 1;
  std::array<Index, 2> interior_counts{1, 1};
  std::array<double, 2> lower{0.0, 0.0};
  std::array<double, 2> upper{1.0, 1.0};

  static Grid line(Index n, double lo, double hi) {
    Grid g;
    g.dim = 1;
    g.interior_counts = {n, 1};
    g.lower = {lo, 0.0};
    g.upper = {hi, 1.0};
    g.validate();
    return g;
  }

  static Grid plane(Index n0, Index n1, std::array<double, 2> lo, std::array<double, 2> hi) {
    Grid g;
    g.dim = 2;
    g.interior_counts = {n0, n1};
    g.lower = lo;
    g.upper = hi;
    g.validate();
    return g;
  }

  // Grid whose node spacing is given directly (extents derived).
  static Grid plane_with_spacing(Index n0, Index n1, double h0, double h1) {
    return plane(n0, n1, {0.0, 0.0}, {h0 * static_cast<double>(n0 + 1), h1 * static_cast<double>(n1 + 1)});
  }

  void validate() const {
    if (dim != 1 && dim != 2) throw DomainError("Grid: dim must be 1 or 2");
    for (int a = 0; a < dim; ++a) {
      if (interior_counts[a] < 1) throw DomainError("Grid: interior counts must be >= 1");
      if (!(upper[a] > lower[a])) throw DomainError("Grid: empty extent");
    }
  }

  [[nodiscard]] Index size() const { return dim == 1 ? interior_counts[0] : interior_counts[0] * interior_counts[1]; }

  [[nodiscard]] double spacing(int axis) const {
    return (upper[axis] - lower[axis]) / static_cast<double>(interior_counts[axis] + 1);
  }

  [[nodiscard]] double coordinate(int axis, Index i) const {
    return lower[axis] + static_cast<double>(i + 1) * spacing(axis);
  }

  [[nodiscard]] double cell_volume() const { return dim == 1 ? spacing(0) : spacing(0) * spacing(1); }

  // C_n is singular exactly for odd n, so the central-difference divergence
  // loses one rank when every axis has an odd interior count.
  [[nodiscard]] bool all_interior_counts_odd() const {
    for (int a = 0; a < dim; ++a) {
      if (interior_counts[a] % 2 == 0) return false;
    }
    return true;
  }

  bool operator==(const Grid&) const = default;
};

inline SparseMatrix sparse_identity(Index n) {
  SparseMatrix id(n, n);
  id.setIdentity();
  return id;
}

inline SparseMatrix kron(const SparseMatrix& a, const SparseMatrix& b) {
  std::vector<Triplet> t;
  t.reserve(static_cast<std::size_t>(a.nonZeros() * b.nonZeros()));
  for (Index ca = 0; ca < a.outerSize(); ++ca) {
    for (SparseMatrix::InnerIterator ia(a, ca); ia; ++ia) {
      for (Index cb = 0; cb < b.outerSize(); ++cb) {
        for (SparseMatrix::InnerIterator ib(b, cb); ib; ++ib) {
          t.emplace_back(ia.row() * b.rows() + ib.row(), ia.col() * b.cols() + ib.col(), ia.value() * ib.value());
        }
      }
    }
  }
  SparseMatrix out(a.rows() * b.rows(), a.cols() * b.cols());
  out.setFromTriplets(t.begin(), t.end());
  return out;
}

/// C_n: +1 on the superdiagonal, -1 on the subdiagonal (zero-Dirichlet ends).
inline SparseMatrix central_difference_matrix(Index n) {
  if (n < 1) throw DomainError("central_difference_matrix: n must be >= 1");
  std::vector<Triplet> t;
  for (Index i = 0; i + 1 < n; ++i) {
    t.emplace_back(i, i + 1, 1.0);
    t.emplace_back(i + 1, i, -1.0);
  }
  SparseMatrix c(n, n);
  c.setFromTriplets(t.begin(), t.end());
  return c;
}

/// Forward differences between neighbouring nodes, (n-1) x n, scaled by 1/h.
inline SparseMatrix forward_difference_matrix(Index n, double h) {
  std::vector<Triplet> t;
  for (Index i = 0; i + 1 < n; ++i) {
    t.emplace_back(i, i, -1.0 / h);
    t.emplace_back(i, i + 1, 1.0 / h);
  }
  SparseMatrix d(std::max<Index>(n - 1, 0), n);
  d.setFromTriplets(t.begin(), t.end());
  return d;
}

/// Staggered zero-Neumann gradient: node values to interior edges. The
/// constant field is in the kernel exactly.
inline SparseMatrix neumann_gradient(const Grid& grid) {
  if (grid.dim == 1) return forward_difference_matrix(grid.interior_counts[0], grid.spacing(0));
  const Index n0 = grid.interior_counts[0], n1 = grid.interior_counts[1];
  const SparseMatrix gx = kron(forward_difference_matrix(n0, grid.spacing(0)), sparse_identity(n1));
  const SparseMatrix gy = kron(sparse_identity(n0), forward_difference_matrix(n1, grid.spacing(1)));
  std::vector<Triplet> t;
  for (Index c = 0; c < gx.outerSize(); ++c) {
    for (SparseMatrix::InnerIterator it(gx, c); it; ++it) t.emplace_back(it.row(), it.col(), it.value());
  }
  for (Index c = 0; c < gy.outerSize(); ++c) {
    for (SparseMatrix::InnerIterator it(gy, c); it; ++it) t.emplace_back(gx.rows() + it.row(), it.col(), it.value());
  }
  SparseMatrix g(gx.rows() + gy.rows(), grid.size());
  g.setFromTriplets(t.begin(), t.end());
  return g;
}

enum class EllipticKind { h1, poisson_deflated };

/// Gradient, Laplacian and factorized elliptic operators on one grid.
/// Immutable once built; copies share the factorizations.
class DifferentialOperatorSet {
 public:
  explicit DifferentialOperatorSet(const Grid& grid) : grid_(grid) {
    grid.validate();
    grad_ = neumann_gradient(grid);
    grad_t_ = grad_.transpose();
    const SparseMatrix gtg = grad_t_ * grad_;
    laplacian_ = -gtg;
    const Index k = grid.size();

    auto h1 = std::make_shared<Eigen::SimplicialLLT<SparseMatrix>>();
    h1->compute(sparse_identity(k) + gtg);
    if (h1->info() != Eigen::Success) throw SingularError("DifferentialOperatorSet: I + G^T G factorization failed");
    h1_ = std::move(h1);

    // Pin node 0: the reduced Neumann Laplacian is SPD and, for mean-zero
    // right-hand sides, the dropped equation is implied by the others.
    if (k > 1) {
      const SparseMatrix reduced = gtg.bottomRightCorner(k - 1, k - 1);
      auto pin = std::make_shared<Eigen::SimplicialLDLT<SparseMatrix>>();
      pin->compute(reduced);
      if (pin->info() != Eigen::Success) throw SingularError("DifferentialOperatorSet: deflated Poisson factorization failed");
      poisson_ = std::move(pin);
    }
  }

  [[nodiscard]] const Grid& grid() const { return grid_; }
  [[nodiscard]] const SparseMatrix& grad_neumann() const { return grad_; }
  [[nodiscard]] const SparseMatrix& grad_neumann_transpose() const { return grad_t_; }
  [[nodiscard]] const SparseMatrix& laplacian_neumann() const { return laplacian_; }
  [[nodiscard]] Index edge_count() const { return grad_.rows(); }

  [[nodiscard]] Vector grad(const Vector& v) const { return grad_ * v; }
  [[nodiscard]] Vector grad_transpose(const Vector& w) const { return grad_t_ * w; }

  [[nodiscard]] Vector apply_elliptic_inverse(EllipticKind kind, const Vector& v) const {
    if (v.size() != grid_.size()) throw DimensionError("apply_elliptic_inverse: size mismatch");
    if (kind == EllipticKind::h1) return h1_->solve(v);
    const Index k = v.size();
    Vector centered = v.array() - v.mean();
    Vector w = Vector::Zero(k);
    if (k > 1) w.tail(k - 1) = poisson_->solve(centered.tail(k - 1));
    w.array() -= w.mean();
    return w;
  }

 private:
  Grid grid_;
  SparseMatrix grad_, grad_t_, laplacian_;
  std::shared_ptr<const Eigen::SimplicialLLT<SparseMatrix>> h1_;
  std::shared_ptr<const Eigen::SimplicialLDLT<SparseMatrix>> poisson_;
};

inline Vector apply_elliptic_inverse(const DifferentialOperatorSet& ops, EllipticKind kind, const Vector& v) {
  return ops.apply_elliptic_inverse(kind, v);
}

/// Unweighted central-difference derivative blocks A_x, A_y.
inline std::vector<SparseMatrix> central_difference_blocks(const Grid& grid) {
  if (grid.dim == 1) {
    return {SparseMatrix(central_difference_matrix(grid.interior_counts[0]) * (1.0 / (2.0 * grid.spacing(0))))};
  }
  const Index n0 = grid.interior_counts[0], n1 = grid.interior_counts[1];
  SparseMatrix ax = kron(central_difference_matrix(n0), sparse_identity(n1)) * (1.0 / (2.0 * grid.spacing(0)));
  SparseMatrix ay = kron(sparse_identity(n0), central_difference_matrix(n1)) * (1.0 / (2.0 * grid.spacing(1)));
  return {ax, ay};
}

/// B = -[A_x D, A_y D] with D = diag(rho^mobility_exponent), together with
/// the factorization used to apply B^+ and (B^+)^T.
class WeightedDivergence {
 public:
  WeightedDivergence(const Grid& grid, const Vector& rho, double mobility_exponent = 0.5,
                     double rank_tol = kDefaultRankTol)
      : grid_(grid), rho_(rho), mobility_exponent_(mobility_exponent) {
    grid.validate();
    if (rho.size() != grid.size()) throw DimensionError("WeightedDivergence: rho size != grid size");
    if (!rho.allFinite() || rho.minCoeff() <= 0.0) throw DomainError("WeightedDivergence: density must be positive");
    if (mobility_exponent < 0.0 || mobility_exponent > 1.0) throw DomainError("WeightedDivergence: mobility exponent outside [0,1]");
    odd_interior_ = grid.all_interior_counts_odd();

    const Index k = grid.size();
    const Vector weight = mobility_exponent == 0.0 ? Vector::Ones(k) : Vector(rho.array().pow(mobility_exponent));
    const auto blocks = central_difference_blocks(grid);
    std::vector<Triplet> t;
    Index offset = 0;
    for (const SparseMatrix& a : blocks) {
      for (Index c = 0; c < a.outerSize(); ++c) {
        for (SparseMatrix::InnerIterator it(a, c); it; ++it) {
          t.emplace_back(it.row(), offset + it.col(), -it.value() * weight[it.col()]);
        }
      }
      offset += a.cols();
    }
    b_.resize(k, offset);
    b_.setFromTriplets(t.begin(), t.end());
    b_.makeCompressed();
    // rho > 0: rank is decided by parity alone, which is more reliable than
    // pivot magnitudes once rho spans many decades
    pinv_ = std::make_shared<UnderdeterminedPseudoinverse>(
        b_, rank_tol, odd_interior_ ? RankHint::detect : RankHint::full);
  }

  [[nodiscard]] const SparseMatrix& b() const { return b_; }
  [[nodiscard]] const Vector& rho_snapshot() const { return rho_; }
  [[nodiscard]] double mobility_exponent() const { return mobility_exponent_; }
  [[nodiscard]] const Grid& grid() const { return grid_; }
  [[nodiscard]] Index rank() const { return pinv_->rank(); }
  [[nodiscard]] bool rank_deficient() const { return !pinv_->full_row_rank(); }
  [[nodiscard]] bool odd_interior_warning() const { return odd_interior_; }

  [[nodiscard]] Vector apply_pinv(const Vector& zeta) const { return pinv_->apply(zeta); }
  [[nodiscard]] Vector apply_pinv_transpose(const Vector& y) const { return pinv_->apply_transpose(y); }
  [[nodiscard]] Vector apply_transpose(const Vector& g) const { return b_.transpose() * g; }
  [[nodiscard]] Vector apply(const Vector& y) const { return b_ * y; }

 private:
  Grid grid_;
  Vector rho_;
  double mobility_exponent_;
  bool odd_interior_ = false;
  SparseMatrix b_;
  std::shared_ptr<const UnderdeterminedPseudoinverse> pinv_;
};

inline WeightedDivergence build_weighted_divergence(const Grid& grid, const Vector& rho, double mobility_exponent = 0.5) {
  return WeightedDivergence(grid, rho, mobility_exponent);
}

}  // namespace natgrad

#endif  // NATGRAD_GRID_OPS_HPP
