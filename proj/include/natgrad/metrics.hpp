// Metric operators for the unified least-squares NGD problem
//
//   eta = argmin || (L^T)^+ g + L Z eta ||,   G_L = (L Z)^T (L Z).
//
// Each metric exposes v -> L v, g -> (L^T)^+ g and w -> L^T w. Operators are
// immutable and shared; refresh() returns a new operator for state-dependent
// kinds and the same pointer otherwise.

#ifndef NATGRAD_METRICS_HPP
#define NATGRAD_METRICS_HPP

#include "natgrad/grid_ops.hpp"
#include "natgrad/numkit.hpp"

#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace natgrad {

enum class MetricFamily { l2, fisher_rao, sobolev, wasserstein };

struct MetricKind {
  MetricFamily family = MetricFamily::l2;
  int s = 1;                 // sobolev order, +1 or -1
  bool homogeneous = false;  // sobolev only
  double mobility_exponent = 0.5;

  static MetricKind l2() { return {}; }
  static MetricKind fisher_rao() { return {MetricFamily::fisher_rao}; }
  static MetricKind sobolev(int s, bool homogeneous) { return {MetricFamily::sobolev, s, homogeneous}; }
  static MetricKind wasserstein(double mobility = 0.5) { return {MetricFamily::wasserstein, 1, false, mobility}; }

  [[nodiscard]] bool state_dependent() const {
    return family == MetricFamily::fisher_rao || family == MetricFamily::wasserstein;
  }

  void validate() const {
    if (family == MetricFamily::sobolev && s != 1 && s != -1) throw DomainError("sobolev order must be +1 or -1");
    if (family == MetricFamily::wasserstein && (mobility_exponent < 0.0 || mobility_exponent > 1.0)) {
      throw DomainError("mobility exponent outside [0,1]");
    }
  }

  [[nodiscard]] std::string name() const {
    switch (family) {
      case MetricFamily::l2: return "l2";
      case MetricFamily::fisher_rao: return "fisher-rao";
      case MetricFamily::sobolev: return std::string(homogeneous ? "hdot" : "h") + (s > 0 ? "1" : "-1");
      case MetricFamily::wasserstein:
        if (mobility_exponent == 0.5) return "w2";
        return "w2:k=" + format_real(mobility_exponent);
    }
    return "?";
  }

  bool operator==(const MetricKind&) const = default;

 private:
  static std::string format_real(double x) {
    std::string out = std::to_string(x);
    while (out.size() > 1 && out.back() == '0') out.pop_back();
    if (!out.empty() && out.back() == '.') out.pop_back();
    return out;
  }
};

/// "l2", "fisher-rao", "h1", "h-1", "hdot1", "hdot-1", "w2", "w2:k=<mobility>".
inline MetricKind parse_metric_kind(const std::string& text) {
  if (text == "l2") return MetricKind::l2();
  if (text == "fisher-rao") return MetricKind::fisher_rao();
  if (text == "h1") return MetricKind::sobolev(1, false);
  if (text == "h-1") return MetricKind::sobolev(-1, false);
  if (text == "hdot1") return MetricKind::sobolev(1, true);
  if (text == "hdot-1") return MetricKind::sobolev(-1, true);
  if (text == "w2") return MetricKind::wasserstein();
  const std::string prefix = "w2:k=";
  if (text.rfind(prefix, 0) == 0) {
    std::size_t used = 0;
    double k = 0.0;
    try {
      k = std::stod(text.substr(prefix.size()), &used);
    } catch (const std::exception&) {
      throw DomainError("bad mobility in metric string: " + text);
    }
    if (used != text.size() - prefix.size()) throw DomainError("bad mobility in metric string: " + text);
    MetricKind kind = MetricKind::wasserstein(k);
    kind.validate();
    return kind;
  }
  throw DomainError("unknown metric: " + text);
}

/// Anything that maps state vectors through L. Implemented by the single-grid
/// MetricOperator and the block-diagonal composite used for multi-source data.
class StateMetric {
 public:
  virtual ~StateMetric() = default;

  [[nodiscard]] virtual Index state_dim() const = 0;
  [[nodiscard]] virtual Index row_dim() const = 0;
  [[nodiscard]] virtual bool state_dependent() const = 0;
  [[nodiscard]] virtual std::string name() const = 0;

  [[nodiscard]] virtual Vector apply_L(const Vector& v) const = 0;
  [[nodiscard]] virtual Vector apply_Lt(const Vector& w) const = 0;
  [[nodiscard]] virtual Vector apply_Lt_pinv(const Vector& g) const = 0;

  /// L^T (L^T)^+ g, the part of g the metric can see.
  [[nodiscard]] Vector project(const Vector& g) const { return apply_Lt(apply_Lt_pinv(g)); }
  [[nodiscard]] Vector apply_LtL(const Vector& v) const { return apply_Lt(apply_L(v)); }

  [[nodiscard]] DenseMatrix apply_L_columns(const DenseMatrix& z) const {
    if (z.rows() != state_dim()) throw DimensionError("apply_L_columns: row count != state dim");
    DenseMatrix y(row_dim(), z.cols());
    for (Index j = 0; j < z.cols(); ++j) y.col(j) = apply_L(z.col(j));
    return y;
  }
};

using MetricPtr = std::shared_ptr<const StateMetric>;

class MetricOperator final : public StateMetric, public std::enable_shared_from_this<MetricOperator> {
 public:
  MetricOperator(const MetricKind& kind, const Grid& grid, const std::optional<Vector>& rho = std::nullopt)
      : kind_(kind), grid_(grid) {
    kind.validate();
    grid.validate();
    if (kind.state_dependent()) {
      if (!rho) throw DomainError("metric " + kind.name() + " needs a density");
      set_density(*rho);
    }
    if (kind.family == MetricFamily::sobolev) ops_ = std::make_shared<const DifferentialOperatorSet>(grid);
  }

  [[nodiscard]] const MetricKind& kind() const { return kind_; }
  [[nodiscard]] const Grid& grid() const { return grid_; }
  [[nodiscard]] const std::optional<Vector>& density() const { return rho_; }
  [[nodiscard]] const WeightedDivergence* divergence() const { return div_.get(); }

  [[nodiscard]] Index state_dim() const override { return grid_.size(); }
  [[nodiscard]] bool state_dependent() const override { return kind_.state_dependent(); }
  [[nodiscard]] std::string name() const override { return kind_.name(); }

  [[nodiscard]] Index row_dim() const override {
    const Index k = grid_.size();
    switch (kind_.family) {
      case MetricFamily::l2:
      case MetricFamily::fisher_rao: return k;
      case MetricFamily::sobolev: return kind_.homogeneous ? ops_->edge_count() : k + ops_->edge_count();
      case MetricFamily::wasserstein: return div_->b().cols();
    }
    return k;
  }

  [[nodiscard]] Vector apply_L(const Vector& v) const override {
    check(v, state_dim());
    switch (kind_.family) {
      case MetricFamily::l2: return v;
      case MetricFamily::fisher_rao: return v.cwiseProduct(inv_sqrt_rho_);
      case MetricFamily::sobolev:
        if (kind_.homogeneous) {
          return kind_.s > 0 ? ops_->grad(v) : ops_->grad(ops_->apply_elliptic_inverse(EllipticKind::poisson_deflated, v));
        }
        return kind_.s > 0 ? stack(v) : stack(ops_->apply_elliptic_inverse(EllipticKind::h1, v));
      case MetricFamily::wasserstein: return div_->apply_pinv(v);
    }
    return v;
  }

  [[nodiscard]] Vector apply_Lt(const Vector& w) const override {
    check(w, row_dim());
    switch (kind_.family) {
      case MetricFamily::l2: return w;
      case MetricFamily::fisher_rao: return w.cwiseProduct(inv_sqrt_rho_);
      case MetricFamily::sobolev: {
        if (kind_.homogeneous) {
          const Vector d = ops_->grad_transpose(w);
          return kind_.s > 0 ? d : ops_->apply_elliptic_inverse(EllipticKind::poisson_deflated, d);
        }
        const Index k = grid_.size();
        const Vector d = w.head(k) + ops_->grad_transpose(w.tail(w.size() - k));
        return kind_.s > 0 ? d : ops_->apply_elliptic_inverse(EllipticKind::h1, d);
      }
      case MetricFamily::wasserstein: return div_->apply_pinv_transpose(w);
    }
    return w;
  }

  [[nodiscard]] Vector apply_Lt_pinv(const Vector& g) const override {
    check(g, state_dim());
    switch (kind_.family) {
      case MetricFamily::l2: return g;
      case MetricFamily::fisher_rao: return g.cwiseProduct(sqrt_rho_);
      case MetricFamily::sobolev:
        if (kind_.homogeneous) {
          return kind_.s > 0 ? ops_->grad(ops_->apply_elliptic_inverse(EllipticKind::poisson_deflated, g)) : ops_->grad(g);
        }
        return kind_.s > 0 ? stack(ops_->apply_elliptic_inverse(EllipticKind::h1, g)) : stack(g);
      case MetricFamily::wasserstein: return div_->apply_transpose(g);
    }
    return g;
  }

  /// New operator at density rho, or this one when the kind ignores rho.
  [[nodiscard]] std::shared_ptr<const MetricOperator> refreshed(const Vector& rho) const {
    if (!state_dependent()) return shared_from_this();
    auto next = std::make_shared<MetricOperator>(*this);
    next->set_density(rho);
    return next;
  }

 private:
  void set_density(const Vector& rho) {
    if (rho.size() != grid_.size()) throw DimensionError("metric density size != grid size");
    if (!rho.allFinite() || rho.minCoeff() <= 0.0) throw DomainError("metric density must be positive");
    rho_ = rho;
    if (kind_.family == MetricFamily::fisher_rao) {
      sqrt_rho_ = rho.cwiseSqrt();
      inv_sqrt_rho_ = sqrt_rho_.cwiseInverse();
    } else {
      div_ = std::make_shared<const WeightedDivergence>(grid_, rho, kind_.mobility_exponent);
    }
  }

  [[nodiscard]] Vector stack(const Vector& w) const {
    Vector out(grid_.size() + ops_->edge_count());
    out << w, ops_->grad(w);
    return out;
  }

  static void check(const Vector& v, Index n) {
    if (v.size() != n) throw DimensionError("metric: vector size mismatch");
  }

  MetricKind kind_;
  Grid grid_;
  std::optional<Vector> rho_;
  Vector sqrt_rho_, inv_sqrt_rho_;
  std::shared_ptr<const DifferentialOperatorSet> ops_;
  std::shared_ptr<const WeightedDivergence> div_;
};

inline std::shared_ptr<const MetricOperator> build_metric(const MetricKind& kind, const Grid& grid,
                                                          const std::optional<Vector>& rho = std::nullopt) {
  return std::make_shared<const MetricOperator>(kind, grid, rho);
}

enum class DensityTransform { none, affine_probability };

/// (rho + c) / sum(rho + c) with c = -min + 0.1 * spread; a constant block
/// maps to the uniform density.
inline Vector affine_probability(const Vector& rho) {
  const double lo = rho.minCoeff();
  const double spread = rho.maxCoeff() - lo;
  const Vector shifted = spread > 0.0 ? Vector(rho.array() - lo + 0.1 * spread) : Vector(Vector::Ones(rho.size()));
  return shifted / shifted.sum();
}

/// The same metric applied independently to consecutive equal-size blocks of
/// the state (one block per source gather). State-dependent kinds see each
/// block through the density transform.
class BlockDiagonalMetric final : public StateMetric {
 public:
  BlockDiagonalMetric(const MetricKind& kind, const Grid& block_grid, Index blocks,
                      DensityTransform transform = DensityTransform::affine_probability,
                      const std::optional<Vector>& rho = std::nullopt)
      : kind_(kind), grid_(block_grid), transform_(transform) {
    if (blocks < 1) throw DimensionError("BlockDiagonalMetric: need at least one block");
    if (kind.state_dependent()) {
      if (!rho) throw DomainError("metric " + kind.name() + " needs a density");
      rebuild(*rho, blocks);
    } else {
      parts_.assign(static_cast<std::size_t>(blocks), build_metric(kind, block_grid));
    }
  }

  [[nodiscard]] Index blocks() const { return static_cast<Index>(parts_.size()); }
  [[nodiscard]] const MetricOperator& block(Index i) const { return *parts_.at(static_cast<std::size_t>(i)); }

  [[nodiscard]] Index state_dim() const override { return blocks() * grid_.size(); }
  [[nodiscard]] Index row_dim() const override { return blocks() * parts_.front()->row_dim(); }
  [[nodiscard]] bool state_dependent() const override { return kind_.state_dependent(); }
  [[nodiscard]] std::string name() const override { return kind_.name(); }

  [[nodiscard]] Vector apply_L(const Vector& v) const override {
    return map(v, grid_.size(), parts_.front()->row_dim(), [](const MetricOperator& m, const Vector& x) { return m.apply_L(x); });
  }
  [[nodiscard]] Vector apply_Lt(const Vector& w) const override {
    return map(w, parts_.front()->row_dim(), grid_.size(), [](const MetricOperator& m, const Vector& x) { return m.apply_Lt(x); });
  }
  [[nodiscard]] Vector apply_Lt_pinv(const Vector& g) const override {
    return map(g, grid_.size(), parts_.front()->row_dim(), [](const MetricOperator& m, const Vector& x) { return m.apply_Lt_pinv(x); });
  }

  [[nodiscard]] std::shared_ptr<const BlockDiagonalMetric> refreshed(const Vector& rho) const {
    auto next = std::make_shared<BlockDiagonalMetric>(*this);
    if (state_dependent()) next->rebuild(rho, blocks());
    return next;
  }

 private:
  void rebuild(const Vector& rho, Index blocks) {
    const Index n = grid_.size();
    if (rho.size() != blocks * n) throw DimensionError("BlockDiagonalMetric: density size mismatch");
    parts_.clear();
    for (Index b = 0; b < blocks; ++b) {
      const Vector piece = rho.segment(b * n, n);
      const Vector density = transform_ == DensityTransform::affine_probability ? affine_probability(piece) : piece;
      parts_.push_back(build_metric(kind_, grid_, density));
    }
  }

  template <class Fn>
  [[nodiscard]] Vector map(const Vector& v, Index in, Index out, Fn fn) const {
    if (v.size() != blocks() * in) throw DimensionError("BlockDiagonalMetric: vector size mismatch");
    Vector r(blocks() * out);
    for (Index b = 0; b < blocks(); ++b) r.segment(b * out, out) = fn(*parts_[static_cast<std::size_t>(b)], v.segment(b * in, in));
    return r;
  }

  MetricKind kind_;
  Grid grid_;
  DensityTransform transform_;
  std::vector<std::shared_ptr<const MetricOperator>> parts_;
};

/// refresh for either concrete metric; other implementations pass through.
inline MetricPtr refresh(const MetricPtr& op, const Vector& rho) {
  if (!op->state_dependent()) return op;
  if (auto m = std::dynamic_pointer_cast<const MetricOperator>(op)) return m->refreshed(rho);
  if (auto b = std::dynamic_pointer_cast<const BlockDiagonalMetric>(op)) return b->refreshed(rho);
  return op;
}

struct InfoMatrix {
  DenseMatrix g;
  std::string metric_name;
};

inline InfoMatrix info_matrix(const StateMetric& op, const DenseMatrix& z) {
  const DenseMatrix y = op.apply_L_columns(z);
  const DenseMatrix g = y.transpose() * y;
  return {DenseMatrix(0.5 * (g + g.transpose())), op.name()};
}

}  // namespace natgrad

#endif  // NATGRAD_METRICS_HPP
