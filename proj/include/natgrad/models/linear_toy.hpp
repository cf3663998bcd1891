// h(rho, theta) = rho - A theta on a small grid. d_rho h = I, d_theta h = -A.

#ifndef NATGRAD_MODELS_LINEAR_TOY_HPP
#define NATGRAD_MODELS_LINEAR_TOY_HPP

#include "natgrad/models/model.hpp"

namespace natgrad {

class LinearToyModel final : public ImplicitModel {
 public:
  LinearToyModel(const Grid& grid, DenseMatrix a, DensityTransform transform = DensityTransform::none)
      : grid_(grid), a_(std::move(a)), transform_(transform) {
    grid.validate();
    if (a_.rows() != grid.size()) throw DimensionError("LinearToyModel: A rows != grid size");
    if (!a_.allFinite()) throw DomainError("LinearToyModel: A not finite");
    target_ = Vector::Zero(a_.rows());
  }

  [[nodiscard]] std::string kind_name() const override { return "linear-toy"; }
  [[nodiscard]] Index param_dim() const override { return a_.cols(); }
  [[nodiscard]] Index state_dim() const override { return a_.rows(); }
  [[nodiscard]] Index internal_dim() const override { return a_.rows(); }
  [[nodiscard]] const DenseMatrix& a() const { return a_; }
  [[nodiscard]] const Grid& grid() const { return grid_; }

  Vector forward(const Vector& theta) override {
    if (theta.size() != param_dim()) throw DimensionError("LinearToyModel: theta size");
    ++counter_.forward;
    return a_ * theta;
  }

  [[nodiscard]] MetricPtr make_metric(const MetricKind& kind, const Vector& rho) const override {
    if (!kind.state_dependent()) return build_metric(kind, grid_);
    return build_metric(kind, grid_, transform_ == DensityTransform::affine_probability ? affine_probability(rho) : rho);
  }

  [[nodiscard]] Vector apply_drho_h_inverse(const Vector& rhs) override {
    ++counter_.linearized;
    return rhs;
  }
  [[nodiscard]] Vector apply_drho_h_transpose_inverse(const Vector& rhs) override {
    ++counter_.adjoint;
    return rhs;
  }
  [[nodiscard]] Vector apply_dtheta_h(const Vector& eta) override { return -(a_ * eta); }
  [[nodiscard]] Vector apply_dtheta_h_transpose(const Vector& lambda) override { return -(a_.transpose() * lambda); }

  [[nodiscard]] Vector observe(const Vector& u) const override { return u; }
  [[nodiscard]] Vector observe_transpose(const Vector& r) const override { return r; }

 private:
  Grid grid_;
  DenseMatrix a_;
  DensityTransform transform_;
};

}  // namespace natgrad

#endif  // NATGRAD_MODELS_LINEAR_TOY_HPP
