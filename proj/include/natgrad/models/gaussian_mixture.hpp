// Gaussian mixture density sampled on a 2D grid, with the free parameters
// picked out of the component weights and means.

#ifndef NATGRAD_MODELS_GAUSSIAN_MIXTURE_HPP
#define NATGRAD_MODELS_GAUSSIAN_MIXTURE_HPP

#include "natgrad/models/model.hpp"

#include <array>
#include <numbers>
#include <vector>

namespace natgrad {

struct GaussianComponent {
  double weight = 1.0;
  std::array<double, 2> mean{0.0, 0.0};
  std::array<double, 3> covariance{1.0, 0.0, 1.0};  // (s_xx, s_xy, s_yy)
};

enum class MixtureField { mean_x, mean_y, weight };

struct FreeParameter {
  std::size_t component = 0;
  MixtureField field = MixtureField::mean_x;
};

/// N(x; mu, Sigma) for a 2x2 SPD Sigma.
inline double bivariate_normal(double x, double y, const std::array<double, 2>& mu, const std::array<double, 3>& s) {
  const double det = s[0] * s[2] - s[1] * s[1];
  const double dx = x - mu[0];
  const double dy = y - mu[1];
  const double q = (s[2] * dx * dx - 2.0 * s[1] * dx * dy + s[0] * dy * dy) / det;
  return std::exp(-0.5 * q) / (2.0 * std::numbers::pi * std::sqrt(det));
}

class GaussianMixtureModel final : public ExplicitModel {
 public:
  GaussianMixtureModel(const Grid& grid, std::vector<GaussianComponent> components, std::vector<FreeParameter> free)
      : grid_(grid), components_(std::move(components)), free_(std::move(free)) {
    grid.validate();
    if (grid.dim != 2) throw DimensionError("GaussianMixtureModel: grid must be 2D");
    if (components_.empty()) throw DomainError("GaussianMixtureModel: no components");
    for (const auto& c : components_) check_component(c);
    for (const auto& f : free_) {
      if (f.component >= components_.size()) throw DimensionError("GaussianMixtureModel: free parameter names a missing component");
    }
    target_ = Vector::Zero(grid.size());
  }

  [[nodiscard]] std::string kind_name() const override { return "gaussian-mixture"; }
  [[nodiscard]] Index param_dim() const override { return static_cast<Index>(free_.size()); }
  [[nodiscard]] Index state_dim() const override { return grid_.size(); }
  [[nodiscard]] const Grid& grid() const { return grid_; }
  [[nodiscard]] const std::vector<GaussianComponent>& components() const { return components_; }

  /// Components with theta written into the free slots.
  [[nodiscard]] std::vector<GaussianComponent> components_at(const Vector& theta) const {
    if (theta.size() != param_dim()) throw DimensionError("GaussianMixtureModel: theta size");
    auto comps = components_;
    for (std::size_t i = 0; i < free_.size(); ++i) {
      auto& c = comps[free_[i].component];
      const double v = theta[static_cast<Index>(i)];
      switch (free_[i].field) {
        case MixtureField::mean_x: c.mean[0] = v; break;
        case MixtureField::mean_y: c.mean[1] = v; break;
        case MixtureField::weight: c.weight = v; break;
      }
    }
    return comps;
  }

  /// Current component values in the free slots.
  [[nodiscard]] Vector theta_of(const std::vector<GaussianComponent>& comps) const {
    Vector t(param_dim());
    for (std::size_t i = 0; i < free_.size(); ++i) {
      const auto& c = comps.at(free_[i].component);
      const Index j = static_cast<Index>(i);
      switch (free_[i].field) {
        case MixtureField::mean_x: t[j] = c.mean[0]; break;
        case MixtureField::mean_y: t[j] = c.mean[1]; break;
        case MixtureField::weight: t[j] = c.weight; break;
      }
    }
    return t;
  }

  [[nodiscard]] Vector density(const std::vector<GaussianComponent>& comps) const {
    const Index n0 = grid_.interior_counts[0];
    const Index n1 = grid_.interior_counts[1];
    Vector rho = Vector::Zero(grid_.size());
    for (Index i = 0; i < n0; ++i) {
      const double x = grid_.coordinate(0, i);
      for (Index j = 0; j < n1; ++j) {
        const double y = grid_.coordinate(1, j);
        double v = 0.0;
        for (const auto& c : comps) v += c.weight * bivariate_normal(x, y, c.mean, c.covariance);
        rho[i * n1 + j] = v;
      }
    }
    return rho;
  }

  Vector forward(const Vector& theta) override {
    auto comps = components_at(theta);
    for (const auto& c : comps) check_component(c);
    ++counter_.forward;
    return density(comps);
  }

  [[nodiscard]] DenseMatrix jacobian(const Vector& theta) override {
    const auto comps = components_at(theta);
    const Index n0 = grid_.interior_counts[0];
    const Index n1 = grid_.interior_counts[1];
    DenseMatrix z(grid_.size(), param_dim());
    for (std::size_t col = 0; col < free_.size(); ++col) {
      const auto& c = comps[free_[col].component];
      const auto& s = c.covariance;
      const double det = s[0] * s[2] - s[1] * s[1];
      for (Index i = 0; i < n0; ++i) {
        const double x = grid_.coordinate(0, i);
        for (Index j = 0; j < n1; ++j) {
          const double y = grid_.coordinate(1, j);
          const double n = bivariate_normal(x, y, c.mean, s);
          const double dx = x - c.mean[0];
          const double dy = y - c.mean[1];
          double v = 0.0;
          switch (free_[col].field) {
            case MixtureField::mean_x: v = c.weight * n * (s[2] * dx - s[1] * dy) / det; break;
            case MixtureField::mean_y: v = c.weight * n * (s[0] * dy - s[1] * dx) / det; break;
            case MixtureField::weight: v = n; break;
          }
          z(i * n1 + j, static_cast<Index>(col)) = v;
        }
      }
    }
    counter_.linearized += param_dim();
    return z;
  }

  [[nodiscard]] MetricPtr make_metric(const MetricKind& kind, const Vector& rho) const override {
    if (!kind.state_dependent()) return build_metric(kind, grid_);
    return build_metric(kind, grid_, rho);
  }

 private:
  static void check_component(const GaussianComponent& c) {
    const auto& s = c.covariance;
    if (!(s[0] > 0.0) || !(s[0] * s[2] - s[1] * s[1] > 0.0)) throw DomainError("covariance not SPD");
    if (!std::isfinite(c.weight) || !std::isfinite(c.mean[0]) || !std::isfinite(c.mean[1])) {
      throw InadmissibleParameter("mixture parameter not finite");
    }
  }

  Grid grid_;
  std::vector<GaussianComponent> components_;
  std::vector<FreeParameter> free_;
};

}  // namespace natgrad

#endif  // NATGRAD_MODELS_GAUSSIAN_MIXTURE_HPP
