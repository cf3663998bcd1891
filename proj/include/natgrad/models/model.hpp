// Forward-model contracts. A model maps parameters theta (length p) to an
// observed state rho (length k) and carries the least-squares target
// f(rho) = 1/2 ||rho - rho*||^2.
//
// ExplicitModel exposes the Jacobian Z = d rho / d theta directly.
// ImplicitModel defines rho through a constraint h(u, theta) = 0 on an
// internal state u and an observation rho = R u, and exposes only the linear
// actions of d_u h, its transpose, d_theta h and its transpose.

#ifndef NATGRAD_MODELS_MODEL_HPP
#define NATGRAD_MODELS_MODEL_HPP

#include "natgrad/grid_ops.hpp"
#include "natgrad/metrics.hpp"
#include "natgrad/numkit.hpp"

#include <cstdint>
#include <optional>
#include <string>

namespace natgrad {

/// One unit = one solve for one source.
struct PropagationCounter {
  std::int64_t forward = 0;
  std::int64_t adjoint = 0;
  std::int64_t linearized = 0;

  [[nodiscard]] std::int64_t total() const { return forward + adjoint + linearized; }
  void reset() { *this = PropagationCounter{}; }
};

/// Thrown when the model cannot be evaluated at theta (CFL, nonpositive
/// parameters, blowup). Line search treats it as a rejected trial.
struct InadmissibleParameter : DomainError {
  using DomainError::DomainError;
};

class Model {
 public:
  virtual ~Model() = default;

  [[nodiscard]] virtual std::string kind_name() const = 0;
  [[nodiscard]] virtual Index param_dim() const = 0;
  [[nodiscard]] virtual Index state_dim() const = 0;
  [[nodiscard]] virtual bool has_explicit_jacobian() const = 0;

  /// rho(theta); implicit models also cache the internal state at theta.
  virtual Vector forward(const Vector& theta) = 0;

  /// Metric matching the state layout.
  [[nodiscard]] virtual MetricPtr make_metric(const MetricKind& kind, const Vector& rho) const = 0;

  [[nodiscard]] const Vector& target() const { return target_; }
  void set_target(const Vector& t) {
    if (t.size() != state_dim()) throw DimensionError("target size != state dim");
    target_ = t;
  }

  [[nodiscard]] double loss(const Vector& rho) const { return 0.5 * (rho - target_).squaredNorm(); }
  [[nodiscard]] Vector grad_rho(const Vector& rho) const { return rho - target_; }

  [[nodiscard]] PropagationCounter& counter() { return counter_; }
  [[nodiscard]] const PropagationCounter& counter() const { return counter_; }

 protected:
  Vector target_;
  PropagationCounter counter_;
};

class ExplicitModel : public Model {
 public:
  [[nodiscard]] bool has_explicit_jacobian() const final { return true; }
  [[nodiscard]] virtual DenseMatrix jacobian(const Vector& theta) = 0;
};

class ImplicitModel : public Model {
 public:
  [[nodiscard]] bool has_explicit_jacobian() const final { return false; }

  [[nodiscard]] virtual Index internal_dim() const = 0;

  // All actions are evaluated at the theta of the last forward().
  [[nodiscard]] virtual Vector apply_drho_h_inverse(const Vector& rhs) = 0;
  [[nodiscard]] virtual Vector apply_drho_h_transpose_inverse(const Vector& rhs) = 0;
  [[nodiscard]] virtual Vector apply_dtheta_h(const Vector& eta) = 0;
  [[nodiscard]] virtual Vector apply_dtheta_h_transpose(const Vector& lambda) = 0;

  [[nodiscard]] virtual Vector observe(const Vector& u) const = 0;
  [[nodiscard]] virtual Vector observe_transpose(const Vector& r) const = 0;
};

}  // namespace natgrad

#endif  // NATGRAD_MODELS_MODEL_HPP
