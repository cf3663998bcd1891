// Acoustic wave equation  m u_tt - Laplace(u) = s  with a Cerjan sponge, in
// leapfrog form on the model grid padded by the sponge width:
//
//   A0 u^j + A1 u^{j-1} + A2 u^{j-2} = s^{j-1},   j = 1..n_t,  u^0 = u^{-1} = 0
//   A0 = m / (g dt^2),  A1 = -(2 m / dt^2 + Laplace),  A2 = m g / dt^2
//
// with g <= 1 the per-cell sponge factor and Laplace the 5-point stencil
// (zero outside the padded box). theta = m on the model cells; the padding
// copies the nearest edge cell. Observations are the wavefield at receiver
// cells for every step, laid out per source as (receiver, time).
//
// Internal state layout: ((source * n_t + (j - 1)) * padded_cells + cell).

#ifndef NATGRAD_MODELS_WAVE_FWI_HPP
#define NATGRAD_MODELS_WAVE_FWI_HPP

#include "natgrad/models/model.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <vector>

namespace natgrad {

struct WaveCell {
  Index z = 0;
  Index x = 0;
  bool operator==(const WaveCell&) const = default;
};

struct WaveFwiSetup {
  Index nz = 30;
  Index nx = 30;
  double h = 1.0;
  double dt = 0.3;
  Index nt = 200;
  Index sponge_width = 10;
  double sponge_strength = 0.015;
  double cfl_factor = 1.0 / std::numbers::sqrt2;
  double peak_frequency = 0.15;
  double amplitude = 1.0;
  std::vector<WaveCell> sources;
  std::vector<WaveCell> receivers;

  /// n sources evenly spread along row `row`; receivers on every cell of `row`.
  static WaveFwiSetup surface(Index nz, Index nx, Index n_sources, Index row = 0) {
    WaveFwiSetup s;
    s.nz = nz;
    s.nx = nx;
    for (Index i = 0; i < n_sources; ++i) {
      const Index x = (2 * i + 1) * nx / (2 * n_sources);
      s.sources.push_back({row, std::min(x, nx - 1)});
    }
    for (Index x = 0; x < nx; ++x) s.receivers.push_back({row, x});
    return s;
  }
};

/// Ricker wavelet with delay 1/f.
inline Vector ricker_wavelet(double f, double dt, Index nt, double amplitude = 1.0) {
  Vector w(nt);
  const double t0 = 1.0 / f;
  for (Index j = 0; j < nt; ++j) {
    const double a = std::numbers::pi * f * (static_cast<double>(j) * dt - t0);
    w[j] = amplitude * (1.0 - 2.0 * a * a) * std::exp(-a * a);
  }
  return w;
}

class WaveFwiModel final : public ImplicitModel {
 public:
  explicit WaveFwiModel(WaveFwiSetup setup) : s_(std::move(setup)) {
    if (s_.nz < 1 || s_.nx < 1 || s_.nt < 1) throw DimensionError("WaveFwiModel: empty grid or time axis");
    if (!(s_.h > 0.0) || !(s_.dt > 0.0)) throw DomainError("WaveFwiModel: spacing and dt must be positive");
    if (s_.sponge_width < 0) throw DomainError("WaveFwiModel: negative sponge width");
    if (s_.sources.empty() || s_.receivers.empty()) throw DomainError("WaveFwiModel: need sources and receivers");
    for (const auto& c : s_.sources) check_cell(c);
    for (const auto& c : s_.receivers) check_cell(c);
    pz_ = s_.nz + 2 * s_.sponge_width;
    px_ = s_.nx + 2 * s_.sponge_width;
    wavelet_ = ricker_wavelet(s_.peak_frequency, s_.dt, s_.nt, s_.amplitude);
    build_sponge();
    target_ = Vector::Zero(state_dim());
  }

  [[nodiscard]] std::string kind_name() const override { return "wave-fwi"; }
  [[nodiscard]] const WaveFwiSetup& setup() const { return s_; }
  [[nodiscard]] Index param_dim() const override { return s_.nz * s_.nx; }
  [[nodiscard]] Index sources() const { return static_cast<Index>(s_.sources.size()); }
  [[nodiscard]] Index receivers() const { return static_cast<Index>(s_.receivers.size()); }
  [[nodiscard]] Index padded_cells() const { return pz_ * px_; }
  [[nodiscard]] Index state_dim() const override { return sources() * receivers() * s_.nt; }
  [[nodiscard]] Index internal_dim() const override { return sources() * s_.nt * padded_cells(); }
  [[nodiscard]] const Vector& wavelet() const { return wavelet_; }
  void set_wavelet(const Vector& w) {
    if (w.size() != s_.nt) throw DimensionError("WaveFwiModel: wavelet length != nt");
    wavelet_ = w;
  }

  /// Data grid of one source gather: receivers x time steps.
  [[nodiscard]] Grid data_grid() const { return Grid::plane_with_spacing(receivers(), s_.nt, s_.h, s_.dt); }
  [[nodiscard]] Grid model_grid() const { return Grid::plane_with_spacing(s_.nz, s_.nx, s_.h, s_.h); }

  [[nodiscard]] MetricPtr make_metric(const MetricKind& kind, const Vector& rho) const override {
    if (!kind.state_dependent()) return std::make_shared<const BlockDiagonalMetric>(kind, data_grid(), sources());
    return std::make_shared<const BlockDiagonalMetric>(kind, data_grid(), sources(), DensityTransform::affine_probability, rho);
  }

  /// Largest stable dt for slowness-squared field m.
  [[nodiscard]] double max_stable_dt(const Vector& m) const { return s_.cfl_factor * s_.h * std::sqrt(m.minCoeff()); }

  void check_admissible(const Vector& m) const {
    if (m.size() != param_dim()) throw DimensionError("WaveFwiModel: theta size != model cells");
    if (!m.allFinite() || m.minCoeff() <= 0.0) throw InadmissibleParameter("WaveFwiModel: m must be positive");
    if (s_.dt > max_stable_dt(m)) throw InadmissibleParameter("WaveFwiModel: CFL condition violated");
  }

  /// Source term of the forward problem, internal layout.
  [[nodiscard]] Vector source_field() const {
    Vector rhs = Vector::Zero(internal_dim());
    for (Index src = 0; src < sources(); ++src) {
      const Index cell = padded_index(s_.sources[static_cast<std::size_t>(src)]);
      // row j carries s^{j-1}
      for (Index j = 1; j <= s_.nt; ++j) rhs[offset(src, j) + cell] = wavelet_[j - 1];
    }
    return rhs;
  }

  Vector forward(const Vector& theta) override {
    check_admissible(theta);
    set_medium(theta);
    u_ = march_forward(source_field());
    counter_.forward += sources();
    if (!u_.allFinite()) {
      has_state_ = false;
      throw InadmissibleParameter("WaveFwiModel: wavefield blew up");
    }
    build_wtt();
    has_state_ = true;
    return observe(u_);
  }

  [[nodiscard]] const Vector& wavefield() const {
    require_state();
    return u_;
  }

  [[nodiscard]] Vector apply_drho_h_inverse(const Vector& rhs) override {
    require_state();
    check_internal(rhs);
    counter_.linearized += sources();
    return march_forward(rhs);
  }

  [[nodiscard]] Vector apply_drho_h_transpose_inverse(const Vector& rhs) override {
    require_state();
    check_internal(rhs);
    counter_.adjoint += sources();
    Vector l = march_backward(rhs);
    if (adjoint_fault_ != 0.0) l *= 1.0 + adjoint_fault_;
    return l;
  }

  /// Test fixture: scales every transpose solve by (1 + eps), which breaks
  /// the adjoint identity.
  void inject_adjoint_fault(double eps) { adjoint_fault_ = eps; }

  /// (d_theta h) eta = (E eta) * w^j with w^j = (u^j/g - 2u^{j-1} + g u^{j-2}) / dt^2.
  [[nodiscard]] Vector apply_dtheta_h(const Vector& eta) override {
    require_state();
    if (eta.size() != param_dim()) throw DimensionError("apply_dtheta_h: eta size");
    const Vector e = extend(eta);
    Vector out(internal_dim());
    const Index n = padded_cells();
    for (Index b = 0; b < sources() * s_.nt; ++b) out.segment(b * n, n) = wtt_.segment(b * n, n).cwiseProduct(e);
    return out;
  }

  [[nodiscard]] Vector apply_dtheta_h_transpose(const Vector& lambda) override {
    require_state();
    check_internal(lambda);
    const Index n = padded_cells();
    Vector acc = Vector::Zero(n);
    for (Index b = 0; b < sources() * s_.nt; ++b) acc += wtt_.segment(b * n, n).cwiseProduct(lambda.segment(b * n, n));
    return extend_transpose(acc);
  }

  [[nodiscard]] Vector observe(const Vector& u) const override {
    check_internal(u);
    const Index nr = receivers();
    Vector d(state_dim());
    for (Index src = 0; src < sources(); ++src) {
      for (Index r = 0; r < nr; ++r) {
        const Index cell = padded_index(s_.receivers[static_cast<std::size_t>(r)]);
        for (Index j = 1; j <= s_.nt; ++j) d[(src * nr + r) * s_.nt + (j - 1)] = u[offset(src, j) + cell];
      }
    }
    return d;
  }

  [[nodiscard]] Vector observe_transpose(const Vector& d) const override {
    if (d.size() != state_dim()) throw DimensionError("observe_transpose: size");
    const Index nr = receivers();
    Vector u = Vector::Zero(internal_dim());
    for (Index src = 0; src < sources(); ++src) {
      for (Index r = 0; r < nr; ++r) {
        const Index cell = padded_index(s_.receivers[static_cast<std::size_t>(r)]);
        for (Index j = 1; j <= s_.nt; ++j) u[offset(src, j) + cell] += d[(src * nr + r) * s_.nt + (j - 1)];
      }
    }
    return u;
  }

  /// Padding operator E: model cells -> padded cells (edge replication).
  [[nodiscard]] Vector extend(const Vector& m) const {
    Vector e(padded_cells());
    for (Index z = 0; z < pz_; ++z) {
      for (Index x = 0; x < px_; ++x) e[z * px_ + x] = m[source_cell(z, x)];
    }
    return e;
  }

  [[nodiscard]] Vector extend_transpose(const Vector& e) const {
    Vector m = Vector::Zero(param_dim());
    for (Index z = 0; z < pz_; ++z) {
      for (Index x = 0; x < px_; ++x) m[source_cell(z, x)] += e[z * px_ + x];
    }
    return m;
  }

  [[nodiscard]] const Vector& sponge() const { return g_; }

  /// 5-point Laplacian on the padded box, zero outside.
  [[nodiscard]] Vector laplacian(const Vector& u) const {
    Vector out(padded_cells());
    laplacian_into(u.data(), out.data());
    return out;
  }

 private:
  void check_cell(const WaveCell& c) const {
    if (c.z < 0 || c.z >= s_.nz || c.x < 0 || c.x >= s_.nx) throw DomainError("WaveFwiModel: cell outside the model grid");
  }

  [[nodiscard]] Index padded_index(const WaveCell& c) const {
    return (c.z + s_.sponge_width) * px_ + (c.x + s_.sponge_width);
  }

  [[nodiscard]] Index source_cell(Index z, Index x) const {
    const Index mz = std::clamp<Index>(z - s_.sponge_width, 0, s_.nz - 1);
    const Index mx = std::clamp<Index>(x - s_.sponge_width, 0, s_.nx - 1);
    return mz * s_.nx + mx;
  }

  [[nodiscard]] Index offset(Index src, Index j) const { return (src * s_.nt + (j - 1)) * padded_cells(); }

  void check_internal(const Vector& v) const {
    if (v.size() != internal_dim()) throw DimensionError("WaveFwiModel: internal vector size");
  }

  void require_state() const {
    if (!has_state_) throw std::logic_error("WaveFwiModel: forward() has not been run at the current theta");
  }

  void build_sponge() {
    const Index w = s_.sponge_width;
    g_ = Vector::Ones(padded_cells());
    auto depth = [w](Index i, Index n) {
      // cells into the sponge, counted from the inner edge (1..w), 0 inside
      if (i < w) return w - i;
      if (i >= n - w) return i - (n - w) + 1;
      return Index{0};
    };
    for (Index z = 0; z < pz_; ++z) {
      for (Index x = 0; x < px_; ++x) {
        const Index d = std::max(depth(z, pz_), depth(x, px_));
        if (d > 0) {
          const double a = s_.sponge_strength * static_cast<double>(d);
          g_[z * px_ + x] = std::exp(-a * a);
        }
      }
    }
  }

  void set_medium(const Vector& m) {
    m_ = extend(m);
    const double idt2 = 1.0 / (s_.dt * s_.dt);
    a0_inv_ = (g_.array() / (m_.array() * idt2)).matrix();
    a1_diag_ = -2.0 * idt2 * m_;
    a2_ = (m_.array() * g_.array() * idt2).matrix();
  }

  void laplacian_into(const double* u, double* out) const {
    const double ih2 = 1.0 / (s_.h * s_.h);
    for (Index z = 0; z < pz_; ++z) {
      for (Index x = 0; x < px_; ++x) {
        const Index i = z * px_ + x;
        double acc = -4.0 * u[i];
        if (z > 0) acc += u[i - px_];
        if (z + 1 < pz_) acc += u[i + px_];
        if (x > 0) acc += u[i - 1];
        if (x + 1 < px_) acc += u[i + 1];
        out[i] = acc * ih2;
      }
    }
  }

  // u^j = A0^{-1} (r^j - A1 u^{j-1} - A2 u^{j-2})
  [[nodiscard]] Vector march_forward(const Vector& rhs) const {
    const Index n = padded_cells();
    Vector u = Vector::Zero(internal_dim());
    Vector lap(n);
    for (Index src = 0; src < sources(); ++src) {
      for (Index j = 1; j <= s_.nt; ++j) {
        auto uj = u.segment(offset(src, j), n);
        uj = rhs.segment(offset(src, j), n);
        if (j >= 2) {
          const auto prev = u.segment(offset(src, j - 1), n);
          laplacian_into(prev.data(), lap.data());
          uj += lap - a1_diag_.cwiseProduct(prev);
        }
        if (j >= 3) uj -= a2_.cwiseProduct(u.segment(offset(src, j - 2), n));
        uj = uj.cwiseProduct(a0_inv_);
      }
    }
    return u;
  }

  // lambda^j = A0^{-1} (q^j - A1 lambda^{j+1} - A2 lambda^{j+2})
  [[nodiscard]] Vector march_backward(const Vector& rhs) const {
    const Index n = padded_cells();
    Vector l = Vector::Zero(internal_dim());
    Vector lap(n);
    for (Index src = 0; src < sources(); ++src) {
      for (Index j = s_.nt; j >= 1; --j) {
        auto lj = l.segment(offset(src, j), n);
        lj = rhs.segment(offset(src, j), n);
        if (j + 1 <= s_.nt) {
          const auto next = l.segment(offset(src, j + 1), n);
          laplacian_into(next.data(), lap.data());
          lj += lap - a1_diag_.cwiseProduct(next);
        }
        if (j + 2 <= s_.nt) lj -= a2_.cwiseProduct(l.segment(offset(src, j + 2), n));
        lj = lj.cwiseProduct(a0_inv_);
      }
    }
    return l;
  }

  void build_wtt() {
    const Index n = padded_cells();
    const double idt2 = 1.0 / (s_.dt * s_.dt);
    wtt_.resize(internal_dim());
    const Vector inv_g = g_.cwiseInverse();
    for (Index src = 0; src < sources(); ++src) {
      for (Index j = 1; j <= s_.nt; ++j) {
        auto w = wtt_.segment(offset(src, j), n);
        w = u_.segment(offset(src, j), n).cwiseProduct(inv_g);
        if (j >= 2) w -= 2.0 * u_.segment(offset(src, j - 1), n);
        if (j >= 3) w += g_.cwiseProduct(u_.segment(offset(src, j - 2), n));
        w *= idt2;
      }
    }
  }

  WaveFwiSetup s_;
  Index pz_ = 0;
  Index px_ = 0;
  Vector wavelet_;
  Vector g_;
  Vector m_, a0_inv_, a1_diag_, a2_;
  Vector u_, wtt_;
  bool has_state_ = false;
  double adjoint_fault_ = 0.0;
};

/// Slowness-squared field m = 1/c^2 for a velocity profile given per depth row.
inline Vector slowness_from_velocity_rows(const std::vector<double>& row_velocity, Index nx) {
  const Index nz = static_cast<Index>(row_velocity.size());
  Vector m(nz * nx);
  for (Index z = 0; z < nz; ++z) {
    const double c = row_velocity[static_cast<std::size_t>(z)];
    if (!(c > 0.0)) throw DomainError("velocity must be positive");
    m.segment(z * nx, nx).setConstant(1.0 / (c * c));
  }
  return m;
}

}  // namespace natgrad

#endif  // NATGRAD_MODELS_WAVE_FWI_HPP
