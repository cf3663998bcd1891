// Direction solvers and the descent loop.
//
//   explicit:  eta = argmin || (L^T)^+ g_rho + L Z eta ||       (QR / CPQR)
//   implicit:  (lambda G_reg + G_L) eta = -Z^T L^T (L^T)^+ g_rho (CG on the
//              matrix-free action eta -> Z^T L^T L Z eta)
//
// Z^T and Z actions on implicit models go through the adjoint and linearized
// solves; every such solve is charged to the model's propagation counter.

#ifndef NATGRAD_NGD_HPP
#define NATGRAD_NGD_HPP

#include "natgrad/metrics.hpp"
#include "natgrad/models/model.hpp"
#include "natgrad/numkit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace natgrad {

enum class StepRule { fixed, backtracking, backtracking_normalized };

struct NgdConfig {
  std::string method = "l2";  // "gd" or a metric string
  double damping_lambda = 0.0;
  std::optional<MetricKind> damping_metric;  // unset: identity
  double cg_tol = 1e-8;
  Index cg_max_iter = 0;  // 0: 3p
  double rank_tol = kDefaultRankTol;
  StepRule step_rule = StepRule::backtracking;
  double step0 = 1.0;
  double ls_shrink = 0.5;
  Index ls_max_halvings = 40;
  double armijo = 0.0;
  Index max_iters = 100;
  std::int64_t max_propagations = 0;  // 0: no budget
  double grad_tol = 0.0;
  std::optional<Index> minibatch_size;
  std::optional<Index> hutchinson_m;
  std::uint64_t seed = 0;

  [[nodiscard]] bool is_gd() const { return method == "gd"; }
  [[nodiscard]] MetricKind metric() const { return parse_metric_kind(method); }

  void validate() const {
    if (!is_gd()) metric().validate();
    if (!(step0 > 0.0)) throw DomainError("step0 must be positive");
    if (!(ls_shrink > 0.0 && ls_shrink < 1.0)) throw DomainError("ls_shrink must lie in (0,1)");
    if (damping_lambda < 0.0) throw DomainError("damping must be nonnegative");
    if (!(cg_tol > 0.0)) throw DomainError("cg_tol must be positive");
    if (ls_max_halvings < 0 || max_iters < 0 || cg_max_iter < 0) throw DomainError("counts must be nonnegative");
    if (armijo < 0.0 || armijo >= 1.0) throw DomainError("armijo constant must lie in [0,1)");
    if (minibatch_size && *minibatch_size < 1) throw DomainError("minibatch size must be positive");
    if (hutchinson_m && *hutchinson_m < 1) throw DomainError("hutchinson sample count must be positive");
  }
};

struct IterationRecord {
  Index iter = 0;
  std::int64_t propagations = 0;
  double loss = 0.0;
  double grad_norm = 0.0;
  double step = 0.0;
  double direction_norm = 0.0;
};

// ---------------------------------------------------------------- sampling

/// Independent stream per purpose, derived from one seed.
inline std::mt19937_64 make_stream(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream)};
  return std::mt19937_64(seq);
}

enum class Stream : std::uint64_t { sketch = 1, hutchinson = 2 };

/// Row r of S has its single 1 in column row_to_column[r].
struct SketchMatrix {
  std::vector<Index> row_to_column;
  Index cols = 0;

  [[nodiscard]] Index rows() const { return static_cast<Index>(row_to_column.size()); }

  [[nodiscard]] SparseMatrix to_sparse() const {
    std::vector<Triplet> t;
    for (Index r = 0; r < rows(); ++r) t.emplace_back(r, row_to_column[static_cast<std::size_t>(r)], 1.0);
    SparseMatrix s(rows(), cols);
    s.setFromTriplets(t.begin(), t.end());
    return s;
  }

  /// Diagonal of S^T S.
  [[nodiscard]] Vector mask() const {
    Vector m = Vector::Zero(cols);
    for (Index c : row_to_column) m[c] = 1.0;
    return m;
  }
};

template <class Rng>
SketchMatrix sample_sketch(Index k_prime, Index k, Rng& rng) {
  if (k_prime > k || k_prime < 0) throw DimensionError("sample_sketch: need 0 <= k' <= k");
  std::vector<Index> idx(static_cast<std::size_t>(k));
  std::iota(idx.begin(), idx.end(), Index{0});
  // partial Fisher-Yates with an explicit draw so the stream is portable
  for (Index i = 0; i < k_prime; ++i) {
    const auto span = static_cast<std::uint64_t>(k - i);
    const Index j = i + static_cast<Index>(rng() % span);
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
  }
  idx.resize(static_cast<std::size_t>(k_prime));
  return {idx, k};
}

template <class Rng>
Vector rademacher(Index n, Rng& rng) {
  Vector v(n);
  for (Index i = 0; i < n; ++i) v[i] = (rng() & 1U) ? 1.0 : -1.0;
  return v;
}

/// H(Z) = (1/m) sum_k xi_k (Z^T xi_k)^T over the given probes (columns).
inline DenseMatrix hutchinson_from_probes(const std::function<Vector(const Vector&)>& apply_zt, const DenseMatrix& probes) {
  if (probes.cols() == 0) throw DimensionError("hutchinson: no probes");
  DenseMatrix h;
  for (Index c = 0; c < probes.cols(); ++c) {
    const Vector xi = probes.col(c);
    const Vector ztxi = apply_zt(xi);
    if (c == 0) h = DenseMatrix::Zero(xi.size(), ztxi.size());
    h.noalias() += xi * ztxi.transpose();
  }
  return h / static_cast<double>(probes.cols());
}

/// All 2^k sign vectors as columns.
inline DenseMatrix all_sign_vectors(Index k) {
  if (k < 1 || k > 20) throw DimensionError("all_sign_vectors: k out of range");
  const Index n = Index{1} << k;
  DenseMatrix p(k, n);
  for (Index c = 0; c < n; ++c) {
    for (Index i = 0; i < k; ++i) p(i, c) = ((c >> i) & 1) ? -1.0 : 1.0;
  }
  return p;
}

// ------------------------------------------------------- adjoint machinery

/// Z^T xi = -(d_theta h)^T (d_u h)^{-T} R^T xi.
inline Vector apply_jacobian_transpose(ImplicitModel& model, const Vector& xi) {
  const Vector lambda = model.apply_drho_h_transpose_inverse(model.observe_transpose(xi));
  return -model.apply_dtheta_h_transpose(lambda);
}

/// Z eta = R (d_u h)^{-1} (-(d_theta h) eta).
inline Vector apply_jacobian(ImplicitModel& model, const Vector& eta) {
  return model.observe(model.apply_drho_h_inverse(-model.apply_dtheta_h(eta)));
}

inline Vector gradient_adjoint(ImplicitModel& model, const Vector& grad_rho) {
  if (grad_rho.size() != model.state_dim()) throw DimensionError("gradient_adjoint: size");
  return apply_jacobian_transpose(model, grad_rho);
}

/// Z assembled column by column from linearized solves.
inline DenseMatrix assemble_jacobian(ImplicitModel& model) {
  const Index p = model.param_dim();
  DenseMatrix z(model.state_dim(), p);
  for (Index j = 0; j < p; ++j) z.col(j) = apply_jacobian(model, Vector::Unit(p, j));
  return z;
}

/// eta -> Z^T M L^T L M Z eta, M the optional 0/1 state mask.
inline Vector gl_action(ImplicitModel& model, const StateMetric& metric, const Vector& eta,
                        const Vector* mask = nullptr) {
  Vector gamma = apply_jacobian(model, eta);
  if (mask) gamma = gamma.cwiseProduct(*mask);
  Vector xi = metric.apply_LtL(gamma);
  if (mask) xi = xi.cwiseProduct(*mask);
  return apply_jacobian_transpose(model, xi);
}

template <class Rng>
DenseMatrix hutchinson_jacobian(ImplicitModel& model, Index m, Rng& rng) {
  DenseMatrix probes(model.state_dim(), m);
  for (Index c = 0; c < m; ++c) probes.col(c) = rademacher(model.state_dim(), rng);
  return hutchinson_from_probes([&](const Vector& xi) { return apply_jacobian_transpose(model, xi); }, probes);
}

// --------------------------------------------------------------- directions

struct DirectionResult {
  Vector eta;
  Index rank = 0;
  Index cg_iterations = 0;
  double cg_residual = 0.0;
  bool converged = true;
};

/// Minimizer of ||b + A eta|| of least length.
inline DirectionResult solve_direction_ls(const DenseMatrix& a, const Vector& b, double rank_tol) {
  DirectionResult out;
  const PivotedQRFactors f = qr_column_pivoted(a, rank_tol);
  out.rank = f.numerical_rank;
  if (f.numerical_rank == a.cols() && a.rows() >= a.cols()) {
    const QRFactors qr = qr_economy(a);
    out.eta = -triangular_solve(qr.r, qr.q.transpose() * b, Triangle::upper);
  } else {
    out.eta = -solve_least_squares_min_norm(a, b, rank_tol).solution;
  }
  return out;
}

/// Explicit-Jacobian direction. `reg` (optional) replaces the identity in the
/// damping term lambda * G_reg; `mask` zero-fills unsampled state entries.
inline DirectionResult direction_explicit(const DenseMatrix& z, const StateMetric& metric, const Vector& grad_rho,
                                          double rank_tol = kDefaultRankTol, double damping = 0.0,
                                          const StateMetric* reg = nullptr, const Vector* mask = nullptr) {
  if (z.rows() != metric.state_dim() || grad_rho.size() != z.rows()) throw DimensionError("direction_explicit: size mismatch");
  DenseMatrix zm = z;
  Vector gm = grad_rho;
  if (mask) {
    zm = mask->asDiagonal() * z;
    gm = grad_rho.cwiseProduct(*mask);
  }
  const DenseMatrix y = metric.apply_L_columns(zm);
  const Vector b = metric.apply_Lt_pinv(gm);
  if (damping == 0.0) return solve_direction_ls(y, b, rank_tol);

  const double s = std::sqrt(damping);
  const DenseMatrix r = reg ? DenseMatrix(reg->apply_L_columns(z)) : DenseMatrix(DenseMatrix::Identity(z.cols(), z.cols()));
  DenseMatrix a(y.rows() + r.rows(), z.cols());
  a << y, s * r;
  Vector rhs = Vector::Zero(a.rows());
  rhs.head(b.size()) = b;
  return solve_direction_ls(a, rhs, rank_tol);
}

/// Right-hand side Z^T M L^T (L^T)^+ M g of the implicit normal equations.
inline Vector implicit_rhs(ImplicitModel& model, const StateMetric& metric, const Vector& grad_rho,
                           const Vector* mask = nullptr) {
  Vector g = mask ? Vector(grad_rho.cwiseProduct(*mask)) : grad_rho;
  Vector xi = metric.project(g);
  if (mask) xi = xi.cwiseProduct(*mask);
  return apply_jacobian_transpose(model, xi);
}

/// Matrix-free direction: CG on (lambda G_reg + G_L) eta = -rhs.
inline DirectionResult direction_implicit(ImplicitModel& model, const StateMetric& metric, const Vector& rhs,
                                          const NgdConfig& cfg, const StateMetric* reg = nullptr,
                                          const Vector* mask = nullptr) {
  const Index p = model.param_dim();
  if (rhs.size() != p) throw DimensionError("direction_implicit: rhs size");
  const Index max_iter = cfg.cg_max_iter > 0 ? cfg.cg_max_iter : 3 * p;
  auto action = [&](const Vector& eta) -> Vector {
    Vector out = gl_action(model, metric, eta, mask);
    if (cfg.damping_lambda > 0.0) out += cfg.damping_lambda * (reg ? gl_action(model, *reg, eta) : eta);
    return out;
  };
  const CgReport rep = cg_solve(action, -rhs, cfg.cg_tol, max_iter);
  DirectionResult out;
  out.eta = rep.solution;
  out.rank = p;
  out.cg_iterations = rep.iterations;
  out.cg_residual = rep.final_relative_residual;
  out.converged = rep.converged;
  return out;
}

// -------------------------------------------------------------- line search

struct LineSearchResult {
  double tau = 0.0;
  double f_new = 0.0;
  Index evaluations = 0;
  bool stagnated = false;
};

/// eval_loss may throw InadmissibleParameter or return non-finite values;
/// both reject the trial. `slope` is <grad_theta f, eta> for the Armijo test.
inline LineSearchResult line_search(const std::function<double(const Vector&)>& eval_loss, const Vector& theta,
                                    const Vector& eta, double f0, const NgdConfig& cfg, double slope = 0.0) {
  LineSearchResult out;
  out.f_new = f0;
  double tau = cfg.step0;
  if (cfg.step_rule == StepRule::backtracking_normalized) {
    const double peak = eta.cwiseAbs().maxCoeff();
    if (!(peak > 0.0)) {
      out.stagnated = true;
      return out;
    }
    tau = cfg.step0 / peak;
  }
  const Index trials = cfg.step_rule == StepRule::fixed ? 1 : cfg.ls_max_halvings;
  for (Index n = 0; n < trials; ++n, tau *= cfg.ls_shrink) {
    double f = 0.0;
    try {
      f = eval_loss(theta + tau * eta);
    } catch (const InadmissibleParameter&) {
      ++out.evaluations;
      continue;
    }
    ++out.evaluations;
    if (std::isfinite(f) && f < f0 + cfg.armijo * tau * std::min(slope, 0.0)) {
      out.tau = tau;
      out.f_new = f;
      return out;
    }
  }
  out.stagnated = true;
  return out;
}

// ----------------------------------------------------------------- the loop

enum class StopReason { max_iters, budget, stagnation, converged };

inline const char* stop_reason_name(StopReason r) {
  switch (r) {
    case StopReason::max_iters: return "max_iters";
    case StopReason::budget: return "budget";
    case StopReason::stagnation: return "stagnation";
    case StopReason::converged: return "converged";
  }
  return "?";
}

struct OptimizeResult {
  std::vector<IterationRecord> records;
  Vector theta;
  StopReason stop = StopReason::max_iters;
  bool cg_failures = false;
};

using IterationObserver = std::function<void(const IterationRecord&, const Vector& theta)>;

inline OptimizeResult optimize(Model& model, const Vector& theta0, const NgdConfig& cfg,
                               const IterationObserver& observer = nullptr) {
  cfg.validate();
  const bool gd = cfg.is_gd();
  const std::optional<MetricKind> kind = gd ? std::nullopt : std::optional<MetricKind>(cfg.metric());
  auto* implicit = dynamic_cast<ImplicitModel*>(&model);
  auto* explicit_model = dynamic_cast<ExplicitModel*>(&model);
  auto sketch_rng = make_stream(cfg.seed, static_cast<std::uint64_t>(Stream::sketch));
  auto hutch_rng = make_stream(cfg.seed, static_cast<std::uint64_t>(Stream::hutchinson));

  OptimizeResult out;
  Vector theta = theta0;
  Vector rho = model.forward(theta);
  double f = model.loss(rho);
  Vector trial_rho;

  auto eval = [&](const Vector& t) {
    trial_rho = model.forward(t);
    return model.loss(trial_rho);
  };

  IterationRecord first;
  first.loss = f;
  first.propagations = model.counter().total();
  out.records.push_back(first);

  for (Index it = 0;; ++it) {
    const Vector g_rho = model.grad_rho(rho);
    DenseMatrix z;
    Vector g_theta;
    if (explicit_model) {
      z = explicit_model->jacobian(theta);
      g_theta = z.transpose() * g_rho;
    } else {
      g_theta = gradient_adjoint(*implicit, g_rho);
    }
    out.records.back().grad_norm = g_theta.norm();
    if (observer) observer(out.records.back(), theta);

    if (g_theta.norm() <= cfg.grad_tol) {
      out.stop = StopReason::converged;
      break;
    }
    if (it >= cfg.max_iters) {
      out.stop = StopReason::max_iters;
      break;
    }
    if (cfg.max_propagations > 0 && model.counter().total() >= cfg.max_propagations) {
      out.stop = StopReason::budget;
      break;
    }

    Vector eta;
    if (gd) {
      eta = -g_theta;
    } else {
      const MetricPtr metric = model.make_metric(*kind, rho);
      std::optional<Vector> mask;
      if (cfg.minibatch_size) {
        mask = sample_sketch(std::min(*cfg.minibatch_size, model.state_dim()), model.state_dim(), sketch_rng).mask();
      }
      MetricPtr reg;
      if (cfg.damping_metric && cfg.damping_lambda > 0.0) reg = model.make_metric(*cfg.damping_metric, rho);
      const Vector* mp = mask ? &*mask : nullptr;
      if (explicit_model || cfg.hutchinson_m) {
        if (!explicit_model) z = hutchinson_jacobian(*implicit, *cfg.hutchinson_m, hutch_rng);
        eta = direction_explicit(z, *metric, g_rho, cfg.rank_tol, cfg.damping_lambda, reg.get(), mp).eta;
      } else {
        Vector rhs;
        const Vector seen = metric->project(g_rho);
        if (!mp && (seen - g_rho).norm() <= 1e-14 * g_rho.norm()) {
          rhs = g_theta;  // projection is the identity: reuse the gradient
        } else {
          rhs = implicit_rhs(*implicit, *metric, g_rho, mp);
        }
        const DirectionResult d = direction_implicit(*implicit, *metric, rhs, cfg, reg.get(), mp);
        out.cg_failures = out.cg_failures || !d.converged;
        eta = d.eta;
      }
    }

    const LineSearchResult ls = line_search(eval, theta, eta, f, cfg, g_theta.dot(eta));
    if (ls.stagnated) {
      out.stop = StopReason::stagnation;
      break;
    }
    // an iterate paid for past the budget is not accepted
    if (cfg.max_propagations > 0 && model.counter().total() > cfg.max_propagations) {
      out.stop = StopReason::budget;
      break;
    }
    // the accepted trial is the last one evaluated, so model caches sit at it
    theta += ls.tau * eta;
    f = ls.f_new;
    rho = trial_rho;

    IterationRecord next;
    next.iter = it + 1;
    next.loss = f;
    next.step = ls.tau;
    next.direction_norm = eta.norm();
    next.propagations = model.counter().total();
    out.records.push_back(next);
  }
  out.theta = theta;
  return out;
}

}  // namespace natgrad

#endif  // NATGRAD_NGD_HPP
