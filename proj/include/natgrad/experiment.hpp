// Experiment drivers behind the natgrad command line: single runs,
// multi-method comparisons and the verification bundle.

#ifndef NATGRAD_EXPERIMENT_HPP
#define NATGRAD_EXPERIMENT_HPP

#include "natgrad/config.hpp"
#include "natgrad/io.hpp"
#include "natgrad/ngd.hpp"

#include <cstdio>
#include <filesystem>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace natgrad {

struct RunOutcome {
  std::string method;
  OptimizeResult result;
  std::optional<double> theta_distance;
  std::int64_t propagations = 0;
};

inline RunOutcome run_method(const ExperimentConfig& cfg, const std::string& method, const std::filesystem::path& out_dir) {
  const NgdConfig solver = solver_for(cfg, method);
  BuiltModel built = build_model(cfg);
  std::filesystem::create_directories(out_dir);
  const std::filesystem::path snaps = out_dir / "snapshots";
  if (cfg.output.snapshot_every > 0) std::filesystem::create_directories(snaps);

  IterationObserver observer;
  if (cfg.output.snapshot_every > 0) {
    observer = [&](const IterationRecord& rec, const Vector& theta) {
      if (rec.iter % cfg.output.snapshot_every != 0) return;
      char name[32];
      std::snprintf(name, sizeof name, "theta_%06lld", static_cast<long long>(rec.iter));
      write_field(snaps / name, theta, built.theta_header);
    };
  }
  RunOutcome out;
  out.method = method;
  out.result = optimize(*built.model, built.theta0, solver, observer);
  out.propagations = built.model->counter().total();
  if (built.reference_theta) out.theta_distance = (out.result.theta - *built.reference_theta).norm();
  write_text(out_dir / "trace.csv", trace_csv(out.result.records));
  write_field(out_dir / "theta_final", out.result.theta, built.theta_header);
  return out;
}

inline std::string summary_csv(const std::vector<RunOutcome>& runs) {
  std::ostringstream os;
  os << "method,final_loss,theta_distance,propagations,iterations,stop\n";
  for (const auto& r : runs) {
    const auto& recs = r.result.records;
    os << r.method << ',' << format_real(recs.back().loss) << ','
       << (r.theta_distance ? format_real(*r.theta_distance) : std::string("nan")) << ',' << recs.back().propagations << ','
       << recs.back().iter << ',' << stop_reason_name(r.result.stop) << "\n";
  }
  return os.str();
}

struct CheckResult {
  std::string name;
  bool passed = false;
  double value = 0.0;
  double tolerance = 0.0;
};

namespace detail {

inline std::vector<Index> sample_indices(Index p, Index count, std::uint64_t seed) {
  std::vector<Index> idx;
  if (p <= count) {
    for (Index i = 0; i < p; ++i) idx.push_back(i);
    return idx;
  }
  auto rng = make_stream(seed, 7);
  const SketchMatrix s = sample_sketch(count, p, rng);
  idx = s.row_to_column;
  std::sort(idx.begin(), idx.end());
  return idx;
}

inline double fd_loss_derivative(Model& model, const Vector& theta, Index j, double step) {
  Vector p = theta, q = theta;
  p[j] += step;
  q[j] -= step;
  return (model.loss(model.forward(p)) - model.loss(model.forward(q))) / (2.0 * step);
}

}  // namespace detail

/// FD gradient, Jacobian FD (explicit), adjoint dot-product (implicit),
/// explicit/implicit direction agreement (implicit, p <= 400) and the
/// entrywise information-matrix identity.
inline std::vector<CheckResult> run_checks(const ExperimentConfig& cfg) {
  const NgdConfig solver = solver_for(cfg);
  BuiltModel built = build_model(cfg);
  Model& model = *built.model;
  const Vector theta = built.theta0;
  const bool is_wave = model.kind_name() == "wave-fwi";
  std::vector<CheckResult> out;

  const Vector rho = model.forward(theta);
  const Vector g_rho = model.grad_rho(rho);
  auto* ex = dynamic_cast<ExplicitModel*>(&model);
  auto* im = dynamic_cast<ImplicitModel*>(&model);
  const Vector grad = ex ? Vector(ex->jacobian(theta).transpose() * g_rho) : gradient_adjoint(*im, g_rho);

  const auto idx = detail::sample_indices(model.param_dim(), 8, cfg.seed);
  {
    const double step = ex ? 1e-5 : 1e-6;
    Vector fd(static_cast<Index>(idx.size())), an(static_cast<Index>(idx.size()));
    for (std::size_t i = 0; i < idx.size(); ++i) {
      fd[static_cast<Index>(i)] = detail::fd_loss_derivative(model, theta, idx[i], step * std::max(1.0, std::abs(theta[idx[i]])));
      an[static_cast<Index>(i)] = grad[idx[i]];
    }
    const double tol = is_wave ? 1e-4 : 1e-5;
    const double err = relative_error(an, fd);
    out.push_back({"gradient-vs-finite-difference", err < tol, err, tol});
  }
  model.forward(theta);

  if (ex) {
    const DenseMatrix z = ex->jacobian(theta);
    DenseMatrix fd(z.rows(), z.cols());
    for (Index j = 0; j < z.cols(); ++j) {
      const double h = 1e-5 * std::max(1.0, std::abs(theta[j]));
      Vector p = theta, q = theta;
      p[j] += h;
      q[j] -= h;
      fd.col(j) = (model.forward(p) - model.forward(q)) / (2.0 * h);
    }
    const double err = relative_error(z, fd);
    out.push_back({"jacobian-vs-finite-difference", err < 1e-6, err, 1e-6});
    model.forward(theta);
  }

  if (im) {
    auto rng = make_stream(cfg.seed, 11);
    std::normal_distribution<double> n01;
    Vector u(im->internal_dim()), w(im->internal_dim());
    for (Index i = 0; i < u.size(); ++i) u[i] = n01(rng);
    for (Index i = 0; i < w.size(); ++i) w[i] = n01(rng);
    const double a = im->apply_drho_h_inverse(u).dot(w);
    const double b = u.dot(im->apply_drho_h_transpose_inverse(w));
    const double err = std::abs(a - b) / std::max(std::abs(a), std::abs(b));
    out.push_back({"adjoint-dot-product", err < 1e-10, err, 1e-10});

    const Vector eta(Vector::NullaryExpr(im->param_dim(), [&] { return n01(rng); }));
    const Vector lam(Vector::NullaryExpr(im->internal_dim(), [&] { return n01(rng); }));
    const double c = im->apply_dtheta_h(eta).dot(lam);
    const double d = eta.dot(im->apply_dtheta_h_transpose(lam));
    const double err2 = std::abs(c - d) / std::max(std::abs(c), std::abs(d));
    out.push_back({"parameter-derivative-transpose", err2 < 1e-10, err2, 1e-10});
  }

  const MetricKind kind = solver.is_gd() ? MetricKind::l2() : solver.metric();
  const MetricPtr metric = model.make_metric(kind, rho);
  if (im && model.param_dim() <= 400) {
    const DenseMatrix z = assemble_jacobian(*im);
    MetricPtr reg;
    if (solver.damping_metric && solver.damping_lambda > 0.0) reg = model.make_metric(*solver.damping_metric, rho);
    const Vector de = direction_explicit(z, *metric, g_rho, solver.rank_tol, solver.damping_lambda, reg.get()).eta;
    NgdConfig tight = solver;
    tight.cg_tol = std::min(solver.cg_tol, 1e-12);
    tight.cg_max_iter = std::max<Index>(solver.cg_max_iter, 20 * model.param_dim());
    const Vector di = direction_implicit(*im, *metric, implicit_rhs(*im, *metric, g_rho), tight, reg.get()).eta;
    const double err = relative_error(di, de);
    out.push_back({"explicit-implicit-direction-" + kind.name(), err < 1e-6, err, 1e-6});
  }

  {
    auto rng = make_stream(cfg.seed, 13);
    std::normal_distribution<double> n01;
    const Index cols = std::min<Index>(model.param_dim(), 6);
    DenseMatrix z(model.state_dim(), cols);
    for (Index c = 0; c < cols; ++c) {
      for (Index r = 0; r < z.rows(); ++r) z(r, c) = n01(rng);
    }
    const InfoMatrix g = info_matrix(*metric, z);
    DenseMatrix e(cols, cols);
    for (Index i = 0; i < cols; ++i) {
      const Vector li = metric->apply_L(z.col(i));
      for (Index j = 0; j < cols; ++j) e(i, j) = li.dot(metric->apply_L(z.col(j)));
    }
    const double err = (g.g - e).cwiseAbs().maxCoeff() / std::max(1.0, e.cwiseAbs().maxCoeff());
    out.push_back({"information-matrix-entrywise-" + kind.name(), err < 1e-12, err, 1e-12});
  }
  return out;
}

}  // namespace natgrad

#endif  // NATGRAD_EXPERIMENT_HPP
