// Acceptance runner: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include "natgrad/config.hpp"
#include "natgrad/models/gaussian_mixture.hpp"
#include "natgrad/models/linear_toy.hpp"
#include "natgrad/models/wave_fwi.hpp"
#include "natgrad/ngd.hpp"

#include <Eigen/SVD>

#include <chrono>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

using namespace natgrad;

namespace {

// pinned tolerances
constexpr double kFdExplicit = 1e-5;
constexpr double kFdWave = 1e-4;
constexpr double kPathEq = 1e-6;
constexpr double kEntrywise = 1e-12;
constexpr double kConstDensity = 1e-8;
constexpr double kGaussNewton = 1e-10;
constexpr double kW2Basin = 0.5;
constexpr double kOtherBasin = 1.0;
constexpr double kCpqr = 1e-8;
constexpr double kHutchinson = 1e-12;
constexpr double kReparam = 1e-8;
constexpr double kGlSym = 1e-10;
constexpr double kOrtho = 1e-8;
constexpr double kSvdRankTol = 1e-10;
constexpr Index kFwiBudget = 400;

std::mt19937_64& rng() {
  static std::mt19937_64 r(20240607);
  return r;
}

DenseMatrix gaussian(Index m, Index n) {
  std::normal_distribution<double> d;
  DenseMatrix a(m, n);
  for (Index j = 0; j < n; ++j)
    for (Index i = 0; i < m; ++i) a(i, j) = d(rng());
  return a;
}

Vector gaussian(Index n) { return gaussian(n, 1).col(0); }

DenseMatrix uniform(Index m, Index n, double lo, double hi) {
  std::uniform_real_distribution<double> d(lo, hi);
  DenseMatrix a(m, n);
  for (Index j = 0; j < n; ++j)
    for (Index i = 0; i < m; ++i) a(i, j) = d(rng());
  return a;
}

Vector uniform(Index n, double lo, double hi) { return uniform(n, 1, lo, hi).col(0); }

double rel(const Vector& a, const Vector& b) { return (a - b).norm() / b.norm(); }

const std::vector<std::string> kAll = {"l2", "fisher-rao", "h1", "h-1", "hdot1", "hdot-1", "w2"};

Vector fd_gradient(const std::function<double(const Vector&)>& f, const Vector& x, double h) {
  Vector g(x.size());
  for (Index i = 0; i < x.size(); ++i) {
    Vector p = x, q = x;
    p[i] += h;
    q[i] -= h;
    g[i] = (f(p) - f(q)) / (2.0 * h);
  }
  return g;
}

Index svd_rank(const DenseMatrix& a) {
  Eigen::JacobiSVD<DenseMatrix> svd(a);
  const Vector s = svd.singularValues();
  Index r = 0;
  for (Index i = 0; i < s.size(); ++i) r += s(i) > kSvdRankTol * s(0);
  return r;
}

DenseMatrix svd_pinv(const DenseMatrix& a) {
  Eigen::JacobiSVD<DenseMatrix> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vector s = svd.singularValues();
  Vector sinv = Vector::Zero(s.size());
  for (Index i = 0; i < s.size(); ++i)
    if (s(i) > kSvdRankTol * s(0)) sinv(i) = 1.0 / s(i);
  return svd.matrixV() * sinv.asDiagonal() * svd.matrixU().transpose();
}

NgdConfig tight() {
  NgdConfig cfg;
  cfg.cg_tol = 1e-13;
  cfg.cg_max_iter = 10000;
  return cfg;
}

GaussianComponent iso(double w, double mx, double my) { return {w, {mx, my}, {0.6, 0.0, 0.6}}; }

const Grid kOmega = Grid::plane(70, 70, {-2.75, -2.75}, {7.25, 7.25});

GaussianMixtureModel mixture(std::vector<FreeParameter> free = {{0, MixtureField::mean_x}, {0, MixtureField::mean_y}}) {
  GaussianMixtureModel m(kOmega, {iso(0.2, 5, 3), iso(0.8, 4, 3)}, std::move(free));
  m.set_target(m.density({iso(0.3, 1, 3), iso(0.7, 3, 2)}));
  return m;
}

struct Toy {
  LinearToyModel model{Grid::plane(5, 10, {0, 0}, {1, 1}), uniform(50, 10, 0.1, 1.0)};
  Vector theta = uniform(10, 0.5, 1.5);
  Vector rho;
  Toy() {
    model.set_target(model.a() * uniform(10, 0.5, 1.5));
    rho = model.forward(theta);
  }
};

WaveFwiSetup small_wave(Index n, Index sources = 2, Index nt = 80) {
  WaveFwiSetup s = WaveFwiSetup::surface(n, n, sources);
  s.nt = nt;
  s.sponge_width = 6;
  return s;
}

Vector layered(Index n, double top, double bottom) {
  Vector m(n * n);
  for (Index z = 0; z < n; ++z) {
    const double c = top + (bottom - top) * static_cast<double>(z) / static_cast<double>(n - 1);
    m.segment(z * n, n).setConstant(1.0 / (c * c));
  }
  return m;
}

struct Verdict {
  bool pass = true;
  std::ostringstream detail;
  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [failed: " << what << "]";
    }
  }
};

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2e", v);
  return buf;
}

// ------------------------------------------------------------------------ 1

void gradient_oracles(Verdict& v) {
  {
    GaussianMixtureModel m = mixture();
    const Vector theta = (Vector(2) << 3.7, 2.2).finished();
    const Vector g = m.jacobian(theta).transpose() * m.grad_rho(m.forward(theta));
    const double e = rel(g, fd_gradient([&](const Vector& t) { return m.loss(m.forward(t)); }, theta, 1e-5));
    v.detail << " mixture=" << sci(e);
    v.require(e < kFdExplicit, "mixture");
  }
  {
    Toy t;
    const Vector g = gradient_adjoint(t.model, t.model.grad_rho(t.rho));
    const double e = rel(g, fd_gradient([&](const Vector& x) { return t.model.loss(t.model.forward(x)); }, t.theta, 1e-5));
    v.detail << " toy=" << sci(e);
    v.require(e < kFdExplicit, "toy");
  }
  {
    WaveFwiModel w(small_wave(8));
    Vector truth = layered(8, 1.5, 2.0);
    truth.segment(3 * 8 + 2, 4).setConstant(1.0 / (1.7 * 1.7));
    w.set_target(w.forward(truth));
    const Vector m0 = layered(8, 1.5, 1.9);
    const Vector g = gradient_adjoint(w, w.grad_rho(w.forward(m0)));
    const double e = rel(g, fd_gradient([&](const Vector& x) { return w.loss(w.forward(x)); }, m0, 1e-6));
    v.detail << " wave=" << sci(e);
    v.require(e < kFdWave, "wave");
  }
}

// ------------------------------------------------------------------------ 2

void path_equivalence_on(ImplicitModel& model, const Vector& rho, const std::string& tag, Verdict& v) {
  const Vector g = model.grad_rho(rho);
  const DenseMatrix z = assemble_jacobian(model);
  double worst = 0.0;
  for (const auto& name : kAll) {
    const MetricPtr m = model.make_metric(parse_metric_kind(name), rho);
    const Vector ex = direction_explicit(z, *m, g).eta;
    const Vector im = direction_implicit(model, *m, implicit_rhs(model, *m, g), tight()).eta;
    const double e = rel(im, ex);
    worst = std::max(worst, e);
    v.require(e <= kPathEq, tag + " " + name + " " + sci(e));
  }
  v.detail << " " << tag << "=" << sci(worst);
}

void path_equivalence(Verdict& v) {
  Toy t;
  path_equivalence_on(t.model, t.rho, "toy", v);
  // 4 sources and 160 steps keep cond(G_L) near 1e10; 2 sources and 80 steps reach 1e14
  WaveFwiModel w(small_wave(12, 4, 160));
  Vector truth = layered(12, 1.5, 2.0);
  truth.segment(5 * 12 + 4, 4).setConstant(1.0 / (1.7 * 1.7));
  w.set_target(w.forward(truth));
  const Vector rho = w.forward(layered(12, 1.5, 1.9));
  path_equivalence_on(w, rho, "wave12", v);
}

// ------------------------------------------------------------------------ 3

void metric_identities(Verdict& v) {
  const Grid g = Grid::plane(9, 9, {0, 0}, {1, 1});
  const Vector rho = uniform(81, 0.2, 2.0);
  double worst = 0.0;
  for (const auto& name : kAll) {
    const MetricKind kind = parse_metric_kind(name);
    const auto m = build_metric(kind, g, kind.state_dependent() ? std::optional<Vector>(rho) : std::nullopt);
    const DenseMatrix z = gaussian(81, 6);
    const DenseMatrix gm = info_matrix(*m, z).g;
    for (Index i = 0; i < 6; ++i)
      for (Index j = 0; j < 6; ++j) {
        const double e = m->apply_L(z.col(i)).dot(m->apply_L(z.col(j)));
        const double d = std::abs(gm(i, j) - e) / std::max(1.0, std::abs(e));
        worst = std::max(worst, d);
      }
  }
  v.detail << " entrywise=" << sci(worst);
  v.require(worst <= kEntrywise, "entrywise");

  // W2 against the unweighted central-difference divergence at constant density
  const Grid g2 = Grid::plane(8, 8, {0, 0}, {1, 1});
  const DenseMatrix z = gaussian(64, 5);
  const Vector grad = gaussian(64);
  const Vector eta0 = direction_explicit(z, *build_metric(MetricKind::wasserstein(0.0), g2, Vector(Vector::Ones(64))), grad).eta;
  double worst_c = 0.0;
  for (double c : {1.0, 0.25, 3.0}) {
    const auto w2 = build_metric(MetricKind::wasserstein(), g2, Vector(Vector::Constant(64, c)));
    const Vector eta = direction_explicit(z, *w2, grad).eta;
    const double e = rel(eta, Vector(c * eta0));
    if (c == 1.0) v.detail << " w2_vs_unweighted=" << sci(e);
    worst_c = std::max(worst_c, e);
  }
  v.detail << " c_law=" << sci(worst_c);
  v.require(worst_c <= kConstDensity, "constant density");
}

// ------------------------------------------------------------------------ 4

void gauss_newton(Verdict& v) {
  GaussianMixtureModel m = mixture({{0, MixtureField::mean_x}, {0, MixtureField::mean_y}, {1, MixtureField::weight}});
  double worst = 0.0;
  for (const Vector& theta : {Vector((Vector(3) << 5.0, 3.0, 0.8).finished()), Vector((Vector(3) << 2.9, 1.6, 0.65).finished())}) {
    const Vector rho = m.forward(theta);
    const DenseMatrix z = m.jacobian(theta);
    const Vector gn = -(z.transpose() * z).llt().solve(z.transpose() * (rho - m.target()));
    const Vector eta = direction_explicit(z, *m.make_metric(MetricKind::l2(), rho), m.grad_rho(rho)).eta;
    worst = std::max(worst, rel(eta, gn));
  }
  v.detail << " rel=" << sci(worst);
  v.require(worst <= kGaussNewton, "gauss-newton");
}

// ------------------------------------------------------------------------ 5

void mixture_reproduction(Verdict& v) {
  const ExperimentConfig cfg = load_config(std::filesystem::path(NATGRAD_CONFIG_DIR) / "gaussian_mixture.json");

  // brute-force minimizer: coarse sweep over the domain, then a local fine sweep
  GaussianMixtureModel probe = mixture();
  auto f = [&](double x, double y) { return probe.loss(probe.forward((Vector(2) << x, y).finished())); };
  double bx = 0, by = 0, best = std::numeric_limits<double>::infinity();
  for (double x = -2.75; x <= 7.25 + 1e-9; x += 0.05)
    for (double y = -2.75; y <= 7.25 + 1e-9; y += 0.05)
      if (const double l = f(x, y); l < best) best = l, bx = x, by = y;
  const double cx = bx, cy = by;
  for (double x = cx - 0.05; x <= cx + 0.05 + 1e-12; x += 0.001)
    for (double y = cy - 0.05; y <= cy + 0.05 + 1e-12; y += 0.001)
      if (const double l = f(x, y); l < best) best = l, bx = x, by = y;
  const Vector star = (Vector(2) << bx, by).finished();
  v.detail << " minimizer=(" << bx << "," << by << ")";

  std::vector<std::pair<std::string, double>> finals;
  for (const std::string name : {"gd", "l2", "fisher-rao", "h1", "h-1", "w2"}) {
    BuiltModel built = build_model(cfg);
    const auto res = optimize(*built.model, built.theta0, solver_for(cfg, name));
    bool mono = true;
    for (std::size_t i = 1; i < res.records.size(); ++i) mono = mono && res.records[i].loss < res.records[i - 1].loss;
    v.require(mono && res.records.size() > 1, name + " not monotone");
    const double dist = (res.theta - star).norm();
    v.detail << " " << name << ":f=" << res.records.back().loss << ",d=" << dist;
    if (name == "w2")
      v.require(dist <= kW2Basin, "w2 distance");
    else
      v.require(dist > kOtherBasin, name + " reached the global basin");
    finals.emplace_back(name, res.records.back().loss);
  }
  const double w2 = finals.back().second;
  for (std::size_t i = 0; i + 1 < finals.size(); ++i) v.require(w2 < finals[i].second, "w2 not strictly smallest");
}

// ------------------------------------------------------------------------ 6

void fwi_budget(Verdict& v) {
  const ExperimentConfig cfg = load_config(std::filesystem::path(NATGRAD_CONFIG_DIR) / "fwi_layered.json");
  std::vector<std::pair<std::string, double>> finals;
  for (const std::string name : {"gd", "l2", "hdot1", "hdot-1", "w2"}) {
    BuiltModel built = build_model(cfg);
    NgdConfig s = solver_for(cfg, name);
    s.max_propagations = kFwiBudget;
    const auto res = optimize(*built.model, built.theta0, s);
    v.require(res.records.back().propagations <= kFwiBudget, name + " over budget");
    finals.emplace_back(name, res.records.back().loss);
    v.detail << " " << name << "=" << sci(res.records.back().loss);
  }
  for (std::size_t i = 1; i < finals.size(); ++i) v.require(finals[i].second <= finals[0].second, finals[i].first + " above gd");
}

// ------------------------------------------------------------------------ 7

void appendix_suites(Verdict& v) {
  double worst = 0.0;
  std::uniform_int_distribution<Index> dim(2, 40);
  for (int trial = 0; trial < 50; ++trial) {
    const Index m = dim(rng()), n = dim(rng());
    const Index r = std::uniform_int_distribution<Index>(1, std::min(m, n))(rng());
    const DenseMatrix a = gaussian(m, r) * gaussian(r, n);
    const Vector b = gaussian(m);
    const auto s = solve_least_squares_min_norm(a, b);
    const Vector want = svd_pinv(a) * b;
    worst = std::max(worst, rel(s.solution, want));
    v.require(s.rank == r, "cpqr rank");
  }
  v.detail << " cpqr=" << sci(worst);
  v.require(worst <= kCpqr, "cpqr");

  // interval counts odd, so interior counts even; up to 80 points
  Index largest = 0;
  for (Index n0 = 2; n0 <= 10; n0 += 2)
    for (Index n1 = 2; n0 * n1 <= 80; n1 += 2) {
      const Grid g = Grid::plane(n0, n1, {0, 0}, {1, 1});
      const WeightedDivergence div(g, uniform(g.size(), 0.05, 3.0));
      const Index rk = svd_rank(DenseMatrix(div.b()));
      v.require(rk == g.size() && div.rank() == g.size(), "B rank " + std::to_string(n0) + "x" + std::to_string(n1));
      largest = std::max(largest, rk);
    }
  v.detail << " B_full_rank_up_to=" << largest;

  double hmax = 0.0;
  for (Index k = 1; k <= 10; ++k) {
    LinearToyModel toy(Grid::line(k, 0, 1), gaussian(k, 3));
    (void)toy.forward(Vector::Zero(3));
    const DenseMatrix h =
        hutchinson_from_probes([&](const Vector& xi) { return apply_jacobian_transpose(toy, xi); }, all_sign_vectors(k));
    hmax = std::max(hmax, (h - toy.a()).cwiseAbs().maxCoeff());
  }
  v.detail << " hutchinson=" << sci(hmax);
  v.require(hmax <= kHutchinson, "hutchinson");
}

// ------------------------------------------------------------------------ 8

void invariance_structure(Verdict& v) {
  Toy t;
  const Vector g = t.model.grad_rho(t.rho);
  const DenseMatrix mix = gaussian(10, 10) + 3.0 * DenseMatrix::Identity(10, 10);
  double reparam = 0.0, ortho = 0.0;
  for (const auto& name : kAll) {
    const MetricPtr m = t.model.make_metric(parse_metric_kind(name), t.rho);
    const Vector eta = direction_explicit(t.model.a(), *m, g).eta;
    const Vector a = t.model.a() * eta;
    const Vector b = t.model.a() * mix * direction_explicit(t.model.a() * mix, *m, g).eta;
    reparam = std::max(reparam, rel(b, a));
    const DenseMatrix y = m->apply_L_columns(t.model.a());
    ortho = std::max(ortho, (y.transpose() * (m->apply_Lt_pinv(g) + y * eta)).norm() / g.norm());
  }
  v.detail << " reparam=" << sci(reparam) << " ortho=" << sci(ortho);
  v.require(reparam <= kReparam, "reparameterization");
  v.require(ortho <= kOrtho, "orthogonality");

  WaveFwiModel w(small_wave(8));
  const Vector rho = w.forward(Vector::Constant(64, 1.0 / 2.25));
  double sym = 0.0;
  for (const auto& name : kAll) {
    const MetricPtr m = w.make_metric(parse_metric_kind(name), rho);
    const Vector a = gaussian(64), b = gaussian(64);
    const double x = gl_action(w, *m, a).dot(b);
    const double y = a.dot(gl_action(w, *m, b));
    sym = std::max(sym, std::abs(x - y) / std::abs(x));
  }
  v.detail << " gl_sym=" << sci(sym);
  v.require(sym <= kGlSym, "gl_action symmetry");

  // GD: 1 forward + 1 backward per iteration, per source on the wave model
  {
    WaveFwiModel wave(small_wave(8, 3));
    wave.set_target(wave.forward(layered(8, 1.5, 2.0)));
    wave.counter().reset();
    NgdConfig cfg;
    cfg.method = "gd";
    cfg.step_rule = StepRule::fixed;
    cfg.step0 = 1e-4;
    cfg.max_iters = 4;
    const auto res = optimize(wave, layered(8, 1.5, 1.9), cfg);
    bool ok = res.records.size() == 5 && res.records[0].propagations == 3;
    for (std::size_t i = 1; ok && i < res.records.size(); ++i) ok = res.records[i].propagations - res.records[i - 1].propagations == 6;
    v.require(ok, "gd accounting");
  }
  // implicit NGD: +1 linearized + 1 backward per CG product
  {
    const MetricPtr m = w.make_metric(MetricKind::sobolev(-1, true), rho);
    const PropagationCounter before = w.counter();
    NgdConfig cfg;
    cfg.cg_max_iter = 7;
    cfg.cg_tol = 1e-300;
    const auto d = direction_implicit(w, *m, gaussian(64), cfg);
    const PropagationCounter& after = w.counter();
    v.require(after.linearized - before.linearized == 2 * d.cg_iterations && after.adjoint - before.adjoint == 2 * d.cg_iterations &&
                  after.forward == before.forward && d.cg_iterations == 7,
              "cg accounting");
    v.detail << " cg_products=" << d.cg_iterations;
  }
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    void (*run)(Verdict&);
  };
  const Criterion all[] = {
      {1, "gradient-oracles", gradient_oracles},       {2, "path-equivalence", path_equivalence},
      {3, "metric-identities", metric_identities},     {4, "gauss-newton-equivalence", gauss_newton},
      {5, "mixture-reproduction", mixture_reproduction}, {6, "fwi-equal-budget", fwi_budget},
      {7, "appendix-suites", appendix_suites},         {8, "invariance-and-structure", invariance_structure},
  };
  bool ok = true;
  for (const auto& c : all) {
    Verdict v;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      c.run(v);
    } catch (const std::exception& e) {
      v.pass = false;
      v.detail << " [exception: " << e.what() << "]";
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%s %d %s%s (%.1fs)\n", v.pass ? "PASS" : "FAIL", c.id, c.name, v.detail.str().c_str(), secs);
    std::fflush(stdout);
    ok = ok && v.pass;
  }
  return ok ? 0 : 1;
}
