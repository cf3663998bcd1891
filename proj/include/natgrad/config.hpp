// JSON experiment configuration. Field names are documented in README.md.

#ifndef NATGRAD_CONFIG_HPP
#define NATGRAD_CONFIG_HPP

#include "natgrad/io.hpp"
#include "natgrad/models/gaussian_mixture.hpp"
#include "natgrad/models/linear_toy.hpp"
#include "natgrad/models/wave_fwi.hpp"
#include "natgrad/ngd.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

namespace natgrad {

using Json = nlohmann::json;

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct OutputConfig {
  std::filesystem::path directory = "out";
  Index snapshot_every = 0;
};

struct ExperimentConfig {
  Json model;
  Json solver = Json::object();
  Json methods = Json::object();  // per-method solver overrides
  OutputConfig output;
  std::uint64_t seed = 0;
  std::optional<std::vector<double>> reference_theta;
  std::filesystem::path base_dir;
};

namespace detail {

inline void require_keys(const Json& j, const std::string& where, const std::set<std::string>& allowed) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, _] : j.items()) {
    if (!allowed.contains(key)) throw ConfigError(where + ": unknown key '" + key + "'");
  }
}

template <class T>
T get(const Json& j, const std::string& key, const std::string& where) {
  if (!j.contains(key)) throw ConfigError(where + ": missing '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const Json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

template <class T>
T get_or(const Json& j, const std::string& key, T fallback, const std::string& where) {
  return j.contains(key) ? get<T>(j, key, where) : fallback;
}

inline Vector to_vector(const std::vector<double>& v) {
  return Eigen::Map<const Vector>(v.data(), static_cast<Index>(v.size()));
}

inline StepRule parse_step_rule(const std::string& s) {
  if (s == "fixed") return StepRule::fixed;
  if (s == "backtracking") return StepRule::backtracking;
  if (s == "backtracking-normalized") return StepRule::backtracking_normalized;
  throw ConfigError("unknown step_rule: " + s);
}

inline void apply_solver_fields(NgdConfig& c, const Json& j, const std::string& where) {
  require_keys(j, where, {"method", "step_rule", "step0", "ls_shrink", "ls_max_halvings", "armijo", "max_iters",
                          "max_propagations", "damping_lambda", "damping_metric", "cg_tol", "cg_max_iter", "rank_tol",
                          "grad_tol", "minibatch_size", "hutchinson_m"});
  if (j.contains("method")) c.method = get<std::string>(j, "method", where);
  if (j.contains("step_rule")) c.step_rule = parse_step_rule(get<std::string>(j, "step_rule", where));
  c.step0 = get_or(j, "step0", c.step0, where);
  c.ls_shrink = get_or(j, "ls_shrink", c.ls_shrink, where);
  c.ls_max_halvings = get_or(j, "ls_max_halvings", c.ls_max_halvings, where);
  c.armijo = get_or(j, "armijo", c.armijo, where);
  c.max_iters = get_or(j, "max_iters", c.max_iters, where);
  c.max_propagations = get_or(j, "max_propagations", c.max_propagations, where);
  c.damping_lambda = get_or(j, "damping_lambda", c.damping_lambda, where);
  if (j.contains("damping_metric")) {
    try {
      c.damping_metric = parse_metric_kind(get<std::string>(j, "damping_metric", where));
    } catch (const DomainError& e) {
      throw ConfigError(where + ".damping_metric: " + e.what());
    }
  }
  c.cg_tol = get_or(j, "cg_tol", c.cg_tol, where);
  c.cg_max_iter = get_or(j, "cg_max_iter", c.cg_max_iter, where);
  c.rank_tol = get_or(j, "rank_tol", c.rank_tol, where);
  c.grad_tol = get_or(j, "grad_tol", c.grad_tol, where);
  if (j.contains("minibatch_size")) c.minibatch_size = get<Index>(j, "minibatch_size", where);
  if (j.contains("hutchinson_m")) c.hutchinson_m = get<Index>(j, "hutchinson_m", where);
}

inline Grid parse_grid(const Json& j, const std::string& where) {
  require_keys(j, where, {"interior", "lower", "upper"});
  const auto n = get<std::vector<Index>>(j, "interior", where);
  const auto lo = get<std::vector<double>>(j, "lower", where);
  const auto hi = get<std::vector<double>>(j, "upper", where);
  if (n.size() != lo.size() || n.size() != hi.size() || n.empty() || n.size() > 2) {
    throw ConfigError(where + ": interior/lower/upper must have matching length 1 or 2");
  }
  try {
    Grid g = n.size() == 1 ? Grid::line(n[0], lo[0], hi[0]) : Grid::plane(n[0], n[1], {lo[0], lo[1]}, {hi[0], hi[1]});
    g.validate();
    return g;
  } catch (const std::exception& e) {
    throw ConfigError(where + ": " + e.what());
  }
}

inline std::vector<GaussianComponent> parse_components(const Json& j, const std::string& where) {
  if (!j.is_array() || j.empty()) throw ConfigError(where + ": expected a non-empty array");
  std::vector<GaussianComponent> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const std::string w = where + "[" + std::to_string(i) + "]";
    require_keys(j[i], w, {"weight", "mean", "covariance"});
    GaussianComponent c;
    c.weight = get<double>(j[i], "weight", w);
    const auto mean = get<std::vector<double>>(j[i], "mean", w);
    const auto cov = get<std::vector<double>>(j[i], "covariance", w);
    if (mean.size() != 2 || cov.size() != 3) throw ConfigError(w + ": mean needs 2 entries, covariance 3 (sxx, sxy, syy)");
    c.mean = {mean[0], mean[1]};
    c.covariance = {cov[0], cov[1], cov[2]};
    out.push_back(c);
  }
  return out;
}

inline MixtureField parse_field(const std::string& s) {
  if (s == "mean_x") return MixtureField::mean_x;
  if (s == "mean_y") return MixtureField::mean_y;
  if (s == "weight") return MixtureField::weight;
  throw ConfigError("unknown mixture field: " + s);
}

/// Velocity description -> slowness squared on the nz x nx model grid.
inline Vector parse_medium(const Json& j, Index nz, Index nx, const std::filesystem::path& base, const std::string& where) {
  require_keys(j, where, {"constant", "layers", "linear", "file", "file_kind", "inclusions"});
  std::vector<double> rows(static_cast<std::size_t>(nz), 0.0);
  Vector m;
  if (j.contains("constant")) {
    rows.assign(rows.size(), get<double>(j, "constant", where));
    m = slowness_from_velocity_rows(rows, nx);
  } else if (j.contains("layers")) {
    const auto layers = get<std::vector<std::vector<double>>>(j, "layers", where);
    if (layers.empty()) throw ConfigError(where + ".layers: empty");
    for (Index z = 0; z < nz; ++z) {
      double c = layers.front().at(1);
      for (const auto& l : layers) {
        if (l.size() != 2) throw ConfigError(where + ".layers: entries are [top_row, velocity]");
        if (static_cast<double>(z) >= l[0]) c = l[1];
      }
      rows[static_cast<std::size_t>(z)] = c;
    }
    m = slowness_from_velocity_rows(rows, nx);
  } else if (j.contains("linear")) {
    const auto ends = get<std::vector<double>>(j, "linear", where);
    if (ends.size() != 2) throw ConfigError(where + ".linear: expected [top, bottom]");
    for (Index z = 0; z < nz; ++z) {
      const double t = nz > 1 ? static_cast<double>(z) / static_cast<double>(nz - 1) : 0.0;
      rows[static_cast<std::size_t>(z)] = ends[0] + t * (ends[1] - ends[0]);
    }
    m = slowness_from_velocity_rows(rows, nx);
  } else if (j.contains("file")) {
    std::filesystem::path p = get<std::string>(j, "file", where);
    if (p.is_relative()) p = base / p;
    Vector raw;
    try {
      raw = read_raw_field(p, nz * nx);
    } catch (const IoError& e) {
      throw ConfigError(where + ": " + e.what());
    }
    const std::string kind = get_or<std::string>(j, "file_kind", "velocity", where);
    if (kind == "velocity") {
      if (raw.minCoeff() <= 0.0) throw ConfigError(where + ": velocities must be positive");
      m = raw.array().square().inverse().matrix();
    } else if (kind == "slowness2") {
      m = raw;
    } else {
      throw ConfigError(where + ".file_kind: expected velocity or slowness2");
    }
  } else {
    throw ConfigError(where + ": need one of constant, layers, linear, file");
  }
  if (j.contains("inclusions")) {
    for (const auto& inc : j.at("inclusions")) {
      require_keys(inc, where + ".inclusions", {"center", "radius", "velocity"});
      const auto c = get<std::vector<double>>(inc, "center", where + ".inclusions");
      const double r = get<double>(inc, "radius", where + ".inclusions");
      const double v = get<double>(inc, "velocity", where + ".inclusions");
      if (c.size() != 2 || !(v > 0.0)) throw ConfigError(where + ".inclusions: center [z,x] and positive velocity");
      for (Index z = 0; z < nz; ++z) {
        for (Index x = 0; x < nx; ++x) {
          const double dz = static_cast<double>(z) - c[0];
          const double dx = static_cast<double>(x) - c[1];
          if (dz * dz + dx * dx <= r * r) m[z * nx + x] = 1.0 / (v * v);
        }
      }
    }
  }
  if (!m.allFinite() || m.minCoeff() <= 0.0) throw ConfigError(where + ": medium must be positive");
  return m;
}

inline std::vector<WaveCell> parse_cells(const Json& j, const std::string& where) {
  std::vector<WaveCell> out;
  for (const auto& c : j) {
    const auto v = c.get<std::vector<Index>>();
    if (v.size() != 2) throw ConfigError(where + ": cells are [z, x]");
    out.push_back({v[0], v[1]});
  }
  return out;
}

}  // namespace detail

inline ExperimentConfig parse_config(const Json& root, const std::filesystem::path& base_dir = {}) {
  using namespace detail;
  require_keys(root, "config", {"model", "solver", "methods", "output", "seed", "reference_theta"});
  ExperimentConfig cfg;
  cfg.base_dir = base_dir;
  if (!root.contains("model")) throw ConfigError("config: missing 'model'");
  cfg.model = root.at("model");
  if (!cfg.model.is_object() || !cfg.model.contains("kind")) throw ConfigError("model: missing 'kind'");
  if (root.contains("solver")) cfg.solver = root.at("solver");
  if (root.contains("methods")) cfg.methods = root.at("methods");
  if (!cfg.methods.is_object()) throw ConfigError("methods: expected an object");
  if (root.contains("output")) {
    const Json& o = root.at("output");
    require_keys(o, "output", {"directory", "snapshot_every"});
    cfg.output.directory = get_or<std::string>(o, "directory", "out", "output");
    cfg.output.snapshot_every = get_or<Index>(o, "snapshot_every", 0, "output");
    if (cfg.output.snapshot_every < 0) throw ConfigError("output.snapshot_every must be >= 0");
  }
  cfg.seed = get_or<std::uint64_t>(root, "seed", 0, "config");
  if (root.contains("reference_theta")) cfg.reference_theta = get<std::vector<double>>(root, "reference_theta", "config");
  return cfg;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  Json root;
  try {
    root = Json::parse(in, nullptr, true, true);
  } catch (const Json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return parse_config(root, path.parent_path());
}

/// Solver settings for one method: "solver" section, then the method's
/// entry under "methods", then the method name itself.
inline NgdConfig solver_for(const ExperimentConfig& cfg, const std::optional<std::string>& method = std::nullopt) {
  NgdConfig c;
  detail::apply_solver_fields(c, cfg.solver, "solver");
  const std::string name = method.value_or(c.method);
  if (cfg.methods.contains(name)) detail::apply_solver_fields(c, cfg.methods.at(name), "methods." + name);
  c.method = name;
  c.seed = cfg.seed;
  try {
    c.validate();
  } catch (const DomainError& e) {
    throw ConfigError(std::string("solver: ") + e.what());
  }
  return c;
}

struct BuiltModel {
  std::unique_ptr<Model> model;
  Vector theta0;
  std::optional<Vector> reference_theta;
  FieldHeader theta_header;
};

inline BuiltModel build_model(const ExperimentConfig& cfg) {
  using namespace detail;
  const Json& j = cfg.model;
  const std::string kind = get<std::string>(j, "kind", "model");
  BuiltModel out;
  try {
    if (kind == "gaussian-mixture") {
      require_keys(j, "model", {"kind", "grid", "components", "free", "reference_components", "initial_theta"});
      const Grid grid = parse_grid(j.at("grid"), "model.grid");
      if (grid.dim != 2) throw ConfigError("model.grid: gaussian-mixture needs a 2D grid");
      auto comps = parse_components(j.at("components"), "model.components");
      std::vector<FreeParameter> free;
      for (const auto& f : j.at("free")) {
        require_keys(f, "model.free", {"component", "field"});
        free.push_back({get<std::size_t>(f, "component", "model.free"), parse_field(get<std::string>(f, "field", "model.free"))});
      }
      auto model = std::make_unique<GaussianMixtureModel>(grid, comps, free);
      const auto ref = parse_components(j.at("reference_components"), "model.reference_components");
      model->set_target(model->density(ref));
      out.theta0 = j.contains("initial_theta") ? to_vector(get<std::vector<double>>(j, "initial_theta", "model"))
                                               : model->theta_of(comps);
      out.theta_header.dims = {model->param_dim()};
      out.model = std::move(model);
    } else if (kind == "linear-toy") {
      require_keys(j, "model", {"kind", "grid", "a", "a_random", "theta_true", "target", "initial_theta", "density_transform"});
      const Grid grid = parse_grid(j.at("grid"), "model.grid");
      DenseMatrix a;
      if (j.contains("a")) {
        const auto rows = get<std::vector<std::vector<double>>>(j, "a", "model");
        if (rows.empty()) throw ConfigError("model.a: empty");
        a.resize(static_cast<Index>(rows.size()), static_cast<Index>(rows.front().size()));
        for (std::size_t r = 0; r < rows.size(); ++r) {
          if (rows[r].size() != rows.front().size()) throw ConfigError("model.a: ragged rows");
          for (std::size_t c = 0; c < rows[r].size(); ++c) a(static_cast<Index>(r), static_cast<Index>(c)) = rows[r][c];
        }
      } else if (j.contains("a_random")) {
        const Json& r = j.at("a_random");
        require_keys(r, "model.a_random", {"cols", "seed", "low", "high"});
        const auto p = get<Index>(r, "cols", "model.a_random");
        const auto seed = get_or<std::uint64_t>(r, "seed", 0, "model.a_random");
        const double lo = get_or(r, "low", -1.0, "model.a_random");
        const double hi = get_or(r, "high", 1.0, "model.a_random");
        if (p < 1 || !(hi > lo)) throw ConfigError("model.a_random: need cols >= 1 and high > low");
        std::mt19937_64 rng(seed);
        std::uniform_real_distribution<double> u(lo, hi);
        a.resize(grid.size(), p);
        for (Index c = 0; c < p; ++c) {
          for (Index rr = 0; rr < grid.size(); ++rr) a(rr, c) = u(rng);
        }
      } else {
        throw ConfigError("model: linear-toy needs 'a' or 'a_random'");
      }
      const std::string tr = get_or<std::string>(j, "density_transform", "none", "model");
      if (tr != "none" && tr != "affine-probability") throw ConfigError("model.density_transform: none or affine-probability");
      auto model = std::make_unique<LinearToyModel>(grid, a, tr == "none" ? DensityTransform::none : DensityTransform::affine_probability);
      if (j.contains("theta_true")) {
        const Vector t = to_vector(get<std::vector<double>>(j, "theta_true", "model"));
        if (t.size() != a.cols()) throw ConfigError("model.theta_true: length != columns of A");
        model->set_target(a * t);
        out.reference_theta = t;
      } else if (j.contains("target")) {
        const Vector t = to_vector(get<std::vector<double>>(j, "target", "model"));
        if (t.size() != a.rows()) throw ConfigError("model.target: length != grid size");
        model->set_target(t);
      } else {
        throw ConfigError("model: linear-toy needs 'theta_true' or 'target'");
      }
      out.theta0 = j.contains("initial_theta") ? to_vector(get<std::vector<double>>(j, "initial_theta", "model"))
                                               : Vector(Vector::Zero(a.cols()));
      if (out.theta0.size() != a.cols()) throw ConfigError("model.initial_theta: length != columns of A");
      model->counter().reset();
      out.theta_header.dims = {a.cols()};
      out.model = std::move(model);
    } else if (kind == "wave-fwi") {
      require_keys(j, "model", {"kind", "nz", "nx", "h", "dt", "nt", "sponge_width", "sponge_strength", "cfl_factor",
                                "peak_frequency", "amplitude", "sources", "source_row", "receivers", "true_model",
                                "initial_model", "adjoint_fault"});
      const Index nz = get<Index>(j, "nz", "model");
      const Index nx = get<Index>(j, "nx", "model");
      const Index row = get_or<Index>(j, "source_row", 0, "model");
      WaveFwiSetup s;
      if (j.contains("sources") && j.at("sources").is_number_integer()) {
        s = WaveFwiSetup::surface(nz, nx, j.at("sources").get<Index>(), row);
      } else {
        s = WaveFwiSetup::surface(nz, nx, 1, row);
        if (j.contains("sources")) s.sources = parse_cells(j.at("sources"), "model.sources");
      }
      if (j.contains("receivers") && j.at("receivers").is_array()) s.receivers = parse_cells(j.at("receivers"), "model.receivers");
      s.h = get_or(j, "h", s.h, "model");
      s.dt = get_or(j, "dt", s.dt, "model");
      s.nt = get_or(j, "nt", s.nt, "model");
      s.sponge_width = get_or(j, "sponge_width", s.sponge_width, "model");
      s.sponge_strength = get_or(j, "sponge_strength", s.sponge_strength, "model");
      s.cfl_factor = get_or(j, "cfl_factor", s.cfl_factor, "model");
      s.peak_frequency = get_or(j, "peak_frequency", s.peak_frequency, "model");
      s.amplitude = get_or(j, "amplitude", s.amplitude, "model");
      auto model = std::make_unique<WaveFwiModel>(s);
      const Vector m_true = parse_medium(j.at("true_model"), nz, nx, cfg.base_dir, "model.true_model");
      const Vector m0 = parse_medium(j.at("initial_model"), nz, nx, cfg.base_dir, "model.initial_model");
      try {
        model->check_admissible(m_true);
        model->check_admissible(m0);
      } catch (const InadmissibleParameter& e) {
        throw ConfigError(std::string("model: ") + e.what());
      }
      model->set_target(model->forward(m_true));
      model->counter().reset();
      model->inject_adjoint_fault(get_or(j, "adjoint_fault", 0.0, "model"));
      out.theta0 = m0;
      out.reference_theta = m_true;
      out.theta_header.dims = {nz, nx};
      out.theta_header.spacing = {s.h, s.h};
      out.model = std::move(model);
    } else {
      throw ConfigError("model.kind: unknown '" + kind + "'");
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("model: ") + e.what());
  } catch (const std::exception& e) {
    throw ConfigError(std::string("model: ") + e.what());
  }
  if (out.theta0.size() != out.model->param_dim()) throw ConfigError("model.initial_theta: wrong length");
  if (cfg.reference_theta) {
    out.reference_theta = detail::to_vector(*cfg.reference_theta);
    if (out.reference_theta->size() != out.model->param_dim()) throw ConfigError("reference_theta: wrong length");
  }
  out.model->counter().reset();
  return out;
}

}  // namespace natgrad

#endif  // NATGRAD_CONFIG_HPP
