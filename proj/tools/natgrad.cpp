// natgrad run|compare|check -c <config> [--seed N] [--out DIR] [-m a,b,c]
//
// Exit codes: 0 ok, 1 config or IO error, 2 stagnation before max_iters,
// 3 failed check.

#include "natgrad/experiment.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <sstream>

namespace {

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

void print_run(const natgrad::RunOutcome& r) {
  const auto& last = r.result.records.back();
  std::printf("%s: iterations %lld, loss %.6e, propagations %lld, stop %s\n", r.method.c_str(),
              static_cast<long long>(last.iter), last.loss, static_cast<long long>(last.propagations),
              natgrad::stop_reason_name(r.result.stop));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Natural-gradient descent experiments"};
  app.require_subcommand(1);
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  std::string methods;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", config_path, "experiment config (JSON)")->required();
    sub->add_option("--seed", seed, "override the config seed");
    sub->add_option("--out", out_dir, "override the output directory");
  };
  CLI::App* run = app.add_subcommand("run", "run the configured method");
  add_common(run);
  CLI::App* compare = app.add_subcommand("compare", "run several methods on one model");
  add_common(compare);
  compare->add_option("-m,--methods", methods, "comma-separated methods, e.g. gd,l2,w2")->required();
  CLI::App* check = app.add_subcommand("check", "run the verification checks");
  add_common(check);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    natgrad::ExperimentConfig cfg = natgrad::load_config(config_path);
    if (seed) cfg.seed = *seed;
    if (out_dir) cfg.output.directory = *out_dir;

    if (run->parsed()) {
      const natgrad::NgdConfig solver = natgrad::solver_for(cfg);
      (void)natgrad::build_model(cfg);  // fail before touching the output directory
      const auto r = natgrad::run_method(cfg, solver.method, cfg.output.directory);
      print_run(r);
      return r.result.stop == natgrad::StopReason::stagnation ? 2 : 0;
    }
    if (compare->parsed()) {
      const auto list = split_csv(methods);
      if (list.empty()) throw natgrad::ConfigError("no methods given");
      for (const auto& m : list) (void)natgrad::solver_for(cfg, m);
      (void)natgrad::build_model(cfg);
      std::vector<natgrad::RunOutcome> runs;
      for (const auto& m : list) {
        runs.push_back(natgrad::run_method(cfg, m, cfg.output.directory / m));
        print_run(runs.back());
      }
      const std::string table = natgrad::summary_csv(runs);
      natgrad::write_text(cfg.output.directory / "summary.csv", table);
      std::cout << table;
      return 0;
    }
    const auto results = natgrad::run_checks(cfg);
    bool ok = true;
    for (const auto& r : results) {
      std::printf("%s %s value=%.3e tol=%.1e\n", r.passed ? "PASS" : "FAIL", r.name.c_str(), r.value, r.tolerance);
      ok = ok && r.passed;
    }
    return ok ? 0 : 3;
  } catch (const natgrad::ConfigError& e) {
    std::fprintf(stderr, "natgrad: config error: %s\n", e.what());
    return 1;
  } catch (const natgrad::IoError& e) {
    std::fprintf(stderr, "natgrad: io error: %s\n", e.what());
    return 1;
  } catch (const std::filesystem::filesystem_error& e) {
    std::fprintf(stderr, "natgrad: io error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "natgrad: error: %s\n", e.what());
    return 1;
  }
}
