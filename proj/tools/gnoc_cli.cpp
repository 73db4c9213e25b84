// Command-line front end: simulate | solve | compare | verify.
// Exit codes: 0 ok, 1 runtime failure, 2 configuration error, 3 verification failure.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "gnoc/experiment.hpp"

namespace {

enum Exit { kOk = 0, kRuntime = 1, kConfig = 2, kVerify = 3 };

void print_iterations(const gnoc::SolveReport& rep) {
  for (const auto& it : rep.iterates)
    std::printf("k=%zu J=%.6g data=%.6g reg=%.6g gamma=%.4g\n", it.k, it.cost.total, it.cost.data_misfit,
                it.cost.regularization(), it.gamma);
  std::printf("termination: %s (%s)\n", gnoc::to_string(rep.termination).c_str(), rep.message.c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Projected Gauss-Newton for ODE tracking problems"};
  app.require_subcommand(1, 1);
  std::string config_path;
  std::optional<std::string> out_dir;
  std::optional<std::uint64_t> seed;
  for (const char* name : {"simulate", "solve", "compare", "verify"}) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("--config", config_path, "experiment config (JSON)")->required();
    sub->add_option("--out", out_dir, "output directory (overrides output.dir)");
    sub->add_option("--seed", seed, "road-profile and verification seed");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }
  const std::string cmd = app.get_subcommands().front()->get_name();

  gnoc::Experiment ex = [&]() -> gnoc::Experiment {
    try {
      gnoc::ExperimentConfig cfg = gnoc::load_config(config_path);
      if (seed) cfg.road.seed = *seed;
      if (out_dir) cfg.out_dir = *out_dir;
      return gnoc::build_experiment(cfg);
    } catch (const gnoc::ConfigError& e) {
      std::cerr << "config error: " << e.what() << '\n';
      std::exit(kConfig);
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << '\n';
      std::exit(kRuntime);
    }
  }();
  const std::string& out = ex.cfg.out_dir;

  try {
    if (cmd == "simulate") {
      gnoc::cmd_simulate(ex, out);
      std::printf("wrote y_ref.csv, u_ref.csv, x_ref.csv to %s (max |y_ref| = %.6g)\n", out.c_str(),
                  gnoc::max_abs(ex.reference.y));
    } else if (cmd == "solve") {
      const auto rep = gnoc::cmd_solve(ex, out);
      print_iterations(rep);
      for (const auto& w : rep.warnings) std::cerr << "warning: " << w << '\n';
    } else if (cmd == "compare") {
      const auto r = gnoc::cmd_compare(ex, out);
      auto cross = [](const std::optional<std::size_t>& k) { return k ? std::to_string(*k) : std::string("never"); };
      std::printf("J0 = %.6g, threshold 0.1*J0 = %.6g\n", r.J0, 0.1 * r.J0);
      std::printf("gauss-newton crosses at iteration %s, final J = %.6g after %zu iterations\n",
                  cross(r.gn_crossing).c_str(), r.gn.iterates.back().cost.total, r.gn.iterates.back().k);
      std::printf("gradient descent crosses at iteration %s, final J = %.6g after %zu iterations\n",
                  cross(r.gd_crossing).c_str(), r.gd.iterates.back().cost.total, r.gd.iterates.back().k);
    } else {
      const auto checks = gnoc::cmd_verify(ex, out, seed ? *seed : ex.cfg.road.seed);
      bool all = true;
      for (const auto& c : checks) {
        all = all && c.passed;
        std::printf("%-26s %s  value=%.3e threshold=%.3e  %s\n", c.name.c_str(),
                    c.skipped ? "SKIP" : (c.passed ? "PASS" : "FAIL"), c.value, c.threshold, c.detail.c_str());
      }
      if (!all) {
        for (const auto& c : checks)
          if (!c.passed) std::cerr << "verification failed: " << c.name << '\n';
        return kVerify;
      }
    }
  } catch (const gnoc::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const gnoc::NotPositiveDefinite& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntime;
  }
  return kOk;
}
