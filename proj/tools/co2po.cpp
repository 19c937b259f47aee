#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "co2po/experiment.hpp"

namespace {

// --seed / --seeds / --out take precedence over the config file
void apply_cli(co2po::ExperimentConfig& cfg, int seed, bool seed_set, int n_seeds,
               const std::string& out) {
  if (seed_set) {
    cfg.run.seeds = {seed};
  } else if (n_seeds > 0) {
    cfg.run.seeds.clear();
    for (int s = 0; s < n_seeds; ++s) cfg.run.seeds.push_back(s);
  }
  if (!out.empty()) cfg.run.out_dir = out;
  cfg.validate();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Co2PO experiment driver"};
  app.require_subcommand(1);

  std::string config_path, out_dir, checkpoint_file, run_dir;
  std::vector<std::string> overrides;
  int seed = 0, n_seeds = 0;
  bool seed_set = false;
  std::vector<int> horizons = {0, 3, 5, 8};

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "experiment config file")->required();
    cmd->add_option("--override", overrides, "dotted key=value config override")->take_all();
    cmd->add_option("--seed", seed, "run a single seed")->each([&](const std::string&) {
      seed_set = true;
    });
    cmd->add_option("--seeds", n_seeds, "run seeds 0..n-1");
    cmd->add_option("--out", out_dir, "output directory");
  };

  auto* train = app.add_subcommand("train", "train across seeds");
  add_common(train);

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint deterministically");
  eval->add_option("--run", run_dir, "seed run directory (with config.json)")->required();
  eval->add_option("--checkpoint", checkpoint_file, "model checkpoint (default: final_model.json)");
  eval->add_option("--seed", seed, "evaluation seed");

  auto* ablate = app.add_subcommand("ablate", "run the method plus its three ablations");
  add_common(ablate);

  auto* sweep = app.add_subcommand("sweep-h", "sweep the hazard lookahead horizon");
  add_common(sweep);
  sweep->add_option("--horizons", horizons, "lookahead horizons to sweep");

  auto* report = app.add_subcommand("report", "merge per-seed metric reports (mean and std)");
  report->add_option("--out", out_dir, "run directory holding seed_* subdirectories")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed() || ablate->parsed() || sweep->parsed()) {
      co2po::ExperimentConfig cfg = co2po::load_config(config_path, overrides);
      apply_cli(cfg, seed, seed_set, n_seeds, out_dir);
      if (train->parsed()) return co2po::cmd_train(cfg);
      if (ablate->parsed()) return co2po::cmd_ablate(cfg);
      return co2po::cmd_sweep_h(cfg, horizons);
    }
    if (eval->parsed()) {
      return co2po::cmd_eval(run_dir, checkpoint_file, static_cast<std::uint64_t>(seed));
    }
    return co2po::cmd_report(out_dir);
  } catch (const co2po::ConfigError& e) {
    std::cerr << e.what() << '\n';
    return 2;
  } catch (const co2po::NumericalError& e) {
    std::cerr << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << e.what() << '\n';
    return 1;
  }
}
