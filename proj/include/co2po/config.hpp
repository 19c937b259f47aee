#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

namespace co2po {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct EnvSection {
  std::string name = "corridor";  // corridor | hazard_goals
  int n_agents = 2;
  int horizon = 200;
  // corridor
  double target_speed = 2.0;
  double proximity_radius = 0.5;
  double accel_gain = 0.25;
  double drag = 0.1;
  double turbulence = 0.05;
  double half_width = 1.0;
  double length = 1000.0;
  double wall_cost = 1.0;
  double proximity_cost = 1.0;
  // hazard_goals
  int grid_w = 12;
  int grid_h = 9;
  int n_hazards = 8;
  double hazard_cost = 1.0;
  double adjacent_cost = 0.5;
  double goal_bonus = 1.0;
  int hazard_view = 3;
};

struct AlgoSection {
  std::string variant = "co2po";
  // co2po | no-blackboard | always-write | no-hazard-loss | mappo-lag-degenerate
  double gamma = 0.96;
  double gae_lambda = 0.95;
  double clip_eps = 0.2;
  double target_kl = 0.016;
  int update_epochs = 10;
  int minibatches = 2;
  double actor_lr = 5e-4;
  double critic_lr = 5e-3;
  double entropy_coef = 0.0;
  double max_grad_norm = 10.0;
  double cost_budget = 25.0;
  double dual_init = 0.1;
  double dual_step = 5e-4;
  double dual_max = 100.0;
  int topk = 3;
  int d_msg = 16;
  int embed_dim = 64;
  int hazard_horizon = 8;
  double hazard_delta = 0.1;
  double write_penalty_coef = 1e-3;
  double hazard_loss_coef = 0.5;
  double wbce_weight_cap = 20.0;
  bool adaptive_threshold = true;
  double tau_init = 0.10;
  double target_write_rate = 0.05;
  double threshold_lr = 0.05;
  double tau_min = 0.05;
  double tau_max = 0.95;
  double write_rate_ema = 0.99;
  int hidden = 64;
  int mlp_layers = 2;
  double log_std_init = -0.6931471805599453;  // log(0.5)
  double log_std_min = -5.0;
  double log_std_max = 1.0;
  std::string optimizer = "adam";  // adam | sgd
  bool share_actor_params = false;
};

struct RunSection {
  long long total_steps = 200000;
  int num_envs = 16;
  int rollout_len = 512;
  std::vector<int> seeds = {0, 1, 2};
  long long eval_interval = 16000;
  int eval_episodes = 10;
  std::string out_dir = "runs/exp";
};

// How the algorithm variant wires the coordination machinery.
struct VariantFlags {
  bool blackboard = true;     // writes and reads happen
  bool force_write = false;   // bypass the gate, w = 1 everywhere
  bool message_head = true;   // F_theta runs at all
};

struct ExperimentConfig {
  EnvSection env;
  AlgoSection algo;
  RunSection run;

  void validate() const;  // throws ConfigError
  VariantFlags variant_flags() const;
  // effective coefficients after variant adjustments
  double effective_hazard_coef() const;
  double effective_write_penalty() const;

  nlohmann::ordered_json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& j);  // rejects unknown keys
};

// Loads a config file, resolving its `extends` chain (paths relative to each
// file) and applying dotted key=value overrides, then validates.
ExperimentConfig load_config(const std::filesystem::path& path,
                             const std::vector<std::string>& overrides = {});

ExperimentConfig config_from_text(const std::string& text,
                                  const std::vector<std::string>& overrides = {});

}  // namespace co2po
