#include "co2po/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace co2po {

namespace {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

template <typename T>
void read_field(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string("config: bad value for '") + key + "'");
  }
}

void check_keys(const json& j, const std::string& section, const std::set<std::string>& known) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!known.count(it.key())) {
      throw ConfigError("config: unknown key '" + section + it.key() + "'");
    }
  }
}

const std::set<std::string> kEnvKeys = {
    "name",       "n_agents",    "horizon",       "target_speed", "proximity_radius",
    "accel_gain", "drag",        "turbulence",    "half_width",   "length",
    "wall_cost",  "proximity_cost", "grid_w",     "grid_h",       "n_hazards",
    "hazard_cost", "adjacent_cost", "goal_bonus", "hazard_view"};

const std::set<std::string> kAlgoKeys = {
    "variant",        "gamma",          "gae_lambda",      "clip_eps",
    "target_kl",      "update_epochs",  "minibatches",     "actor_lr",
    "critic_lr",      "entropy_coef",   "max_grad_norm",   "cost_budget",
    "dual_init",      "dual_step",      "dual_max",        "topk",
    "d_msg",          "embed_dim",      "hazard_horizon",  "hazard_delta",
    "write_penalty_coef", "hazard_loss_coef", "wbce_weight_cap", "adaptive_threshold",
    "tau_init",       "target_write_rate", "threshold_lr", "tau_min",
    "tau_max",        "write_rate_ema", "hidden",          "mlp_layers",
    "log_std_init",   "log_std_min",    "log_std_max",     "optimizer",
    "share_actor_params"};

const std::set<std::string> kRunKeys = {"total_steps", "num_envs",      "rollout_len", "seeds",
                                        "eval_interval", "eval_episodes", "out_dir"};

void merge_into(json& base, const json& overlay) {
  for (auto it = overlay.begin(); it != overlay.end(); ++it) {
    if (it.value().is_object() && base.contains(it.key()) && base.at(it.key()).is_object()) {
      merge_into(base.at(it.key()), it.value());
    } else {
      base[it.key()] = it.value();
    }
  }
}

json resolve_extends(const std::filesystem::path& path, int depth) {
  if (depth > 16) throw ConfigError("config: extends chain too deep (cycle?)");
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path.string() + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config: parse error in '" + path.string() + "': " + e.what());
  }
  if (!j.is_object()) throw ConfigError("config: top level must be an object");
  if (j.contains("extends")) {
    const auto base_rel = j.at("extends").get<std::string>();
    const auto base_path = path.parent_path() / base_rel;
    json base = resolve_extends(base_path, depth + 1);
    j.erase("extends");
    merge_into(base, j);
    return base;
  }
  return j;
}

json parse_override_value(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::exception&) {
    return json(text);  // plain string
  }
}

void apply_override(json& j, const std::string& expr) {
  const auto eq = expr.find('=');
  if (eq == std::string::npos) {
    throw ConfigError("override: expected key=value, got '" + expr + "'");
  }
  const std::string dotted = expr.substr(0, eq);
  const json value = parse_override_value(expr.substr(eq + 1));
  json* node = &j;
  std::stringstream ss(dotted);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  if (parts.empty()) throw ConfigError("override: empty key");
  for (size_t i = 0; i + 1 < parts.size(); ++i) {
    node = &(*node)[parts[i]];
  }
  (*node)[parts.back()] = value;
}

void require_cfg(bool cond, const std::string& msg) {
  if (!cond) throw ConfigError("config: " + msg);
}

}  // namespace

void ExperimentConfig::validate() const {
  require_cfg(env.name == "corridor" || env.name == "hazard_goals",
              "env.name must be corridor or hazard_goals");
  require_cfg(env.n_agents >= 1 && env.n_agents <= 8, "env.n_agents must be in [1, 8]");
  require_cfg(env.horizon >= 1, "env.horizon must be >= 1");
  require_cfg(env.proximity_radius > 0, "env.proximity_radius must be > 0");
  require_cfg(env.half_width > 0 && env.length > 0, "env geometry must be positive");
  require_cfg(env.wall_cost >= 0 && env.proximity_cost >= 0 && env.hazard_cost >= 0 &&
                  env.adjacent_cost >= 0,
              "env costs must be >= 0");
  require_cfg(env.grid_w >= 2 && env.grid_h >= 2, "env grid must be at least 2x2");
  require_cfg(env.n_hazards >= 0, "env.n_hazards must be >= 0");
  require_cfg(env.hazard_view >= 0, "env.hazard_view must be >= 0");

  const std::set<std::string> variants = {"co2po", "no-blackboard", "always-write",
                                          "no-hazard-loss", "mappo-lag-degenerate"};
  require_cfg(variants.count(algo.variant) == 1, "algo.variant unknown: " + algo.variant);
  require_cfg(algo.gamma > 0 && algo.gamma <= 1, "algo.gamma must be in (0, 1]");
  require_cfg(algo.gae_lambda >= 0 && algo.gae_lambda <= 1, "algo.gae_lambda must be in [0, 1]");
  require_cfg(algo.clip_eps > 0 && algo.clip_eps < 1, "algo.clip_eps must be in (0, 1)");
  require_cfg(algo.target_kl > 0, "algo.target_kl must be > 0");
  require_cfg(algo.update_epochs >= 1, "algo.update_epochs must be >= 1");
  require_cfg(algo.minibatches >= 1, "algo.minibatches must be >= 1");
  require_cfg(algo.actor_lr >= 0 && algo.critic_lr >= 0, "learning rates must be >= 0");
  require_cfg(algo.entropy_coef >= 0, "algo.entropy_coef must be >= 0");
  require_cfg(algo.max_grad_norm > 0, "algo.max_grad_norm must be > 0");
  require_cfg(algo.cost_budget >= 0, "algo.cost_budget must be >= 0");
  require_cfg(algo.dual_init >= 0, "algo.dual_init must be >= 0");
  require_cfg(algo.dual_step >= 0, "algo.dual_step must be >= 0");
  require_cfg(algo.dual_max > 0, "algo.dual_max must be > 0");
  require_cfg(algo.topk >= 1, "algo.topk must be >= 1");
  require_cfg(algo.d_msg >= 1, "algo.d_msg must be >= 1");
  require_cfg(algo.embed_dim >= 1, "algo.embed_dim must be >= 1");
  require_cfg(algo.hazard_horizon >= 0, "algo.hazard_horizon must be >= 0");
  require_cfg(algo.hazard_delta > 0, "algo.hazard_delta must be > 0");
  require_cfg(algo.write_penalty_coef >= 0 && algo.hazard_loss_coef >= 0,
              "loss coefficients must be >= 0");
  require_cfg(algo.wbce_weight_cap >= 1, "algo.wbce_weight_cap must be >= 1");
  require_cfg(algo.tau_init >= 0 && algo.tau_init <= 1, "algo.tau_init must be in [0, 1]");
  require_cfg(algo.target_write_rate > 0 && algo.target_write_rate < 1,
              "algo.target_write_rate must be in (0, 1)");
  require_cfg(algo.threshold_lr > 0, "algo.threshold_lr must be > 0");
  require_cfg(algo.tau_min <= algo.tau_max, "algo.tau_min must be <= tau_max");
  require_cfg(algo.write_rate_ema > 0 && algo.write_rate_ema < 1,
              "algo.write_rate_ema must be in (0, 1)");
  require_cfg(algo.hidden >= 1 && algo.mlp_layers >= 1, "network shape must be positive");
  require_cfg(algo.log_std_min <= algo.log_std_init && algo.log_std_init <= algo.log_std_max,
              "algo.log_std_init must lie inside its bounds");
  require_cfg(algo.optimizer == "adam" || algo.optimizer == "sgd",
              "algo.optimizer must be adam or sgd");

  require_cfg(run.total_steps >= 1, "run.total_steps must be >= 1");
  require_cfg(run.num_envs >= 1, "run.num_envs must be >= 1");
  require_cfg(run.rollout_len >= 2, "run.rollout_len must be >= 2");
  require_cfg(!run.seeds.empty(), "run.seeds must not be empty");
  require_cfg(run.eval_interval >= 1, "run.eval_interval must be >= 1");
  require_cfg(run.eval_episodes >= 1, "run.eval_episodes must be >= 1");
  require_cfg(!run.out_dir.empty(), "run.out_dir must not be empty");
  const int batch = run.rollout_len * run.num_envs;
  require_cfg(batch % algo.minibatches == 0,
              "rollout_len * num_envs must divide into minibatches");
}

VariantFlags ExperimentConfig::variant_flags() const {
  VariantFlags f;
  if (algo.variant == "no-blackboard") {
    f.blackboard = false;
  } else if (algo.variant == "always-write") {
    f.force_write = true;
  } else if (algo.variant == "mappo-lag-degenerate") {
    f.blackboard = false;
    f.message_head = false;
  }
  return f;
}

double ExperimentConfig::effective_hazard_coef() const {
  if (algo.variant == "no-hazard-loss" || algo.variant == "mappo-lag-degenerate") return 0.0;
  return algo.hazard_loss_coef;
}

double ExperimentConfig::effective_write_penalty() const {
  if (algo.variant == "mappo-lag-degenerate") return 0.0;
  return algo.write_penalty_coef;
}

nlohmann::ordered_json ExperimentConfig::to_json() const {
  ojson j;
  ojson e;
  e["name"] = env.name;
  e["n_agents"] = env.n_agents;
  e["horizon"] = env.horizon;
  e["target_speed"] = env.target_speed;
  e["proximity_radius"] = env.proximity_radius;
  e["accel_gain"] = env.accel_gain;
  e["drag"] = env.drag;
  e["turbulence"] = env.turbulence;
  e["half_width"] = env.half_width;
  e["length"] = env.length;
  e["wall_cost"] = env.wall_cost;
  e["proximity_cost"] = env.proximity_cost;
  e["grid_w"] = env.grid_w;
  e["grid_h"] = env.grid_h;
  e["n_hazards"] = env.n_hazards;
  e["hazard_cost"] = env.hazard_cost;
  e["adjacent_cost"] = env.adjacent_cost;
  e["goal_bonus"] = env.goal_bonus;
  e["hazard_view"] = env.hazard_view;
  j["env"] = e;

  ojson a;
  a["variant"] = algo.variant;
  a["gamma"] = algo.gamma;
  a["gae_lambda"] = algo.gae_lambda;
  a["clip_eps"] = algo.clip_eps;
  a["target_kl"] = algo.target_kl;
  a["update_epochs"] = algo.update_epochs;
  a["minibatches"] = algo.minibatches;
  a["actor_lr"] = algo.actor_lr;
  a["critic_lr"] = algo.critic_lr;
  a["entropy_coef"] = algo.entropy_coef;
  a["max_grad_norm"] = algo.max_grad_norm;
  a["cost_budget"] = algo.cost_budget;
  a["dual_init"] = algo.dual_init;
  a["dual_step"] = algo.dual_step;
  a["dual_max"] = algo.dual_max;
  a["topk"] = algo.topk;
  a["d_msg"] = algo.d_msg;
  a["embed_dim"] = algo.embed_dim;
  a["hazard_horizon"] = algo.hazard_horizon;
  a["hazard_delta"] = algo.hazard_delta;
  a["write_penalty_coef"] = algo.write_penalty_coef;
  a["hazard_loss_coef"] = algo.hazard_loss_coef;
  a["wbce_weight_cap"] = algo.wbce_weight_cap;
  a["adaptive_threshold"] = algo.adaptive_threshold;
  a["tau_init"] = algo.tau_init;
  a["target_write_rate"] = algo.target_write_rate;
  a["threshold_lr"] = algo.threshold_lr;
  a["tau_min"] = algo.tau_min;
  a["tau_max"] = algo.tau_max;
  a["write_rate_ema"] = algo.write_rate_ema;
  a["hidden"] = algo.hidden;
  a["mlp_layers"] = algo.mlp_layers;
  a["log_std_init"] = algo.log_std_init;
  a["log_std_min"] = algo.log_std_min;
  a["log_std_max"] = algo.log_std_max;
  a["optimizer"] = algo.optimizer;
  a["share_actor_params"] = algo.share_actor_params;
  j["algo"] = a;

  ojson r;
  r["total_steps"] = run.total_steps;
  r["num_envs"] = run.num_envs;
  r["rollout_len"] = run.rollout_len;
  r["seeds"] = run.seeds;
  r["eval_interval"] = run.eval_interval;
  r["eval_episodes"] = run.eval_episodes;
  r["out_dir"] = run.out_dir;
  j["run"] = r;
  return j;
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (it.key() != "env" && it.key() != "algo" && it.key() != "run") {
      throw ConfigError("config: unknown section '" + it.key() + "'");
    }
  }
  ExperimentConfig cfg;
  if (j.contains("env")) {
    const json& e = j.at("env");
    check_keys(e, "env.", kEnvKeys);
    read_field(e, "name", cfg.env.name);
    read_field(e, "n_agents", cfg.env.n_agents);
    read_field(e, "horizon", cfg.env.horizon);
    read_field(e, "target_speed", cfg.env.target_speed);
    read_field(e, "proximity_radius", cfg.env.proximity_radius);
    read_field(e, "accel_gain", cfg.env.accel_gain);
    read_field(e, "drag", cfg.env.drag);
    read_field(e, "turbulence", cfg.env.turbulence);
    read_field(e, "half_width", cfg.env.half_width);
    read_field(e, "length", cfg.env.length);
    read_field(e, "wall_cost", cfg.env.wall_cost);
    read_field(e, "proximity_cost", cfg.env.proximity_cost);
    read_field(e, "grid_w", cfg.env.grid_w);
    read_field(e, "grid_h", cfg.env.grid_h);
    read_field(e, "n_hazards", cfg.env.n_hazards);
    read_field(e, "hazard_cost", cfg.env.hazard_cost);
    read_field(e, "adjacent_cost", cfg.env.adjacent_cost);
    read_field(e, "goal_bonus", cfg.env.goal_bonus);
    read_field(e, "hazard_view", cfg.env.hazard_view);
  }
  if (j.contains("algo")) {
    const json& a = j.at("algo");
    check_keys(a, "algo.", kAlgoKeys);
    read_field(a, "variant", cfg.algo.variant);
    read_field(a, "gamma", cfg.algo.gamma);
    read_field(a, "gae_lambda", cfg.algo.gae_lambda);
    read_field(a, "clip_eps", cfg.algo.clip_eps);
    read_field(a, "target_kl", cfg.algo.target_kl);
    read_field(a, "update_epochs", cfg.algo.update_epochs);
    read_field(a, "minibatches", cfg.algo.minibatches);
    read_field(a, "actor_lr", cfg.algo.actor_lr);
    read_field(a, "critic_lr", cfg.algo.critic_lr);
    read_field(a, "entropy_coef", cfg.algo.entropy_coef);
    read_field(a, "max_grad_norm", cfg.algo.max_grad_norm);
    read_field(a, "cost_budget", cfg.algo.cost_budget);
    read_field(a, "dual_init", cfg.algo.dual_init);
    read_field(a, "dual_step", cfg.algo.dual_step);
    read_field(a, "dual_max", cfg.algo.dual_max);
    read_field(a, "topk", cfg.algo.topk);
    read_field(a, "d_msg", cfg.algo.d_msg);
    read_field(a, "embed_dim", cfg.algo.embed_dim);
    read_field(a, "hazard_horizon", cfg.algo.hazard_horizon);
    read_field(a, "hazard_delta", cfg.algo.hazard_delta);
    read_field(a, "write_penalty_coef", cfg.algo.write_penalty_coef);
    read_field(a, "hazard_loss_coef", cfg.algo.hazard_loss_coef);
    read_field(a, "wbce_weight_cap", cfg.algo.wbce_weight_cap);
    read_field(a, "adaptive_threshold", cfg.algo.adaptive_threshold);
    read_field(a, "tau_init", cfg.algo.tau_init);
    read_field(a, "target_write_rate", cfg.algo.target_write_rate);
    read_field(a, "threshold_lr", cfg.algo.threshold_lr);
    read_field(a, "tau_min", cfg.algo.tau_min);
    read_field(a, "tau_max", cfg.algo.tau_max);
    read_field(a, "write_rate_ema", cfg.algo.write_rate_ema);
    read_field(a, "hidden", cfg.algo.hidden);
    read_field(a, "mlp_layers", cfg.algo.mlp_layers);
    read_field(a, "log_std_init", cfg.algo.log_std_init);
    read_field(a, "log_std_min", cfg.algo.log_std_min);
    read_field(a, "log_std_max", cfg.algo.log_std_max);
    read_field(a, "optimizer", cfg.algo.optimizer);
    read_field(a, "share_actor_params", cfg.algo.share_actor_params);
  }
  if (j.contains("run")) {
    const json& r = j.at("run");
    check_keys(r, "run.", kRunKeys);
    read_field(r, "total_steps", cfg.run.total_steps);
    read_field(r, "num_envs", cfg.run.num_envs);
    read_field(r, "rollout_len", cfg.run.rollout_len);
    read_field(r, "seeds", cfg.run.seeds);
    read_field(r, "eval_interval", cfg.run.eval_interval);
    read_field(r, "eval_episodes", cfg.run.eval_episodes);
    read_field(r, "out_dir", cfg.run.out_dir);
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path,
                             const std::vector<std::string>& overrides) {
  json j = resolve_extends(path, 0);
  for (const auto& o : overrides) apply_override(j, o);
  return ExperimentConfig::from_json(j);
}

ExperimentConfig config_from_text(const std::string& text,
                                  const std::vector<std::string>& overrides) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: parse error: ") + e.what());
  }
  for (const auto& o : overrides) apply_override(j, o);
  return ExperimentConfig::from_json(j);
}

}  // namespace co2po
