#include "co2po/env.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace co2po {

void EnvSpec::validate() const {
  require(n_agents >= 1, "EnvSpec: n_agents must be >= 1");
  require(obs_dim >= 1, "EnvSpec: obs_dim must be >= 1");
  require(horizon >= 1, "EnvSpec: horizon must be >= 1");
  require(cost_budget >= 0.0, "EnvSpec: cost_budget must be >= 0");
  if (action_space.kind == ActionSpace::Kind::Continuous) {
    require(action_space.act_dim >= 1, "EnvSpec: act_dim must be >= 1");
    require(action_space.low < action_space.high, "EnvSpec: action bounds inverted");
  } else {
    require(action_space.n_actions >= 1, "EnvSpec: n_actions must be >= 1");
  }
}

void validate_action(const EnvSpec& spec, const JointAction& action) {
  const int n = spec.n_agents;
  if (spec.action_space.kind == ActionSpace::Kind::Continuous) {
    require(action.cont.rows() == spec.action_space.act_dim && action.cont.cols() == n,
            "action: expected " + std::to_string(spec.action_space.act_dim) + "x" +
                std::to_string(n) + " continuous actions");
    require(action.cont.allFinite(), "action: non-finite entries");
    require(action.cont.minCoeff() >= spec.action_space.low &&
                action.cont.maxCoeff() <= spec.action_space.high,
            "action: out of bounds");
  } else {
    require(static_cast<int>(action.disc.size()) == n,
            "action: expected " + std::to_string(n) + " discrete actions");
    for (int a : action.disc) {
      require(a >= 0 && a < spec.action_space.n_actions, "action: index out of range");
    }
  }
}

// --- CorridorVelocityEnv ---

CorridorVelocityEnv::CorridorVelocityEnv(const CorridorConfig& cfg) : cfg_(cfg) {
  spec_.n_agents = cfg.n_agents;
  spec_.obs_dim = kObsDim;
  spec_.action_space.kind = ActionSpace::Kind::Continuous;
  spec_.action_space.act_dim = 2;
  spec_.action_space.low = -1.0;
  spec_.action_space.high = 1.0;
  spec_.horizon = cfg.horizon;
  spec_.cost_budget = cfg.cost_budget;
  spec_.validate();
  require(cfg.proximity_radius > 0.0 && cfg.half_width > 0.0, "corridor: bad geometry");
  pos_ = MatrixXd::Zero(2, cfg.n_agents);
  vel_ = MatrixXd::Zero(2, cfg.n_agents);
}

ResetResult CorridorVelocityEnv::reset(std::uint64_t seed) {
  rng_.reseed(seed);
  const int n = cfg_.n_agents;
  for (int i = 0; i < n; ++i) {
    // spaced along x so no pair starts inside the proximity radius
    pos_(0, i) = 2.0 + 2.0 * i + rng_.uniform(-0.3, 0.3);
    pos_(1, i) = rng_.uniform(-0.3, 0.3);
    vel_(0, i) = 0.0;
    vel_(1, i) = 0.0;
  }
  step_count_ = 0;
  ++episode_id_;
  return {observe(), episode_id_};
}

MatrixXd CorridorVelocityEnv::observe() const {
  const int n = cfg_.n_agents;
  const double vs = cfg_.target_speed;
  MatrixXd obs(kObsDim, n);
  for (int i = 0; i < n; ++i) {
    // nearest other agent
    int jn = -1;
    double best = std::numeric_limits<double>::infinity();
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      const double d = (pos_.col(j) - pos_.col(i)).norm();
      if (d < best) {
        best = d;
        jn = j;
      }
    }
    const double y = pos_(1, i);
    obs(0, i) = y / cfg_.half_width;
    obs(1, i) = vel_(0, i) / vs;
    obs(2, i) = vel_(1, i) / vs;
    obs(3, i) = (vel_(0, i) - vs) / vs;
    obs(4, i) = (cfg_.half_width - std::abs(y)) / cfg_.half_width;
    if (jn >= 0) {
      const double dx = pos_(0, jn) - pos_(0, i);
      const double dy = pos_(1, jn) - pos_(1, i);
      obs(5, i) = std::clamp(dx, -5.0, 5.0) / 5.0;
      obs(6, i) = dy / (2.0 * cfg_.half_width);
      obs(7, i) = vel_(0, jn) / vs;
      obs(8, i) = vel_(1, jn) / vs;
      obs(9, i) = std::min(best, 5.0) / 5.0;
    } else {
      obs.block(5, i, 5, 1).setZero();
    }
  }
  return obs;
}

StepOutcome CorridorVelocityEnv::step(const JointAction& action) {
  validate_action(spec_, action);
  const int n = cfg_.n_agents;

  // turbulence shed by the other agents' forward speed, directed at the
  // nearest wall
  VectorXd push(n);
  for (int i = 0; i < n; ++i) {
    double mean_speed = 0.0;
    for (int j = 0; j < n; ++j) {
      if (j != i) mean_speed += std::abs(vel_(0, j));
    }
    if (n > 1) mean_speed /= (n - 1);
    const double dir = pos_(1, i) >= 0.0 ? 1.0 : -1.0;
    push(i) = cfg_.turbulence * mean_speed * dir;
  }

  VectorXd wall_hit = VectorXd::Zero(n);
  for (int i = 0; i < n; ++i) {
    vel_(0, i) = (1.0 - cfg_.drag) * vel_(0, i) + cfg_.accel_gain * action.cont(0, i);
    vel_(1, i) = (1.0 - cfg_.drag) * vel_(1, i) + cfg_.accel_gain * action.cont(1, i) + push(i);
    pos_(0, i) += vel_(0, i);
    pos_(1, i) += vel_(1, i);
    if (pos_(0, i) < 0.0 || pos_(0, i) > cfg_.length) {
      pos_(0, i) = std::clamp(pos_(0, i), 0.0, cfg_.length);
      vel_(0, i) = 0.0;
      wall_hit(i) = 1.0;
    }
    if (std::abs(pos_(1, i)) >= cfg_.half_width) {
      pos_(1, i) = std::clamp(pos_(1, i), -cfg_.half_width, cfg_.half_width);
      vel_(1, i) = 0.0;
      wall_hit(i) = 1.0;
    }
  }

  VectorXd costs = VectorXd::Zero(n);
  for (int i = 0; i < n; ++i) {
    costs(i) += cfg_.wall_cost * wall_hit(i);
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      if ((pos_.col(j) - pos_.col(i)).norm() < cfg_.proximity_radius) {
        costs(i) += cfg_.proximity_cost;
        break;
      }
    }
  }

  // shared velocity-tracking reward
  double track = 0.0;
  for (int i = 0; i < n; ++i) {
    track += std::max(0.0, 1.0 - std::abs(vel_(0, i) - cfg_.target_speed) / cfg_.target_speed);
  }
  track /= n;

  ++step_count_;
  StepOutcome out;
  out.next_obs = observe();
  out.rewards = VectorXd::Constant(n, track);
  out.costs = costs;
  out.terminated = false;
  out.truncated = step_count_ >= cfg_.horizon;
  return out;
}

// --- HazardGoalsEnv ---

const int HazardGoalsEnv::kMoves[9][2] = {{0, 0},  {1, 0},  {-1, 0}, {0, 1},  {0, -1},
                                          {1, 1},  {1, -1}, {-1, 1}, {-1, -1}};

HazardGoalsEnv::HazardGoalsEnv(const HazardGoalsConfig& cfg) : cfg_(cfg) {
  spec_.n_agents = cfg.n_agents;
  spec_.obs_dim = 6 + 2 * cfg.hazard_view;
  spec_.action_space.kind = ActionSpace::Kind::Discrete;
  spec_.action_space.n_actions = 9;
  spec_.horizon = cfg.horizon;
  spec_.cost_budget = cfg.cost_budget;
  spec_.validate();
  const int cells = cfg.grid_w * cfg.grid_h;
  require(cfg.n_hazards + 2 * cfg.n_agents < cells / 2, "hazard_goals: grid too crowded");
}

bool HazardGoalsEnv::on_hazard(int x, int y) const {
  for (const auto& h : hazards_) {
    if (h.first == x && h.second == y) return true;
  }
  return false;
}

bool HazardGoalsEnv::adjacent_to_hazard(int x, int y) const {
  for (const auto& h : hazards_) {
    if (std::abs(h.first - x) <= 1 && std::abs(h.second - y) <= 1 && !(h.first == x && h.second == y)) {
      return true;
    }
  }
  return false;
}

std::pair<int, int> HazardGoalsEnv::sample_free_cell(const std::function<bool(int, int)>& blocked) {
  while (true) {
    const int x = rng_.uniform_int(cfg_.grid_w);
    const int y = rng_.uniform_int(cfg_.grid_h);
    if (!blocked(x, y)) return {x, y};
  }
}

void HazardGoalsEnv::resample_goal(int agent) {
  goals_[agent] = sample_free_cell([&](int x, int y) {
    if (on_hazard(x, y)) return true;
    for (const auto& a : agents_) {
      if (a.first == x && a.second == y) return true;
    }
    for (int g = 0; g < cfg_.n_agents; ++g) {
      if (g != agent && goals_[g].first == x && goals_[g].second == y) return true;
    }
    return false;
  });
}

ResetResult HazardGoalsEnv::reset(std::uint64_t seed) {
  rng_.reseed(seed);
  hazards_.clear();
  agents_.assign(cfg_.n_agents, {-1, -1});
  goals_.assign(cfg_.n_agents, {-1, -1});

  for (int hcount = 0; hcount < cfg_.n_hazards; ++hcount) {
    hazards_.push_back(sample_free_cell([&](int x, int y) { return on_hazard(x, y); }));
  }
  // spawns keep clear of hazards and their surroundings so an idle policy is
  // cost-free
  for (int i = 0; i < cfg_.n_agents; ++i) {
    agents_[i] = sample_free_cell([&](int x, int y) {
      if (on_hazard(x, y) || adjacent_to_hazard(x, y)) return true;
      for (int j = 0; j < i; ++j) {
        if (agents_[j].first == x && agents_[j].second == y) return true;
      }
      return false;
    });
  }
  for (int i = 0; i < cfg_.n_agents; ++i) {
    goals_[i] = sample_free_cell([&](int x, int y) {
      if (on_hazard(x, y)) return true;
      for (const auto& a : agents_) {
        if (a.first == x && a.second == y) return true;
      }
      for (int j = 0; j < i; ++j) {
        if (goals_[j].first == x && goals_[j].second == y) return true;
      }
      return false;
    });
  }
  step_count_ = 0;
  ++episode_id_;
  return {observe(), episode_id_};
}

MatrixXd HazardGoalsEnv::observe() const {
  const int n = cfg_.n_agents;
  const double w = cfg_.grid_w;
  const double h = cfg_.grid_h;
  MatrixXd obs = MatrixXd::Zero(spec_.obs_dim, n);
  for (int i = 0; i < n; ++i) {
    const auto [x, y] = agents_[i];
    obs(0, i) = x / std::max(1.0, w - 1.0);
    obs(1, i) = y / std::max(1.0, h - 1.0);
    obs(2, i) = (goals_[i].first - x) / w;
    obs(3, i) = (goals_[i].second - y) / h;
    // nearest other agent
    int jn = -1;
    int best = std::numeric_limits<int>::max();
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      const int d = std::abs(agents_[j].first - x) + std::abs(agents_[j].second - y);
      if (d < best) {
        best = d;
        jn = j;
      }
    }
    if (jn >= 0) {
      obs(4, i) = (agents_[jn].first - x) / w;
      obs(5, i) = (agents_[jn].second - y) / h;
    }
    // nearest hazards, by L1 distance then list order
    std::vector<int> idx(hazards_.size());
    for (size_t k = 0; k < idx.size(); ++k) idx[k] = static_cast<int>(k);
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
      const int da = std::abs(hazards_[a].first - x) + std::abs(hazards_[a].second - y);
      const int db = std::abs(hazards_[b].first - x) + std::abs(hazards_[b].second - y);
      return da < db;
    });
    for (int k = 0; k < cfg_.hazard_view && k < static_cast<int>(idx.size()); ++k) {
      obs(6 + 2 * k, i) = (hazards_[idx[k]].first - x) / w;
      obs(7 + 2 * k, i) = (hazards_[idx[k]].second - y) / h;
    }
  }
  return obs;
}

StepOutcome HazardGoalsEnv::step(const JointAction& action) {
  validate_action(spec_, action);
  const int n = cfg_.n_agents;
  for (int i = 0; i < n; ++i) {
    const int* mv = kMoves[action.disc[i]];
    agents_[i].first = std::clamp(agents_[i].first + mv[0], 0, cfg_.grid_w - 1);
    agents_[i].second = std::clamp(agents_[i].second + mv[1], 0, cfg_.grid_h - 1);
  }

  VectorXd rewards = VectorXd::Zero(n);
  VectorXd costs = VectorXd::Zero(n);
  for (int i = 0; i < n; ++i) {
    const auto [x, y] = agents_[i];
    if (on_hazard(x, y)) {
      costs(i) = cfg_.hazard_cost;
    } else if (adjacent_to_hazard(x, y)) {
      costs(i) = cfg_.adjacent_cost;
    }
    if (agents_[i] == goals_[i]) {
      rewards(i) = cfg_.goal_bonus;
      resample_goal(i);
    }
  }

  ++step_count_;
  StepOutcome out;
  out.next_obs = observe();
  out.rewards = rewards;
  out.costs = costs;
  out.terminated = false;
  out.truncated = step_count_ >= cfg_.horizon;
  return out;
}

// --- VecRunner ---

VecRunner::VecRunner(const Factory& make_env, const std::vector<std::uint64_t>& instance_seeds)
    : base_seeds_(instance_seeds) {
  require(!instance_seeds.empty(), "VecRunner: need at least one instance seed");
  const int e_count = static_cast<int>(instance_seeds.size());
  episode_index_.assign(e_count, 0);
  current_obs_.resize(e_count);
  for (int e = 0; e < e_count; ++e) {
    envs_.push_back(make_env());
    current_obs_[e] = envs_[e]->reset(episode_seed(e)).obs;
  }
}

VecRunner::VecStepResult VecRunner::step(const std::vector<JointAction>& actions) {
  const int e_count = num_instances();
  require(static_cast<int>(actions.size()) == e_count,
          "VecRunner: expected " + std::to_string(e_count) + " joint actions");
  VecStepResult result;
  result.outcomes.reserve(e_count);
  result.resets.assign(e_count, 0);
  for (int e = 0; e < e_count; ++e) {
    StepOutcome out = envs_[e]->step(actions[e]);
    if (out.terminated || out.truncated) {
      ++episode_index_[e];
      out.next_obs = envs_[e]->reset(episode_seed(e)).obs;
      result.resets[e] = 1;
    }
    current_obs_[e] = out.next_obs;
    result.outcomes.push_back(std::move(out));
  }
  return result;
}

}  // namespace co2po
