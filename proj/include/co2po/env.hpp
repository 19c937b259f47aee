#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "co2po/common.hpp"

namespace co2po {

struct ActionSpace {
  enum class Kind { Continuous, Discrete };
  Kind kind = Kind::Continuous;
  // continuous
  int act_dim = 0;
  double low = -1.0;
  double high = 1.0;
  // discrete
  int n_actions = 0;
};

struct EnvSpec {
  int n_agents = 2;
  int obs_dim = 0;
  ActionSpace action_space;
  int horizon = 200;
  double cost_budget = 25.0;

  void validate() const;
};

// One action per agent; the field matching the env's action-space kind is used.
struct JointAction {
  MatrixXd cont;          // act_dim x n_agents
  std::vector<int> disc;  // n_agents
};

struct StepOutcome {
  MatrixXd next_obs;  // obs_dim x n_agents
  VectorXd rewards;   // n_agents
  VectorXd costs;     // n_agents, all >= 0
  bool terminated = false;
  bool truncated = false;
};

struct ResetResult {
  MatrixXd obs;  // obs_dim x n_agents
  std::uint64_t episode_id = 0;
};

class Env {
 public:
  virtual ~Env() = default;
  virtual const EnvSpec& spec() const = 0;
  virtual ResetResult reset(std::uint64_t seed) = 0;
  virtual StepOutcome step(const JointAction& action) = 0;
};

// Two agents hold a target speed along a bounded strip. Each agent's forward
// speed sheds turbulence that pushes the others toward the nearest wall, so
// fast joint behavior needs active lateral control to stay cost-free. Cost is
// emitted on wall contact and when two agents come within the proximity
// radius. Reward is shared velocity tracking.
struct CorridorConfig {
  int n_agents = 2;
  int horizon = 200;
  double cost_budget = 25.0;
  double target_speed = 2.0;
  double proximity_radius = 0.5;
  double accel_gain = 0.25;
  double drag = 0.1;
  double turbulence = 0.05;
  double half_width = 1.0;  // walls at y = +-half_width
  double length = 1000.0;   // x clamped to [0, length]
  double wall_cost = 1.0;
  double proximity_cost = 1.0;
};

class CorridorVelocityEnv : public Env {
 public:
  explicit CorridorVelocityEnv(const CorridorConfig& cfg);

  const EnvSpec& spec() const override { return spec_; }
  ResetResult reset(std::uint64_t seed) override;
  StepOutcome step(const JointAction& action) override;

  MatrixXd observe() const;

  // direct state access for scripted scenarios
  MatrixXd& positions() { return pos_; }
  MatrixXd& velocities() { return vel_; }
  int step_count() const { return step_count_; }

  static constexpr int kObsDim = 10;

 private:
  CorridorConfig cfg_;
  EnvSpec spec_;
  MatrixXd pos_;  // 2 x n (x, y)
  MatrixXd vel_;  // 2 x n
  int step_count_ = 0;
  std::uint64_t episode_id_ = 0;
  RandomStream rng_;
};

// Grid navigation with per-agent goals and static hazard cells. Occupying a
// hazard cell costs hazard_cost per step; any cell 8-adjacent to a hazard
// costs adjacent_cost. Reward is emitted only on goal capture, after which
// the captured goal is resampled.
struct HazardGoalsConfig {
  int n_agents = 2;
  int horizon = 200;
  double cost_budget = 25.0;
  int grid_w = 12;
  int grid_h = 9;
  int n_hazards = 8;
  double hazard_cost = 1.0;
  double adjacent_cost = 0.5;
  double goal_bonus = 1.0;
  int hazard_view = 3;  // nearest hazards exposed in the observation
};

class HazardGoalsEnv : public Env {
 public:
  explicit HazardGoalsEnv(const HazardGoalsConfig& cfg);

  const EnvSpec& spec() const override { return spec_; }
  ResetResult reset(std::uint64_t seed) override;
  StepOutcome step(const JointAction& action) override;

  MatrixXd observe() const;

  // action index -> (dx, dy)
  static const int kMoves[9][2];

  std::vector<std::pair<int, int>>& agents() { return agents_; }
  std::vector<std::pair<int, int>>& goals() { return goals_; }
  const std::vector<std::pair<int, int>>& hazards() const { return hazards_; }

 private:
  bool on_hazard(int x, int y) const;
  bool adjacent_to_hazard(int x, int y) const;
  std::pair<int, int> sample_free_cell(const std::function<bool(int, int)>& blocked);
  void resample_goal(int agent);

  HazardGoalsConfig cfg_;
  EnvSpec spec_;
  std::vector<std::pair<int, int>> agents_;
  std::vector<std::pair<int, int>> goals_;
  std::vector<std::pair<int, int>> hazards_;
  int step_count_ = 0;
  std::uint64_t episode_id_ = 0;
  RandomStream rng_;
};

// Steps E independent instances; instances that terminate or truncate are
// reset in place and reported so per-instance coordination state can be
// cleared. Each instance draws its episode seeds from its own stream.
class VecRunner {
 public:
  using Factory = std::function<std::unique_ptr<Env>()>;

  VecRunner(const Factory& make_env, const std::vector<std::uint64_t>& instance_seeds);

  int num_instances() const { return static_cast<int>(envs_.size()); }
  const EnvSpec& spec() const { return envs_.front()->spec(); }
  const MatrixXd& obs(int e) const { return current_obs_[e]; }
  Env& env(int e) { return *envs_[e]; }

  struct VecStepResult {
    std::vector<StepOutcome> outcomes;
    std::vector<std::uint8_t> resets;  // 1 where the instance was auto-reset
  };

  VecStepResult step(const std::vector<JointAction>& actions);

 private:
  std::uint64_t episode_seed(int e) const { return mix_seed(base_seeds_[e], episode_index_[e]); }

  std::vector<std::unique_ptr<Env>> envs_;
  std::vector<std::uint64_t> base_seeds_;
  std::vector<std::uint64_t> episode_index_;
  std::vector<MatrixXd> current_obs_;
};

void validate_action(const EnvSpec& spec, const JointAction& action);

}  // namespace co2po
