#pragma once

#include <memory>
#include <utility>
#include <vector>

#include "co2po/blackboard.hpp"
#include "co2po/buffer.hpp"
#include "co2po/config.hpp"
#include "co2po/env.hpp"
#include "co2po/metrics.hpp"
#include "co2po/models.hpp"

namespace co2po {

struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::unique_ptr<Env> make_env(const ExperimentConfig& cfg);

struct IterationDiagnostics {
  int iteration = 0;
  long long env_steps = 0;
  double mean_ep_return = 0.0;
  double mean_ep_cost = 0.0;
  double lambda = 0.0;
  double tau = 0.0;
  double write_rate = 0.0;
  double hazard_label_rate = 0.0;
  double wbce_loss = 0.0;
  double clip_loss = 0.0;
  double value_r_loss = 0.0;
  double value_c_loss = 0.0;
  double entropy = 0.0;
  double approx_kl = 0.0;
  double context_occupancy = 0.0;
};

struct TrainCounters {
  std::uint64_t board_writes = 0;
  std::uint64_t board_reads = 0;
  std::uint64_t message_forwards = 0;  // F_theta batch evaluations
  std::uint64_t wbce_backwards = 0;    // WBCE gradient accumulations
};

struct ActorLossCoefs {
  double clip_eps = 0.2;
  double clip_weight = 1.0;      // 0 isolates the auxiliary terms
  double write_penalty = 0.0;    // alpha_write
  double hazard = 0.0;           // alpha_haz
  double entropy = 0.0;          // alpha_ent
  double wbce_pos_weight = 1.0;  // omega
};

struct ActorLossTerms {
  double clip = 0.0;
  double write_rate = 0.0;  // mean stored w (the penalty multiplies this)
  double wbce_loss = 0.0;
  double entropy = 0.0;
  double total = 0.0;
  double approx_kl = 0.0;
};

// Runs the per-timestep coordination protocol (write-info, gate & write,
// adapt, read, act, store) over E instances and the collect-then-update
// training alternation with a projected dual step per iteration.
class Trainer {
 public:
  Trainer(const ExperimentConfig& cfg, int seed);

  void rollout_step();
  void collect_rollout();  // fills and seals the buffer
  IterationDiagnostics update();
  IterationDiagnostics run_iteration();

  EvalCheckpoint evaluate(std::uint64_t eval_seed, long long nominal_step);

  // Mean-over-agents actor objective on buffer samples; optionally
  // accumulates analytic gradients into the model grad buffers.
  ActorLossTerms actor_loss(const std::vector<int>& samples, const ActorLossCoefs& coefs,
                            bool with_grads);
  // Squared-error value regression to the sealed return targets.
  double critic_loss(const std::vector<int>& samples, bool cost_stream, bool with_grads);

  ActorLossCoefs configured_coefs() const;

  ModelSet& models() { return models_; }
  // actors may be shared across agents behind the config flag
  Actor& actor_for(int agent) {
    return models_.actors[models_.actors.size() == 1 ? 0 : agent];
  }
  DualState& dual() { return dual_; }
  ThresholdState& threshold() { return threshold_; }
  RolloutBuffer& buffer() { return *buffer_; }
  VecRunner& runner() { return *runner_; }
  TrainCounters counters() const;
  long long env_steps_done() const { return env_steps_; }
  int iterations_done() const { return iteration_; }
  const std::vector<std::pair<double, double>>& completed_episodes() const {
    return completed_episodes_;
  }
  double episodic_cost_estimate() const { return cost_estimate_; }
  const ExperimentConfig& config() const { return cfg_; }

 private:
  struct StepDecision {
    std::vector<MatrixXd> ctx;   // per agent, ctx_len x E
    std::vector<MatrixXi> send;  // per agent, topk x E
    std::vector<VectorXi> occ;   // per agent, E
    std::vector<MatrixXd> raw;   // per agent, message head raw rows x E
    std::vector<VectorXd> wbit;  // per agent, E
  };

  // Steps 1-4 of the protocol against the given board; adapts the threshold
  // only when requested (training path, not evaluation).
  StepDecision coordinate(const std::vector<MatrixXd>& agent_obs, Blackboard& board, bool adapt);

  MatrixXd gather_agent_obs(int agent) const;       // obs_dim x E from the runner
  MatrixXd centralized_obs() const;                 // n*obs_dim x E from the runner
  VectorXd stack_centralized(const MatrixXd& obs_all_agents) const;

  ExperimentConfig cfg_;
  VariantFlags flags_;
  ModelSet models_;
  std::unique_ptr<VecRunner> runner_;
  std::unique_ptr<Blackboard> board_;
  std::unique_ptr<RolloutBuffer> buffer_;
  ThresholdState threshold_;
  DualState dual_;

  std::vector<Optimizer> actor_opt_;
  Optimizer head_opt_, critic_r_opt_, critic_c_opt_;

  RandomStream action_rng_, shuffle_rng_;

  int step_in_rollout_ = 0;
  int iteration_ = 0;
  long long env_steps_ = 0;
  VectorXd ep_return_acc_, ep_cost_acc_;  // per env running episode sums
  std::vector<std::pair<double, double>> completed_episodes_;
  double cost_estimate_ = 0.0;
  double last_ep_return_ = 0.0, last_ep_cost_ = 0.0;

  std::uint64_t message_forwards_ = 0;
  std::uint64_t wbce_backwards_ = 0;
};

}  // namespace co2po
