#pragma once

#include <vector>

#include "co2po/env.hpp"
#include "co2po/hazard.hpp"

namespace co2po {

struct GaeResult {
  VectorXd advantages;
  VectorXd returns;
};

// delta_t = x_t + gamma * V_{t+1} * (1 - done_t) - V_t
// A_t = delta_t + gamma * lambda * (1 - done_t) * A_{t+1}
// with V_{T} = bootstrap_value; targets are A + V.
GaeResult compute_gae(const VectorXd& signal, const VectorXd& values, double bootstrap_value,
                      double gamma, double gae_lambda, const VectorXd& done);

// A_hyb = A_R - lambda * A_C, elementwise.
VectorXd hybrid_advantage(const VectorXd& adv_r, const VectorXd& adv_c, double lambda);

// Standardize in place; the std is floored so constant batches map to zero.
void normalize_advantages(VectorXd& adv);

// -mean(min(rho * A, clip(rho, 1-eps, 1+eps) * A)), rho = exp(new - old).
double clip_surrogate(const VectorXd& new_logp, const VectorXd& old_logp, const VectorXd& adv,
                      double clip_eps);

// Weighted binary cross-entropy on logits:
// mean(pos_weight * h * softplus(-l) + (1 - h) * softplus(l)).
double wbce(const VectorXd& logits, const VectorXd& labels, double pos_weight);

struct DualState {
  double lambda = 0.1;
  double step_size = 5e-4;  // eta_lambda
  double budget = 25.0;     // d
  double lambda_max = 100.0;
};

// lambda <- clip(lambda + eta * (cost_estimate - d), 0, lambda_max).
DualState dual_update(DualState state, double episodic_cost_estimate);

// On-policy storage for one iteration. Sample s = t * n_envs + e; team-level
// streams are shared by all agents of an instance.
class RolloutBuffer {
 public:
  RolloutBuffer(int steps, int n_envs, const EnvSpec& spec, int ctx_len, int topk);

  int steps() const { return steps_; }
  int n_envs() const { return n_envs_; }
  int n_agents() const { return n_agents_; }
  int size() const { return steps_ * n_envs_; }
  int index(int t, int e) const { return t * n_envs_ + e; }
  bool sealed() const { return sealed_; }

  // per agent, column s
  std::vector<MatrixXd> obs;       // obs_dim x size
  std::vector<MatrixXd> ctx;       // ctx_len x size (as stored at acting time)
  std::vector<MatrixXd> act_cont;  // act_dim x size
  std::vector<std::vector<int>> act_disc;
  std::vector<VectorXd> behavior_logp;
  std::vector<VectorXd> hazard_logit;
  std::vector<VectorXd> write_bit;
  std::vector<VectorXd> reward;  // per-agent reward
  std::vector<VectorXd> cost;    // per-agent cost
  std::vector<VectorXd> hazard_label;        // sealed
  std::vector<MatrixXi> senders;             // topk x size, -1 = empty slot
  std::vector<VectorXi> occupancy;

  // team level, index s
  MatrixXd cent_obs;  // n_agents * obs_dim x size
  VectorXd team_reward, team_cost, value_r, value_c, done;
  VectorXd bootstrap_r, bootstrap_c;  // per env

  // sealed products
  VectorXd adv_r, adv_c, ret_r, ret_c, adv_hyb;
  double hazard_label_rate = 0.0;
  double wbce_pos_weight = 1.0;

  // Computes hazard labels (within episode boundaries), both GAE streams, the
  // normalized hybrid advantage for the given dual variable, and the WBCE
  // positive weight clip((1-q)/q, 1, cap).
  void seal(double gamma, double gae_lambda, double lambda_dual,
            const HazardLabelConfig& hazard_cfg, double wbce_weight_cap);

 private:
  int steps_, n_envs_, n_agents_;
  bool sealed_ = false;
};

}  // namespace co2po
