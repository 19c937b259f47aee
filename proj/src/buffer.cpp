#include "co2po/buffer.hpp"

#include <algorithm>
#include <cmath>

namespace co2po {

GaeResult compute_gae(const VectorXd& signal, const VectorXd& values, double bootstrap_value,
                      double gamma, double gae_lambda, const VectorXd& done) {
  const Eigen::Index n = signal.size();
  require(values.size() == n && done.size() == n, "compute_gae: length mismatch");
  GaeResult out;
  out.advantages = VectorXd::Zero(n);
  out.returns = VectorXd::Zero(n);
  double running = 0.0;
  for (Eigen::Index t = n - 1; t >= 0; --t) {
    const double nonterminal = 1.0 - done(t);
    const double next_value = (t == n - 1) ? bootstrap_value : values(t + 1);
    const double delta = signal(t) + gamma * next_value * nonterminal - values(t);
    running = delta + gamma * gae_lambda * nonterminal * running;
    out.advantages(t) = running;
    out.returns(t) = running + values(t);
  }
  return out;
}

VectorXd hybrid_advantage(const VectorXd& adv_r, const VectorXd& adv_c, double lambda) {
  require(lambda >= 0.0, "hybrid_advantage: lambda must be >= 0");
  require(adv_r.size() == adv_c.size(), "hybrid_advantage: length mismatch");
  return adv_r - lambda * adv_c;
}

void normalize_advantages(VectorXd& adv) {
  if (adv.size() == 0) return;
  const double mean = adv.mean();
  const double var = (adv.array() - mean).square().sum() / adv.size();
  const double std = std::max(std::sqrt(var), 1e-8);
  adv = (adv.array() - mean) / std;
}

double clip_surrogate(const VectorXd& new_logp, const VectorXd& old_logp, const VectorXd& adv,
                      double clip_eps) {
  require(new_logp.size() == old_logp.size() && new_logp.size() == adv.size(),
          "clip_surrogate: length mismatch");
  double total = 0.0;
  for (Eigen::Index s = 0; s < adv.size(); ++s) {
    const double ratio = std::exp(new_logp(s) - old_logp(s));
    const double clipped = std::clamp(ratio, 1.0 - clip_eps, 1.0 + clip_eps);
    total += std::min(ratio * adv(s), clipped * adv(s));
  }
  return -total / static_cast<double>(adv.size());
}

double wbce(const VectorXd& logits, const VectorXd& labels, double pos_weight) {
  require(logits.size() == labels.size(), "wbce: length mismatch");
  require(pos_weight > 0.0, "wbce: pos_weight must be > 0");
  double total = 0.0;
  for (Eigen::Index s = 0; s < logits.size(); ++s) {
    total += pos_weight * labels(s) * softplus(-logits(s)) +
             (1.0 - labels(s)) * softplus(logits(s));
  }
  return total / static_cast<double>(logits.size());
}

DualState dual_update(DualState state, double episodic_cost_estimate) {
  require(episodic_cost_estimate >= 0.0, "dual_update: cost estimate must be >= 0");
  state.lambda = std::clamp(
      state.lambda + state.step_size * (episodic_cost_estimate - state.budget), 0.0,
      state.lambda_max);
  return state;
}

RolloutBuffer::RolloutBuffer(int steps, int n_envs, const EnvSpec& spec, int ctx_len, int topk)
    : steps_(steps), n_envs_(n_envs), n_agents_(spec.n_agents) {
  require(steps >= 1 && n_envs >= 1, "RolloutBuffer: bad dimensions");
  const int s = size();
  const int n = spec.n_agents;
  const bool discrete = spec.action_space.kind == ActionSpace::Kind::Discrete;
  obs.assign(n, MatrixXd::Zero(spec.obs_dim, s));
  ctx.assign(n, MatrixXd::Zero(ctx_len, s));
  if (discrete) {
    act_disc.assign(n, std::vector<int>(s, 0));
  } else {
    act_cont.assign(n, MatrixXd::Zero(spec.action_space.act_dim, s));
  }
  behavior_logp.assign(n, VectorXd::Zero(s));
  hazard_logit.assign(n, VectorXd::Zero(s));
  write_bit.assign(n, VectorXd::Zero(s));
  reward.assign(n, VectorXd::Zero(s));
  cost.assign(n, VectorXd::Zero(s));
  hazard_label.assign(n, VectorXd::Zero(s));
  senders.assign(n, MatrixXi::Constant(topk, s, -1));
  occupancy.assign(n, VectorXi::Zero(s));
  cent_obs = MatrixXd::Zero(n * spec.obs_dim, s);
  team_reward = VectorXd::Zero(s);
  team_cost = VectorXd::Zero(s);
  value_r = VectorXd::Zero(s);
  value_c = VectorXd::Zero(s);
  done = VectorXd::Zero(s);
  bootstrap_r = VectorXd::Zero(n_envs);
  bootstrap_c = VectorXd::Zero(n_envs);
}

void RolloutBuffer::seal(double gamma, double gae_lambda, double lambda_dual,
                         const HazardLabelConfig& hazard_cfg, double wbce_weight_cap) {
  hazard_cfg.validate();
  const int s = size();

  // hazard labels per (agent, env) sequence; done flags are the episode ends
  double label_sum = 0.0;
  for (int i = 0; i < n_agents_; ++i) {
    for (int e = 0; e < n_envs_; ++e) {
      std::vector<int> z(steps_), ends(steps_);
      for (int t = 0; t < steps_; ++t) {
        const int idx = index(t, e);
        z[t] = instantaneous_hazard(cost[i](idx), hazard_cfg.cost_threshold);
        ends[t] = done(idx) > 0.5 ? 1 : 0;
      }
      const std::vector<int> h = lookahead_labels(z, hazard_cfg.lookahead, ends);
      for (int t = 0; t < steps_; ++t) {
        hazard_label[i](index(t, e)) = h[t];
        label_sum += h[t];
      }
    }
  }
  hazard_label_rate = label_sum / (static_cast<double>(s) * n_agents_);

  // positive-class weight from the batch label rate, floored at one positive
  const double q = std::max(hazard_label_rate, 1.0 / static_cast<double>(s * n_agents_));
  wbce_pos_weight = std::clamp((1.0 - q) / q, 1.0, wbce_weight_cap);

  adv_r = VectorXd::Zero(s);
  adv_c = VectorXd::Zero(s);
  ret_r = VectorXd::Zero(s);
  ret_c = VectorXd::Zero(s);
  VectorXd sig(steps_), val(steps_), dn(steps_);
  for (int e = 0; e < n_envs_; ++e) {
    for (int t = 0; t < steps_; ++t) {
      const int idx = index(t, e);
      sig(t) = team_reward(idx);
      val(t) = value_r(idx);
      dn(t) = done(idx);
    }
    GaeResult r = compute_gae(sig, val, bootstrap_r(e), gamma, gae_lambda, dn);
    for (int t = 0; t < steps_; ++t) {
      sig(t) = team_cost(index(t, e));
      val(t) = value_c(index(t, e));
    }
    GaeResult c = compute_gae(sig, val, bootstrap_c(e), gamma, gae_lambda, dn);
    for (int t = 0; t < steps_; ++t) {
      const int idx = index(t, e);
      adv_r(idx) = r.advantages(t);
      ret_r(idx) = r.returns(t);
      adv_c(idx) = c.advantages(t);
      ret_c(idx) = c.returns(t);
    }
  }

  adv_hyb = hybrid_advantage(adv_r, adv_c, lambda_dual);
  normalize_advantages(adv_hyb);
  sealed_ = true;
}

}  // namespace co2po
