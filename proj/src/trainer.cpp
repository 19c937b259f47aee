#include "co2po/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace co2po {

std::unique_ptr<Env> make_env(const ExperimentConfig& cfg) {
  if (cfg.env.name == "corridor") {
    CorridorConfig c;
    c.n_agents = cfg.env.n_agents;
    c.horizon = cfg.env.horizon;
    c.cost_budget = cfg.algo.cost_budget;
    c.target_speed = cfg.env.target_speed;
    c.proximity_radius = cfg.env.proximity_radius;
    c.accel_gain = cfg.env.accel_gain;
    c.drag = cfg.env.drag;
    c.turbulence = cfg.env.turbulence;
    c.half_width = cfg.env.half_width;
    c.length = cfg.env.length;
    c.wall_cost = cfg.env.wall_cost;
    c.proximity_cost = cfg.env.proximity_cost;
    return std::make_unique<CorridorVelocityEnv>(c);
  }
  HazardGoalsConfig h;
  h.n_agents = cfg.env.n_agents;
  h.horizon = cfg.env.horizon;
  h.cost_budget = cfg.algo.cost_budget;
  h.grid_w = cfg.env.grid_w;
  h.grid_h = cfg.env.grid_h;
  h.n_hazards = cfg.env.n_hazards;
  h.hazard_cost = cfg.env.hazard_cost;
  h.adjacent_cost = cfg.env.adjacent_cost;
  h.goal_bonus = cfg.env.goal_bonus;
  h.hazard_view = cfg.env.hazard_view;
  return std::make_unique<HazardGoalsEnv>(h);
}

namespace {

void shuffle_indices(std::vector<int>& indices, RandomStream& rng) {
  for (int i = static_cast<int>(indices.size()) - 1; i > 0; --i) {
    const int j = rng.uniform_int(i + 1);
    std::swap(indices[i], indices[j]);
  }
}

}  // namespace

Trainer::Trainer(const ExperimentConfig& cfg, int seed) : cfg_(cfg) {
  cfg_.validate();
  flags_ = cfg_.variant_flags();

  const auto probe = make_env(cfg_);
  const EnvSpec spec = probe->spec();
  const int n = spec.n_agents;
  const int ctx_len = context_length(cfg_.algo.topk, cfg_.algo.d_msg);

  RandomStream init_rng(mix_seed(static_cast<std::uint64_t>(seed), 0xC02B0ULL));
  models_.message_head =
      MessageHead(spec.obs_dim, cfg_.algo.hidden, cfg_.algo.mlp_layers, cfg_.algo.d_msg);
  models_.message_head.net().init_xavier(init_rng, 0.01);
  const int actor_count = cfg_.algo.share_actor_params ? 1 : n;
  for (int i = 0; i < actor_count; ++i) {
    Actor actor(spec.action_space, spec.obs_dim, ctx_len, cfg_.algo.embed_dim, cfg_.algo.hidden,
                cfg_.algo.mlp_layers, cfg_.algo.log_std_init, cfg_.algo.log_std_min,
                cfg_.algo.log_std_max);
    actor.init(init_rng);
    models_.actors.push_back(std::move(actor));
  }
  models_.critic_r = Critic(n * spec.obs_dim, cfg_.algo.hidden, cfg_.algo.mlp_layers);
  models_.critic_r.init(init_rng);
  models_.critic_c = Critic(n * spec.obs_dim, cfg_.algo.hidden, cfg_.algo.mlp_layers);
  models_.critic_c.init(init_rng);

  std::vector<std::uint64_t> seeds;
  for (int e = 0; e < cfg_.run.num_envs; ++e) {
    seeds.push_back(mix_seed(static_cast<std::uint64_t>(seed), 0x100ULL + e));
  }
  runner_ = std::make_unique<VecRunner>([this]() { return make_env(cfg_); }, seeds);
  board_ = std::make_unique<Blackboard>(cfg_.run.num_envs, n, cfg_.algo.d_msg);
  buffer_ = std::make_unique<RolloutBuffer>(cfg_.run.rollout_len, cfg_.run.num_envs, spec,
                                            ctx_len, cfg_.algo.topk);

  threshold_.tau = cfg_.algo.tau_init;
  threshold_.write_rate_ema = cfg_.algo.target_write_rate;
  threshold_.ema_decay = cfg_.algo.write_rate_ema;
  threshold_.step_size = cfg_.algo.threshold_lr;
  threshold_.target_rate = cfg_.algo.target_write_rate;
  threshold_.tau_min = cfg_.algo.tau_min;
  threshold_.tau_max = cfg_.algo.tau_max;
  threshold_.adaptive = cfg_.algo.adaptive_threshold;

  dual_.lambda = cfg_.algo.dual_init;
  dual_.step_size = cfg_.algo.dual_step;
  dual_.budget = cfg_.algo.cost_budget;
  dual_.lambda_max = cfg_.algo.dual_max;

  OptimizerConfig actor_opt{cfg_.algo.optimizer, cfg_.algo.actor_lr};
  OptimizerConfig critic_opt{cfg_.algo.optimizer, cfg_.algo.critic_lr};
  for (const Actor& actor : models_.actors) {
    actor_opt_.emplace_back(actor_opt, actor.param_count());
  }
  head_opt_ = Optimizer(actor_opt, models_.message_head.net().param_count());
  critic_r_opt_ = Optimizer(critic_opt, models_.critic_r.net().param_count());
  critic_c_opt_ = Optimizer(critic_opt, models_.critic_c.net().param_count());

  action_rng_.reseed(mix_seed(static_cast<std::uint64_t>(seed), 0xAC7ULL));
  shuffle_rng_.reseed(mix_seed(static_cast<std::uint64_t>(seed), 0x5FFFULL));

  ep_return_acc_ = VectorXd::Zero(cfg_.run.num_envs);
  ep_cost_acc_ = VectorXd::Zero(cfg_.run.num_envs);
}

MatrixXd Trainer::gather_agent_obs(int agent) const {
  const int e_count = runner_->num_instances();
  MatrixXd obs(runner_->spec().obs_dim, e_count);
  for (int e = 0; e < e_count; ++e) obs.col(e) = runner_->obs(e).col(agent);
  return obs;
}

VectorXd Trainer::stack_centralized(const MatrixXd& obs_all_agents) const {
  return Eigen::Map<const VectorXd>(obs_all_agents.data(), obs_all_agents.size());
}

MatrixXd Trainer::centralized_obs() const {
  const int e_count = runner_->num_instances();
  const EnvSpec& spec = runner_->spec();
  MatrixXd cent(spec.n_agents * spec.obs_dim, e_count);
  for (int e = 0; e < e_count; ++e) cent.col(e) = stack_centralized(runner_->obs(e));
  return cent;
}

Trainer::StepDecision Trainer::coordinate(const std::vector<MatrixXd>& agent_obs,
                                          Blackboard& board, bool adapt) {
  const int n = static_cast<int>(agent_obs.size());
  const int e_count = static_cast<int>(agent_obs.front().cols());
  const int ctx_len = context_length(cfg_.algo.topk, cfg_.algo.d_msg);

  StepDecision dec;
  dec.raw.resize(n);
  dec.wbit.assign(n, VectorXd::Zero(e_count));
  dec.ctx.assign(n, MatrixXd::Zero(ctx_len, e_count));
  dec.send.assign(n, MatrixXi::Constant(cfg_.algo.topk, e_count, -1));
  dec.occ.assign(n, VectorXi::Zero(e_count));
  if (!flags_.message_head) return dec;

  // write-info
  for (int i = 0; i < n; ++i) {
    dec.raw[i] = models_.message_head.forward_raw(agent_obs[i]);
    ++message_forwards_;
  }
  // gate & write
  for (int e = 0; e < e_count; ++e) {
    for (int i = 0; i < n; ++i) {
      const double p = sigmoid(MessageHead::logit_of(dec.raw[i], e));
      const int w = flags_.force_write ? 1 : gate(p, threshold_.tau);
      dec.wbit[i](e) = w;
      if (flags_.blackboard) {
        board.write(e, i, models_.message_head.entry_of(dec.raw[i], e, w));
      }
    }
  }
  // adapt
  if (adapt && threshold_.adaptive) {
    double rate = 0.0;
    for (int i = 0; i < n; ++i) rate += dec.wbit[i].sum();
    rate /= static_cast<double>(n) * e_count;
    threshold_ = update_threshold(threshold_, rate);
  }
  // read
  if (flags_.blackboard) {
    for (int e = 0; e < e_count; ++e) {
      for (int i = 0; i < n; ++i) {
        const VectorXd query = models_.message_head.summary_of(dec.raw[i], e);
        const MemoryContext ctx = board.read_topk(e, i, query, cfg_.algo.topk);
        dec.ctx[i].col(e) = ctx.flat;
        dec.occ[i](e) = ctx.occupancy;
        for (int r = 0; r < ctx.occupancy; ++r) dec.send[i](r, e) = ctx.senders[r];
      }
    }
  }
  return dec;
}

void Trainer::rollout_step() {
  require(step_in_rollout_ < buffer_->steps(), "rollout_step: buffer already full");
  const int e_count = runner_->num_instances();
  const EnvSpec& spec = runner_->spec();
  const int n = spec.n_agents;
  const int t = step_in_rollout_;
  const bool continuous = spec.action_space.kind == ActionSpace::Kind::Continuous;

  std::vector<MatrixXd> agent_obs(n);
  for (int i = 0; i < n; ++i) agent_obs[i] = gather_agent_obs(i);

  StepDecision dec = coordinate(agent_obs, *board_, /*adapt=*/true);

  const MatrixXd cent = centralized_obs();
  const VectorXd v_r = models_.critic_r.forward(cent);
  const VectorXd v_c = models_.critic_c.forward(cent);

  std::vector<JointAction> actions(e_count);
  for (int e = 0; e < e_count; ++e) {
    if (continuous) {
      actions[e].cont.resize(spec.action_space.act_dim, n);
    } else {
      actions[e].disc.assign(n, 0);
    }
  }

  for (int i = 0; i < n; ++i) {
    const MatrixXd head = actor_for(i).forward(agent_obs[i], dec.ctx[i]);
    if (continuous) {
      const VectorXd log_std = actor_for(i).log_std_clamped();
      const MatrixXd sampled = gaussian::sample(head, log_std, action_rng_);
      const VectorXd logp = gaussian::log_prob(head, log_std, sampled);
      for (int e = 0; e < e_count; ++e) {
        const int idx = buffer_->index(t, e);
        buffer_->act_cont[i].col(idx) = sampled.col(e);
        buffer_->behavior_logp[i](idx) = logp(e);
        actions[e].cont.col(i) = sampled.col(e)
                                     .cwiseMax(spec.action_space.low)
                                     .cwiseMin(spec.action_space.high);
      }
    } else {
      const std::vector<int> acts = categorical::sample(head, action_rng_);
      const VectorXd logp = categorical::log_prob(head, acts);
      for (int e = 0; e < e_count; ++e) {
        const int idx = buffer_->index(t, e);
        buffer_->act_disc[i][idx] = acts[e];
        buffer_->behavior_logp[i](idx) = logp(e);
        actions[e].disc[i] = acts[e];
      }
    }
    for (int e = 0; e < e_count; ++e) {
      const int idx = buffer_->index(t, e);
      buffer_->obs[i].col(idx) = agent_obs[i].col(e);
      buffer_->ctx[i].col(idx) = dec.ctx[i].col(e);
      buffer_->senders[i].col(idx) = dec.send[i].col(e);
      buffer_->occupancy[i](idx) = dec.occ[i](e);
      buffer_->hazard_logit[i](idx) =
          flags_.message_head ? MessageHead::logit_of(dec.raw[i], e) : 0.0;
      buffer_->write_bit[i](idx) = dec.wbit[i](e);
    }
  }

  for (int e = 0; e < e_count; ++e) {
    const int idx = buffer_->index(t, e);
    buffer_->cent_obs.col(idx) = cent.col(e);
    buffer_->value_r(idx) = v_r(e);
    buffer_->value_c(idx) = v_c(e);
  }

  const VecRunner::VecStepResult result = runner_->step(actions);
  for (int e = 0; e < e_count; ++e) {
    const StepOutcome& out = result.outcomes[e];
    const int idx = buffer_->index(t, e);
    for (int i = 0; i < n; ++i) {
      buffer_->reward[i](idx) = out.rewards(i);
      buffer_->cost[i](idx) = out.costs(i);
    }
    const double team_r = out.rewards.mean();
    const double team_c = out.costs.mean();
    buffer_->team_reward(idx) = team_r;
    buffer_->team_cost(idx) = team_c;
    buffer_->done(idx) = (out.terminated || out.truncated) ? 1.0 : 0.0;
    ep_return_acc_(e) += team_r;
    ep_cost_acc_(e) += team_c;
    if (result.resets[e]) {
      completed_episodes_.emplace_back(ep_return_acc_(e), ep_cost_acc_(e));
      ep_return_acc_(e) = 0.0;
      ep_cost_acc_(e) = 0.0;
      board_->clear(e);
    }
  }

  ++step_in_rollout_;
  env_steps_ += e_count;
}

void Trainer::collect_rollout() {
  const EnvSpec& spec = runner_->spec();
  buffer_ = std::make_unique<RolloutBuffer>(cfg_.run.rollout_len, cfg_.run.num_envs, spec,
                                            context_length(cfg_.algo.topk, cfg_.algo.d_msg),
                                            cfg_.algo.topk);
  step_in_rollout_ = 0;
  completed_episodes_.clear();
  for (int t = 0; t < cfg_.run.rollout_len; ++t) rollout_step();

  const MatrixXd cent = centralized_obs();
  const VectorXd v_r = models_.critic_r.forward(cent);
  const VectorXd v_c = models_.critic_c.forward(cent);
  for (int e = 0; e < cfg_.run.num_envs; ++e) {
    const double last_done = buffer_->done(buffer_->index(cfg_.run.rollout_len - 1, e));
    buffer_->bootstrap_r(e) = last_done > 0.5 ? 0.0 : v_r(e);
    buffer_->bootstrap_c(e) = last_done > 0.5 ? 0.0 : v_c(e);
  }
  HazardLabelConfig hcfg{cfg_.algo.hazard_delta, cfg_.algo.hazard_horizon};
  buffer_->seal(cfg_.algo.gamma, cfg_.algo.gae_lambda, dual_.lambda, hcfg,
                cfg_.algo.wbce_weight_cap);
}

ActorLossCoefs Trainer::configured_coefs() const {
  ActorLossCoefs coefs;
  coefs.clip_eps = cfg_.algo.clip_eps;
  coefs.clip_weight = 1.0;
  coefs.write_penalty = cfg_.effective_write_penalty();
  coefs.hazard = cfg_.effective_hazard_coef();
  coefs.entropy = cfg_.algo.entropy_coef;
  coefs.wbce_pos_weight = buffer_ && buffer_->sealed() ? buffer_->wbce_pos_weight : 1.0;
  return coefs;
}

ActorLossTerms Trainer::actor_loss(const std::vector<int>& samples, const ActorLossCoefs& coefs,
                                   bool with_grads) {
  require(buffer_->sealed(), "actor_loss: buffer not sealed");
  const RolloutBuffer& buf = *buffer_;
  const int sample_count = static_cast<int>(samples.size());
  require(sample_count > 0, "actor_loss: empty sample set");
  const EnvSpec& spec = runner_->spec();
  const int n = spec.n_agents;
  const bool continuous = spec.action_space.kind == ActionSpace::Kind::Continuous;
  const double inv_n = 1.0 / n;
  const int slot_len = 2 * cfg_.algo.d_msg + 2;
  MessageHead& head_net = models_.message_head;

  ActorLossTerms terms;
  for (int i = 0; i < n; ++i) {
    MatrixXd obs(spec.obs_dim, sample_count);
    MatrixXd ctx = MatrixXd::Zero(context_length(cfg_.algo.topk, cfg_.algo.d_msg), sample_count);
    VectorXd old_lp(sample_count), adv(sample_count), wbits(sample_count), labels(sample_count);
    for (int s = 0; s < sample_count; ++s) {
      const int c = samples[s];
      obs.col(s) = buf.obs[i].col(c);
      old_lp(s) = buf.behavior_logp[i](c);
      adv(s) = buf.adv_hyb(c);
      wbits(s) = buf.write_bit[i](c);
      labels(s) = buf.hazard_label[i](c);
    }

    // rebuild contexts from the recorded retrievals with current parameters
    struct SlotJob {
      int sender, col, sample, slot;
    };
    std::vector<SlotJob> jobs;
    if (flags_.blackboard) {
      for (int s = 0; s < sample_count; ++s) {
        const int c = samples[s];
        for (int r = 0; r < buf.occupancy[i](c); ++r) {
          jobs.push_back({buf.senders[i](r, c), c, s, r});
        }
      }
    }
    MatrixXd raw_send;
    Mlp::Cache cache_send;
    if (!jobs.empty()) {
      MatrixXd sender_obs(spec.obs_dim, jobs.size());
      for (size_t j = 0; j < jobs.size(); ++j) {
        sender_obs.col(j) = buf.obs[jobs[j].sender].col(jobs[j].col);
      }
      raw_send = head_net.forward_raw(sender_obs, with_grads ? &cache_send : nullptr);
      ++message_forwards_;
      for (size_t j = 0; j < jobs.size(); ++j) {
        ctx.block(jobs[j].slot * slot_len, jobs[j].sample, slot_len, 1) =
            head_net.psi_of(raw_send, static_cast<int>(j));
      }
    }

    Actor& actor = actor_for(i);
    Actor::Cache cache;
    const MatrixXd head = actor.forward(obs, ctx, with_grads ? &cache : nullptr);

    VectorXd new_lp;
    VectorXd per_sample_entropy;
    MatrixXd cont_actions;
    std::vector<int> disc_actions;
    VectorXd log_std;
    double entropy_value = 0.0;
    if (continuous) {
      cont_actions.resize(spec.action_space.act_dim, sample_count);
      for (int s = 0; s < sample_count; ++s) cont_actions.col(s) = buf.act_cont[i].col(samples[s]);
      log_std = actor.log_std_clamped();
      new_lp = gaussian::log_prob(head, log_std, cont_actions);
      entropy_value = gaussian::entropy(log_std);
    } else {
      disc_actions.resize(sample_count);
      for (int s = 0; s < sample_count; ++s) disc_actions[s] = buf.act_disc[i][samples[s]];
      new_lp = categorical::log_prob(head, disc_actions);
      per_sample_entropy = categorical::entropy(head);
      entropy_value = per_sample_entropy.mean();
    }

    // clipped surrogate with per-sample gradient weights
    double clip_value = 0.0;
    VectorXd logp_weight = VectorXd::Zero(sample_count);
    for (int s = 0; s < sample_count; ++s) {
      const double ratio = std::exp(new_lp(s) - old_lp(s));
      const double clipped = std::clamp(ratio, 1.0 - coefs.clip_eps, 1.0 + coefs.clip_eps);
      const double unclipped_term = ratio * adv(s);
      const double clipped_term = clipped * adv(s);
      clip_value -= std::min(unclipped_term, clipped_term) / sample_count;
      if (unclipped_term <= clipped_term) {
        logp_weight(s) = -coefs.clip_weight * inv_n * adv(s) * ratio / sample_count;
      }
    }
    const double kl = (old_lp - new_lp).mean();

    // hazard supervision on recomputed logits
    double wbce_value = 0.0;
    MatrixXd raw_own;
    Mlp::Cache cache_own;
    VectorXd dlogit;
    if (coefs.hazard > 0.0) {
      raw_own = head_net.forward_raw(obs, with_grads ? &cache_own : nullptr);
      ++message_forwards_;
      const VectorXd logits = raw_own.row(0).transpose();
      wbce_value = wbce(logits, labels, coefs.wbce_pos_weight);
      if (with_grads) {
        dlogit.resize(sample_count);
        for (int s = 0; s < sample_count; ++s) {
          const double p = sigmoid(logits(s));
          dlogit(s) = (-coefs.wbce_pos_weight * labels(s) * (1.0 - p) +
                       (1.0 - labels(s)) * p) /
                      sample_count;
        }
      }
    }

    const double write_rate = wbits.mean();
    const double agent_total = coefs.clip_weight * clip_value + coefs.write_penalty * write_rate +
                               coefs.hazard * wbce_value - coefs.entropy * entropy_value;

    terms.clip += inv_n * clip_value;
    terms.write_rate += inv_n * write_rate;
    terms.wbce_loss += inv_n * wbce_value;
    terms.entropy += inv_n * entropy_value;
    terms.total += inv_n * agent_total;
    terms.approx_kl += inv_n * kl;

    if (!with_grads) continue;

    MatrixXd dhead;
    if (continuous) {
      dhead = gaussian::mean_grad(head, log_std, cont_actions, logp_weight);
      const VectorXd dlog_std = gaussian::log_std_grad(head, log_std, cont_actions, logp_weight,
                                                       -coefs.entropy * inv_n);
      actor.accumulate_log_std_grad(dlog_std);
    } else {
      const VectorXd entropy_weight =
          VectorXd::Constant(sample_count, -coefs.entropy * inv_n / sample_count);
      dhead = categorical::logits_grad(head, disc_actions, logp_weight, entropy_weight);
    }
    const MatrixXd dctx = actor.backward(dhead, cache);
    if (!jobs.empty()) {
      MatrixXd draw = MatrixXd::Zero(head_net.raw_rows(), jobs.size());
      for (size_t j = 0; j < jobs.size(); ++j) {
        const VectorXd dpsi = dctx.block(jobs[j].slot * slot_len, jobs[j].sample, slot_len, 1);
        draw.col(j) = head_net.raw_grad_from_psi_grad(dpsi, raw_send, static_cast<int>(j));
      }
      head_net.backward_raw(draw, cache_send);
    }
    if (coefs.hazard > 0.0) {
      MatrixXd draw_own = MatrixXd::Zero(head_net.raw_rows(), sample_count);
      draw_own.row(0) = (coefs.hazard * inv_n) * dlogit.transpose();
      head_net.backward_raw(draw_own, cache_own);
      ++wbce_backwards_;
    }
  }
  return terms;
}

double Trainer::critic_loss(const std::vector<int>& samples, bool cost_stream, bool with_grads) {
  require(buffer_->sealed(), "critic_loss: buffer not sealed");
  const RolloutBuffer& buf = *buffer_;
  const int sample_count = static_cast<int>(samples.size());
  MatrixXd input(buf.cent_obs.rows(), sample_count);
  VectorXd target(sample_count);
  for (int s = 0; s < sample_count; ++s) {
    input.col(s) = buf.cent_obs.col(samples[s]);
    target(s) = cost_stream ? buf.ret_c(samples[s]) : buf.ret_r(samples[s]);
  }
  Critic& critic = cost_stream ? models_.critic_c : models_.critic_r;
  Mlp::Cache cache;
  const VectorXd values = critic.forward(input, with_grads ? &cache : nullptr);
  const VectorXd err = values - target;
  const double loss = err.squaredNorm() / sample_count;
  if (with_grads) {
    critic.backward(2.0 * err / sample_count, cache);
  }
  return loss;
}

IterationDiagnostics Trainer::update() {
  require(buffer_->sealed(), "update: buffer not sealed");
  const int total = buffer_->size();
  const int n = buffer_->n_agents();
  const int mb_count = cfg_.algo.minibatches;
  const int mb_size = total / mb_count;
  ActorLossCoefs coefs = configured_coefs();

  std::vector<int> perm(total);
  std::iota(perm.begin(), perm.end(), 0);

  double acc_clip = 0, acc_wbce = 0, acc_ent = 0, acc_vr = 0, acc_vc = 0;
  int updates = 0;
  double last_epoch_kl = 0.0;
  for (int epoch = 0; epoch < cfg_.algo.update_epochs; ++epoch) {
    shuffle_indices(perm, shuffle_rng_);
    double epoch_kl = 0.0;
    for (int mb = 0; mb < mb_count; ++mb) {
      const std::vector<int> samples(perm.begin() + mb * mb_size,
                                     perm.begin() + (mb + 1) * mb_size);
      for (Actor& actor : models_.actors) actor.zero_grads();
      models_.message_head.net().zero_grads();
      const ActorLossTerms terms = actor_loss(samples, coefs, /*with_grads=*/true);
      if (!std::isfinite(terms.total)) {
        throw NumericalError("update: non-finite actor loss");
      }
      for (size_t a = 0; a < models_.actors.size(); ++a) {
        VectorXd grads = models_.actors[a].gather_grads();
        clip_grad_norm(grads, cfg_.algo.max_grad_norm);
        VectorXd params = models_.actors[a].gather_params();
        actor_opt_[a].step(params, grads);
        models_.actors[a].scatter_params(params);
      }
      if (flags_.message_head) {
        VectorXd grads = models_.message_head.net().grads();
        clip_grad_norm(grads, cfg_.algo.max_grad_norm);
        head_opt_.step(models_.message_head.net().params(), grads);
      }

      models_.critic_r.net().zero_grads();
      const double vr_loss = critic_loss(samples, /*cost_stream=*/false, /*with_grads=*/true);
      VectorXd vr_grads = models_.critic_r.net().grads();
      clip_grad_norm(vr_grads, cfg_.algo.max_grad_norm);
      critic_r_opt_.step(models_.critic_r.net().params(), vr_grads);

      models_.critic_c.net().zero_grads();
      const double vc_loss = critic_loss(samples, /*cost_stream=*/true, /*with_grads=*/true);
      VectorXd vc_grads = models_.critic_c.net().grads();
      clip_grad_norm(vc_grads, cfg_.algo.max_grad_norm);
      critic_c_opt_.step(models_.critic_c.net().params(), vc_grads);

      if (!std::isfinite(vr_loss) || !std::isfinite(vc_loss)) {
        throw NumericalError("update: non-finite critic loss");
      }

      acc_clip += terms.clip;
      acc_wbce += terms.wbce_loss;
      acc_ent += terms.entropy;
      acc_vr += vr_loss;
      acc_vc += vc_loss;
      epoch_kl += terms.approx_kl;
      ++updates;
    }
    last_epoch_kl = epoch_kl / mb_count;
    if (last_epoch_kl > cfg_.algo.target_kl) break;
  }

  // dual step from episodes completed during this iteration's collection
  if (!completed_episodes_.empty()) {
    double mean_c = 0.0, mean_r = 0.0;
    for (const auto& [er, ec] : completed_episodes_) {
      mean_r += er;
      mean_c += ec;
    }
    mean_r /= completed_episodes_.size();
    mean_c /= completed_episodes_.size();
    cost_estimate_ = mean_c;
    last_ep_return_ = mean_r;
    last_ep_cost_ = mean_c;
  }
  dual_ = dual_update(dual_, cost_estimate_);

  ++iteration_;
  IterationDiagnostics diag;
  diag.iteration = iteration_;
  diag.env_steps = env_steps_;
  diag.mean_ep_return = last_ep_return_;
  diag.mean_ep_cost = last_ep_cost_;
  diag.lambda = dual_.lambda;
  diag.tau = threshold_.tau;
  double write_rate = 0.0, occupancy = 0.0;
  for (int i = 0; i < n; ++i) {
    write_rate += buffer_->write_bit[i].mean();
    occupancy += buffer_->occupancy[i].cast<double>().mean();
  }
  diag.write_rate = write_rate / n;
  diag.context_occupancy = occupancy / n;
  diag.hazard_label_rate = buffer_->hazard_label_rate;
  diag.wbce_loss = acc_wbce / updates;
  diag.clip_loss = acc_clip / updates;
  diag.value_r_loss = acc_vr / updates;
  diag.value_c_loss = acc_vc / updates;
  diag.entropy = acc_ent / updates;
  diag.approx_kl = last_epoch_kl;
  return diag;
}

IterationDiagnostics Trainer::run_iteration() {
  collect_rollout();
  return update();
}

EvalCheckpoint Trainer::evaluate(std::uint64_t eval_seed, long long nominal_step) {
  const auto env = make_env(cfg_);
  const EnvSpec& spec = env->spec();
  const int n = spec.n_agents;
  const bool continuous = spec.action_space.kind == ActionSpace::Kind::Continuous;
  Blackboard eval_board(1, n, cfg_.algo.d_msg);

  std::vector<double> returns, costs;
  for (int ep = 0; ep < cfg_.run.eval_episodes; ++ep) {
    MatrixXd obs = env->reset(mix_seed(eval_seed, ep)).obs;
    eval_board.clear(0);
    std::vector<VectorXd> step_rewards, step_costs;
    while (true) {
      std::vector<MatrixXd> agent_obs(n);
      for (int i = 0; i < n; ++i) agent_obs[i] = obs.col(i);
      StepDecision dec = coordinate(agent_obs, eval_board, /*adapt=*/false);

      JointAction action;
      if (continuous) {
        action.cont.resize(spec.action_space.act_dim, n);
      } else {
        action.disc.assign(n, 0);
      }
      for (int i = 0; i < n; ++i) {
        const MatrixXd head = actor_for(i).forward(agent_obs[i], dec.ctx[i]);
        if (continuous) {
          action.cont.col(i) =
              head.col(0).cwiseMax(spec.action_space.low).cwiseMin(spec.action_space.high);
        } else {
          action.disc[i] = categorical::argmax(head)[0];
        }
      }
      const StepOutcome out = env->step(action);
      step_rewards.push_back(out.rewards);
      step_costs.push_back(out.costs);
      obs = out.next_obs;
      if (out.terminated || out.truncated) break;
    }
    const auto [ep_return, ep_cost] = episodic_aggregate(step_rewards, step_costs);
    returns.push_back(ep_return);
    costs.push_back(ep_cost);
  }
  return EvalCheckpoint::from_episodes(nominal_step, std::move(returns), std::move(costs),
                                       cfg_.algo.cost_budget);
}

TrainCounters Trainer::counters() const {
  TrainCounters c;
  c.board_writes = board_->write_count();
  c.board_reads = board_->read_count();
  c.message_forwards = message_forwards_;
  c.wbce_backwards = wbce_backwards_;
  return c;
}

}  // namespace co2po
