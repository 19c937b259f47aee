#include "co2po/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"

using namespace co2po;

namespace {

ExperimentConfig tiny_config(const std::string& variant = "co2po") {
  ExperimentConfig cfg;
  cfg.env.name = "corridor";
  cfg.env.horizon = 16;
  cfg.algo.variant = variant;
  cfg.algo.hidden = 8;
  cfg.algo.d_msg = 3;
  cfg.algo.embed_dim = 4;
  cfg.algo.topk = 2;
  cfg.algo.update_epochs = 2;
  cfg.run.total_steps = 64;
  cfg.run.num_envs = 2;
  cfg.run.rollout_len = 16;
  cfg.run.eval_interval = 32;
  cfg.run.eval_episodes = 2;
  cfg.run.seeds = {0};
  cfg.run.out_dir = "/tmp/co2po_trainer_tests";
  cfg.validate();
  return cfg;
}

ExperimentConfig tiny_grid_config(const std::string& variant = "co2po") {
  ExperimentConfig cfg = tiny_config(variant);
  cfg.env.name = "hazard_goals";
  cfg.env.grid_w = 7;
  cfg.env.grid_h = 5;
  cfg.env.n_hazards = 4;
  cfg.validate();
  return cfg;
}

VectorXd gather_all_params(Trainer& trainer) {
  std::vector<VectorXd> parts;
  parts.push_back(trainer.models().message_head.net().params());
  for (auto& actor : trainer.models().actors) parts.push_back(actor.gather_params());
  Eigen::Index total = 0;
  for (const auto& p : parts) total += p.size();
  VectorXd flat(total);
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    flat.segment(at, p.size()) = p;
    at += p.size();
  }
  return flat;
}

void scatter_all_params(Trainer& trainer, const VectorXd& flat) {
  Eigen::Index at = 0;
  auto& head = trainer.models().message_head.net();
  head.params() = flat.segment(at, head.param_count());
  at += head.param_count();
  for (auto& actor : trainer.models().actors) {
    actor.scatter_params(flat.segment(at, actor.param_count()));
    at += actor.param_count();
  }
}

VectorXd gather_all_grads(Trainer& trainer) {
  std::vector<VectorXd> parts;
  parts.push_back(trainer.models().message_head.net().grads());
  for (auto& actor : trainer.models().actors) parts.push_back(actor.gather_grads());
  Eigen::Index total = 0;
  for (const auto& p : parts) total += p.size();
  VectorXd flat(total);
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    flat.segment(at, p.size()) = p;
    at += p.size();
  }
  return flat;
}

double max_rel_err(const VectorXd& a, const VectorXd& b) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double denom = std::max({std::abs(a(i)), std::abs(b(i)), 1e-6});
    worst = std::max(worst, std::abs(a(i) - b(i)) / denom);
  }
  return worst;
}

std::vector<int> first_samples(int count) {
  std::vector<int> samples(count);
  std::iota(samples.begin(), samples.end(), 0);
  return samples;
}

}  // namespace

TEST_CASE("gae worked examples") {
  // single terminal step, gamma = lambda = 1: A = r - V, target = r
  VectorXd r1(1), v1(1), d1(1);
  r1 << 1.0;
  v1 << 0.0;
  d1 << 1.0;
  const GaeResult one = compute_gae(r1, v1, 99.0, 1.0, 1.0, d1);
  CHECK(one.advantages(0) == 1.0);
  CHECK(one.returns(0) == 1.0);

  // zero signal, zero values: everything stays zero
  VectorXd r2 = VectorXd::Zero(2), v2 = VectorXd::Zero(2), d2(2);
  d2 << 0.0, 1.0;
  const GaeResult zero = compute_gae(r2, v2, 0.0, 0.96, 0.95, d2);
  CHECK(zero.advantages.cwiseAbs().maxCoeff() == 0.0);

  CHECK_THROWS_AS(compute_gae(r2, VectorXd::Zero(3), 0.0, 1.0, 1.0, d2),
                  std::invalid_argument);
}

TEST_CASE("gae equals the exponentially weighted delta sum") {
  RandomStream rng(71);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 2 + rng.uniform_int(20);
    const double gamma = 0.96, lam = 0.95;
    VectorXd r(n), v(n), d = VectorXd::Zero(n);
    for (int t = 0; t < n; ++t) {
      r(t) = rng.uniform(-1.0, 1.0);
      v(t) = rng.uniform(-1.0, 1.0);
      if (rng.uniform() < 0.2) d(t) = 1.0;
    }
    d(n - 1) = rng.uniform() < 0.5 ? 1.0 : 0.0;
    const double bootstrap = rng.uniform(-1.0, 1.0);
    const GaeResult got = compute_gae(r, v, bootstrap, gamma, lam, d);

    // oracle: A_t = sum_l (gamma*lam)^l delta_{t+l}, stopping after a done
    for (int t = 0; t < n; ++t) {
      double acc = 0.0, scale = 1.0;
      for (int l = t; l < n; ++l) {
        const double next_v = (l == n - 1) ? bootstrap : v(l + 1);
        const double delta = r(l) + gamma * next_v * (1.0 - d(l)) - v(l);
        acc += scale * delta;
        if (d(l) > 0.5) break;
        scale *= gamma * lam;
      }
      REQUIRE(got.advantages(t) == doctest::Approx(acc).epsilon(1e-10));
      REQUIRE(got.returns(t) == doctest::Approx(acc + v(t)).epsilon(1e-10));
    }
  }
}

TEST_CASE("hybrid advantage arithmetic") {
  VectorXd ar(1), ac(1);
  ar << 1.0;
  ac << 0.5;
  CHECK(hybrid_advantage(ar, ac, 0.1)(0) == doctest::Approx(0.95).epsilon(1e-12));
  CHECK(hybrid_advantage(ar, ac, 0.0)(0) == 1.0);
  CHECK(hybrid_advantage(ar, VectorXd::Zero(1), 7.3)(0) == 1.0);
  CHECK_THROWS_AS(hybrid_advantage(ar, ac, -0.1), std::invalid_argument);
}

TEST_CASE("advantage normalization preserves sample ordering") {
  RandomStream rng(72);
  VectorXd adv(64);
  for (int i = 0; i < 64; ++i) adv(i) = rng.uniform(-3.0, 3.0);
  VectorXd normalized = adv;
  normalize_advantages(normalized);
  std::vector<int> order_a(64), order_b(64);
  std::iota(order_a.begin(), order_a.end(), 0);
  order_b = order_a;
  std::sort(order_a.begin(), order_a.end(), [&](int a, int b) { return adv(a) < adv(b); });
  std::sort(order_b.begin(), order_b.end(),
            [&](int a, int b) { return normalized(a) < normalized(b); });
  CHECK(order_a == order_b);
  CHECK(normalized.mean() == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("clip surrogate worked examples") {
  VectorXd zero(1), adv(1);
  zero << 0.0;

  // rho = 1: loss = -mean(A)
  RandomStream rng(73);
  VectorXd lp(8), a(8);
  for (int i = 0; i < 8; ++i) {
    lp(i) = rng.uniform(-1.0, 1.0);
    a(i) = rng.uniform(-1.0, 1.0);
  }
  CHECK(clip_surrogate(lp, lp, a, 0.2) == doctest::Approx(-a.mean()).epsilon(1e-12));

  // rho = 1.5, eps = 0.2, A = 1 -> clipped branch, contribution -1.2
  VectorXd new_lp(1), old_lp(1);
  new_lp << std::log(1.5);
  old_lp << 0.0;
  adv << 1.0;
  CHECK(clip_surrogate(new_lp, old_lp, adv, 0.2) == doctest::Approx(-1.2).epsilon(1e-12));

  // rho = 1.5, A = -1 -> unclipped branch wins the min, contribution +1.5
  adv << -1.0;
  CHECK(clip_surrogate(new_lp, old_lp, adv, 0.2) == doctest::Approx(1.5).epsilon(1e-12));
}

TEST_CASE("wbce worked examples and plain-bce oracle") {
  VectorXd logit(1), label(1);
  logit << 0.0;
  label << 1.0;
  CHECK(wbce(logit, label, 1.0) == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  logit << 20.0;
  CHECK(wbce(logit, label, 1.0) == doctest::Approx(0.0).epsilon(1e-8));

  RandomStream rng(74);
  VectorXd logits(32), labels(32);
  for (int i = 0; i < 32; ++i) {
    logits(i) = rng.uniform(-4.0, 4.0);
    labels(i) = rng.uniform() < 0.3 ? 1.0 : 0.0;
  }
  // unweighted case equals an independently computed bce
  double oracle = 0.0;
  for (int i = 0; i < 32; ++i) {
    const double p = 1.0 / (1.0 + std::exp(-logits(i)));
    oracle += -(labels(i) * std::log(p) + (1.0 - labels(i)) * std::log(1.0 - p));
  }
  oracle /= 32.0;
  CHECK(wbce(logits, labels, 1.0) == doctest::Approx(oracle).epsilon(1e-9));

  CHECK_THROWS_AS(wbce(logits, labels, 0.0), std::invalid_argument);
}

TEST_CASE("dual update worked examples and monotone pressure") {
  DualState s;
  s.lambda = 0.1;
  s.step_size = 5e-4;
  s.budget = 25.0;
  CHECK(dual_update(s, 30.0).lambda == doctest::Approx(0.1025).epsilon(1e-12));
  CHECK(dual_update(s, 25.0).lambda == doctest::Approx(0.1).epsilon(1e-12));

  s.lambda = 0.001;
  CHECK(dual_update(s, 20.0).lambda == 0.0);  // projection at zero

  // constant violation drives lambda strictly up until the cap
  s.lambda = 0.0;
  s.lambda_max = 0.01;
  double prev = s.lambda;
  for (int k = 0; k < 10; ++k) {
    s = dual_update(s, 30.0);
    if (s.lambda < s.lambda_max) {
      REQUIRE(s.lambda > prev);
    }
    REQUIRE(s.lambda <= s.lambda_max);
    REQUIRE(s.lambda >= 0.0);
    prev = s.lambda;
  }
  CHECK(s.lambda == s.lambda_max);
}

TEST_CASE("always-write stores unit write bits; write penalty equals its coefficient") {
  Trainer trainer(tiny_config("always-write"), 3);
  trainer.collect_rollout();
  const RolloutBuffer& buf = trainer.buffer();
  for (int i = 0; i < buf.n_agents(); ++i) {
    CHECK(buf.write_bit[i].minCoeff() == 1.0);
  }
  ActorLossCoefs coefs = trainer.configured_coefs();
  const ActorLossTerms terms = trainer.actor_loss(first_samples(buf.size()), coefs, false);
  CHECK(terms.write_rate == 1.0);
}

TEST_CASE("no-blackboard stores all-zero contexts and performs zero reads") {
  Trainer trainer(tiny_config("no-blackboard"), 3);
  trainer.run_iteration();
  const RolloutBuffer& buf = trainer.buffer();
  for (int i = 0; i < buf.n_agents(); ++i) {
    CHECK(buf.ctx[i].cwiseAbs().maxCoeff() == 0.0);
    CHECK(buf.occupancy[i].maxCoeff() == 0);
  }
  const TrainCounters counters = trainer.counters();
  CHECK(counters.board_reads == 0);
  CHECK(counters.board_writes == 0);
  CHECK(counters.message_forwards > 0);  // hazard head still runs
  CHECK(counters.wbce_backwards > 0);
}

TEST_CASE("mappo-lag degenerate config touches no blackboard or hazard paths") {
  Trainer trainer(tiny_config("mappo-lag-degenerate"), 3);
  trainer.run_iteration();
  trainer.evaluate(1, 0);
  const TrainCounters counters = trainer.counters();
  CHECK(counters.board_reads == 0);
  CHECK(counters.board_writes == 0);
  CHECK(counters.message_forwards == 0);
  CHECK(counters.wbce_backwards == 0);
  const RolloutBuffer& buf = trainer.buffer();
  CHECK(buf.write_bit[0].maxCoeff() == 0.0);
  CHECK(buf.ctx[0].cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("a step's writes are readable by peers within the same step") {
  ExperimentConfig cfg = tiny_config("always-write");
  Trainer trainer(cfg, 5);
  // capture agent 0's observation before the step consumes it
  const MatrixXd obs0 = trainer.runner().obs(0);
  trainer.rollout_step();
  const RolloutBuffer& buf = trainer.buffer();
  const int idx = buf.index(0, 0);
  REQUIRE(buf.occupancy[1](idx) == 1);
  CHECK(buf.senders[1](0, idx) == 0);

  // slot 0 of agent 1's context is psi of agent 0's entry from this step
  const MessageHeadOutput msg =
      message_head_forward(trainer.models().message_head, obs0.col(0));
  const int d = cfg.algo.d_msg;
  VectorXd psi(2 * d + 2);
  psi << msg.state_summary, msg.intent, msg.yield_flag, msg.hazard_prob;
  const VectorXd stored = buf.ctx[1].col(idx).head(2 * d + 2);
  CHECK((stored - psi).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("stored contexts match the update-time recomputation at unchanged parameters") {
  Trainer trainer(tiny_config("always-write"), 9);
  trainer.collect_rollout();
  RolloutBuffer& buf = trainer.buffer();
  // recompute through the loss path with zero coefficient weights; the
  // context rebuild must agree with what acting stored
  const int d = trainer.config().algo.d_msg;
  const int slot_len = 2 * d + 2;
  for (int i = 0; i < buf.n_agents(); ++i) {
    for (int s : {0, 3, buf.size() - 1}) {
      for (int r = 0; r < buf.occupancy[i](s); ++r) {
        const int sender = buf.senders[i](r, s);
        const MessageHeadOutput msg = message_head_forward(trainer.models().message_head,
                                                           buf.obs[sender].col(s));
        VectorXd psi(slot_len);
        psi << msg.state_summary, msg.intent, msg.yield_flag, msg.hazard_prob;
        const VectorXd stored = buf.ctx[i].col(s).segment(r * slot_len, slot_len);
        REQUIRE((stored - psi).cwiseAbs().maxCoeff() < 1e-12);
      }
    }
  }
}

TEST_CASE("actor loss gradients match central differences (continuous env)") {
  ExperimentConfig cfg = tiny_config("always-write");
  cfg.algo.entropy_coef = 0.01;
  Trainer trainer(cfg, 13);
  trainer.collect_rollout();

  ActorLossCoefs coefs;
  coefs.clip_eps = 0.2;
  coefs.write_penalty = 0.5;
  coefs.hazard = 0.7;
  coefs.entropy = 0.01;
  coefs.wbce_pos_weight = 3.0;
  const std::vector<int> samples = first_samples(8);

  VectorXd params = gather_all_params(trainer);
  VectorXd fd(params.size());
  const double h = 1e-5;
  for (Eigen::Index k = 0; k < params.size(); ++k) {
    const double saved = params(k);
    params(k) = saved + h;
    scatter_all_params(trainer, params);
    const double up = trainer.actor_loss(samples, coefs, false).total;
    params(k) = saved - h;
    scatter_all_params(trainer, params);
    const double down = trainer.actor_loss(samples, coefs, false).total;
    params(k) = saved;
    fd(k) = (up - down) / (2.0 * h);
  }
  scatter_all_params(trainer, params);

  trainer.models().message_head.net().zero_grads();
  for (auto& actor : trainer.models().actors) actor.zero_grads();
  trainer.actor_loss(samples, coefs, true);
  const VectorXd analytic = gather_all_grads(trainer);
  CHECK(max_rel_err(analytic, fd) < 1e-4);
}

TEST_CASE("actor loss gradients match central differences (discrete env)") {
  ExperimentConfig cfg = tiny_grid_config("always-write");
  cfg.algo.entropy_coef = 0.01;
  Trainer trainer(cfg, 14);
  trainer.collect_rollout();

  ActorLossCoefs coefs;
  coefs.clip_eps = 0.2;
  coefs.write_penalty = 0.3;
  coefs.hazard = 0.5;
  coefs.entropy = 0.01;
  coefs.wbce_pos_weight = 2.0;
  const std::vector<int> samples = first_samples(8);

  VectorXd params = gather_all_params(trainer);
  VectorXd fd(params.size());
  const double h = 1e-5;
  for (Eigen::Index k = 0; k < params.size(); ++k) {
    const double saved = params(k);
    params(k) = saved + h;
    scatter_all_params(trainer, params);
    const double up = trainer.actor_loss(samples, coefs, false).total;
    params(k) = saved - h;
    scatter_all_params(trainer, params);
    const double down = trainer.actor_loss(samples, coefs, false).total;
    params(k) = saved;
    fd(k) = (up - down) / (2.0 * h);
  }
  scatter_all_params(trainer, params);

  trainer.models().message_head.net().zero_grads();
  for (auto& actor : trainer.models().actors) actor.zero_grads();
  trainer.actor_loss(samples, coefs, true);
  const VectorXd analytic = gather_all_grads(trainer);
  CHECK(max_rel_err(analytic, fd) < 1e-4);
}

TEST_CASE("critic regression gradients match central differences") {
  Trainer trainer(tiny_config(), 15);
  trainer.collect_rollout();
  const std::vector<int> samples = first_samples(8);

  Critic& critic = trainer.models().critic_r;
  critic.net().params().array() += 0.03;  // lift the zero output layer
  VectorXd params = critic.net().params();
  VectorXd fd(params.size());
  const double h = 1e-5;
  for (Eigen::Index k = 0; k < params.size(); ++k) {
    const double saved = params(k);
    critic.net().params()(k) = saved + h;
    const double up = trainer.critic_loss(samples, false, false);
    critic.net().params()(k) = saved - h;
    const double down = trainer.critic_loss(samples, false, false);
    critic.net().params()(k) = saved;
    fd(k) = (up - down) / (2.0 * h);
  }
  critic.net().zero_grads();
  trainer.critic_loss(samples, false, true);
  CHECK(max_rel_err(critic.net().grads(), fd) < 1e-4);
}

TEST_CASE("zero learning rates freeze parameters while the dual still moves") {
  ExperimentConfig cfg = tiny_config();
  cfg.algo.actor_lr = 0.0;
  cfg.algo.critic_lr = 0.0;
  cfg.algo.dual_init = 0.2;
  cfg.env.turbulence = 0.3;  // guarantee some cost
  Trainer trainer(cfg, 21);
  const VectorXd before = gather_all_params(trainer);
  const VectorXd critic_before = trainer.models().critic_r.net().params();
  const double lambda_before = trainer.dual().lambda;
  trainer.run_iteration();
  CHECK((gather_all_params(trainer).array() == before.array()).all());
  CHECK((trainer.models().critic_r.net().params().array() == critic_before.array()).all());
  CHECK(trainer.dual().lambda != lambda_before);
}

TEST_CASE("hazard coefficient zero accumulates no wbce gradients") {
  Trainer trainer(tiny_config("no-hazard-loss"), 22);
  trainer.run_iteration();
  CHECK(trainer.counters().wbce_backwards == 0);

  // the head still received context-path gradients, but none from wbce:
  // isolate by rerunning the loss with the configured (zero) hazard coef
  trainer.models().message_head.net().zero_grads();
  for (auto& actor : trainer.models().actors) actor.zero_grads();
  ActorLossCoefs coefs = trainer.configured_coefs();
  CHECK(coefs.hazard == 0.0);
  trainer.actor_loss(first_samples(8), coefs, true);
  CHECK(trainer.counters().wbce_backwards == 0);
}

TEST_CASE("identical seed and config reproduce parameters bitwise") {
  ExperimentConfig cfg = tiny_config();
  Trainer a(cfg, 33), b(cfg, 33);
  const IterationDiagnostics da = a.run_iteration();
  const IterationDiagnostics db = b.run_iteration();
  CHECK((gather_all_params(a).array() == gather_all_params(b).array()).all());
  CHECK((a.models().critic_r.net().params().array() ==
         b.models().critic_r.net().params().array())
            .all());
  CHECK(da.approx_kl == db.approx_kl);
  CHECK(da.mean_ep_cost == db.mean_ep_cost);

  Trainer c(cfg, 34);
  c.run_iteration();
  CHECK_FALSE((gather_all_params(a).array() == gather_all_params(c).array()).all());
}

TEST_CASE("with a zero cost stream one iteration matches unconstrained ppo bitwise") {
  ExperimentConfig cfg = tiny_config();
  cfg.env.wall_cost = 0.0;
  cfg.env.proximity_cost = 0.0;  // cost stream identically zero
  ExperimentConfig unconstrained = cfg;
  unconstrained.algo.dual_init = 0.0;
  unconstrained.algo.dual_step = 0.0;
  cfg.algo.dual_init = 0.7;  // any multiplier; A_C is exactly zero

  Trainer co2po(cfg, 44), ppo(unconstrained, 44);
  co2po.run_iteration();
  ppo.run_iteration();
  CHECK(co2po.buffer().adv_c.cwiseAbs().maxCoeff() == 0.0);
  CHECK((gather_all_params(co2po).array() == gather_all_params(ppo).array()).all());
  CHECK((co2po.models().critic_r.net().params().array() ==
         ppo.models().critic_r.net().params().array())
            .all());
}

TEST_CASE("kl early stop aborts later epochs without breaking the iteration") {
  ExperimentConfig cfg = tiny_config();
  cfg.algo.target_kl = 1e-12;
  cfg.algo.update_epochs = 10;
  Trainer trainer(cfg, 55);
  const IterationDiagnostics diag = trainer.run_iteration();
  CHECK(diag.iteration == 1);
  CHECK(std::isfinite(diag.approx_kl));
}

TEST_CASE("evaluation is deterministic and does not disturb training state") {
  Trainer trainer(tiny_config(), 66);
  trainer.run_iteration();
  const VectorXd params = gather_all_params(trainer);
  const double tau = trainer.threshold().tau;
  const EvalCheckpoint a = trainer.evaluate(123, 999);
  const EvalCheckpoint b = trainer.evaluate(123, 999);
  CHECK(a.episode_returns == b.episode_returns);
  CHECK(a.episode_costs == b.episode_costs);
  CHECK(a.step == 999);
  CHECK((gather_all_params(trainer).array() == params.array()).all());
  CHECK(trainer.threshold().tau == tau);
}

TEST_CASE("rollout buffer rejects use before sealing") {
  Trainer trainer(tiny_config(), 67);
  CHECK_THROWS_AS(trainer.actor_loss(first_samples(4), ActorLossCoefs{}, false),
                  std::invalid_argument);
}

TEST_CASE("shared-actor flag trains one parameter set for all agents") {
  ExperimentConfig cfg = tiny_config("always-write");
  cfg.algo.share_actor_params = true;
  Trainer trainer(cfg, 88);
  CHECK(trainer.models().actors.size() == 1);
  trainer.run_iteration();

  Trainer again(cfg, 88);
  again.run_iteration();
  CHECK((gather_all_params(trainer).array() == gather_all_params(again).array()).all());

  // shared gradients still match finite differences
  ExperimentConfig fd_cfg = cfg;
  Trainer fd_trainer(fd_cfg, 89);
  fd_trainer.collect_rollout();
  ActorLossCoefs coefs;
  coefs.hazard = 0.5;
  coefs.write_penalty = 0.1;
  coefs.entropy = 0.01;
  const std::vector<int> samples = first_samples(6);
  VectorXd params = gather_all_params(fd_trainer);
  VectorXd fd(params.size());
  const double h = 1e-5;
  for (Eigen::Index k = 0; k < params.size(); ++k) {
    const double saved = params(k);
    params(k) = saved + h;
    scatter_all_params(fd_trainer, params);
    const double up = fd_trainer.actor_loss(samples, coefs, false).total;
    params(k) = saved - h;
    scatter_all_params(fd_trainer, params);
    const double down = fd_trainer.actor_loss(samples, coefs, false).total;
    params(k) = saved;
    fd(k) = (up - down) / (2.0 * h);
  }
  scatter_all_params(fd_trainer, params);
  fd_trainer.models().message_head.net().zero_grads();
  for (auto& actor : fd_trainer.models().actors) actor.zero_grads();
  fd_trainer.actor_loss(samples, coefs, true);
  CHECK(max_rel_err(gather_all_grads(fd_trainer), fd) < 1e-4);
}
