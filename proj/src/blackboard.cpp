#include "co2po/blackboard.hpp"

#include <algorithm>

namespace co2po {

Blackboard::Blackboard(int num_instances, int n_agents, int d_msg)
    : n_agents_(n_agents), d_msg_(d_msg) {
  require(num_instances >= 1 && n_agents >= 1 && d_msg >= 1, "Blackboard: bad dimensions");
  slots_.assign(num_instances, std::vector<BlackboardEntry>(n_agents));
  present_.assign(num_instances, std::vector<std::uint8_t>(n_agents, 0));
}

void Blackboard::write(int env_id, int agent_id, const BlackboardEntry& entry) {
  require(env_id >= 0 && env_id < num_instances(), "Blackboard::write: bad env id");
  require(agent_id >= 0 && agent_id < n_agents_, "Blackboard::write: bad agent id");
  require(entry.state_summary.size() == d_msg_ && entry.intent.size() == d_msg_,
          "Blackboard::write: field length mismatch");
  require(entry.state_summary.allFinite() && entry.intent.allFinite(),
          "Blackboard::write: non-finite fields");
  require(entry.yield_flag >= 0.0 && entry.yield_flag <= 1.0 && entry.hazard_prob >= 0.0 &&
              entry.hazard_prob <= 1.0,
          "Blackboard::write: yield/hazard outside [0,1]");
  slots_[env_id][agent_id] = entry;
  present_[env_id][agent_id] = 1;
  ++writes_;
}

MemoryContext Blackboard::read_topk(int env_id, int reader, const VectorXd& query, int k) const {
  require(env_id >= 0 && env_id < num_instances(), "Blackboard::read_topk: bad env id");
  require(query.size() == d_msg_, "Blackboard::read_topk: query length mismatch");
  require(k >= 1, "Blackboard::read_topk: k must be >= 1");
  ++reads_;

  const VectorXd q = query / (query.norm() + kCosineEps);
  std::vector<std::pair<double, int>> scored;  // (score, agent id)
  for (int j = 0; j < n_agents_; ++j) {
    if (j == reader || !present_[env_id][j]) continue;
    const BlackboardEntry& entry = slots_[env_id][j];
    if (entry.write_bit != 1) continue;
    const double s = entry.state_summary.dot(q) / (entry.state_summary.norm() + kCosineEps);
    scored.emplace_back(s, j);
  }
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });

  const int slot_len = 2 * d_msg_ + 2;
  MemoryContext ctx;
  ctx.flat = VectorXd::Zero(context_length(k, d_msg_));
  ctx.occupancy = std::min<int>(k, static_cast<int>(scored.size()));
  for (int r = 0; r < ctx.occupancy; ++r) {
    const BlackboardEntry& entry = slots_[env_id][scored[r].second];
    ctx.flat.segment(r * slot_len, d_msg_) = entry.state_summary;
    ctx.flat.segment(r * slot_len + d_msg_, d_msg_) = entry.intent;
    ctx.flat(r * slot_len + 2 * d_msg_) = entry.yield_flag;
    ctx.flat(r * slot_len + 2 * d_msg_ + 1) = entry.hazard_prob;
    ctx.senders.push_back(scored[r].second);
  }
  return ctx;
}

void Blackboard::clear(int env_id) {
  require(env_id >= 0 && env_id < num_instances(), "Blackboard::clear: bad env id");
  std::fill(present_[env_id].begin(), present_[env_id].end(), 0);
}

ThresholdState update_threshold(ThresholdState state, double observed_rate) {
  require(observed_rate >= 0.0 && observed_rate <= 1.0, "update_threshold: rate outside [0,1]");
  if (!state.adaptive) return state;
  state.write_rate_ema =
      state.ema_decay * state.write_rate_ema + (1.0 - state.ema_decay) * observed_rate;
  state.tau = std::clamp(state.tau + state.step_size * (state.write_rate_ema - state.target_rate),
                         state.tau_min, state.tau_max);
  return state;
}

}  // namespace co2po
