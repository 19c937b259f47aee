#pragma once

#include <cstdint>
#include <vector>

#include "co2po/common.hpp"

namespace co2po {

inline constexpr double kCosineEps = 1e-8;

// Current broadcast of one agent. Writes overwrite; entries with
// write_bit == 0 stay stored but are invisible to reads.
struct BlackboardEntry {
  VectorXd state_summary;  // x, length d_msg
  VectorXd intent;         // u, length d_msg
  double yield_flag = 0.0;   // in [0, 1]
  double hazard_prob = 0.0;  // in [0, 1]
  int write_bit = 0;
};

// Fixed-length ranked concatenation of retrieved entries. Slot j holds
// [x; u; y; p] of the j-th ranked sender; slots past occupancy are zero.
struct MemoryContext {
  VectorXd flat;
  int occupancy = 0;
  std::vector<int> senders;  // ranked agent ids, size == occupancy
};

inline int context_length(int k, int d_msg) { return k * (2 * d_msg + 2); }

// 1 iff hazard probability strictly exceeds the threshold.
inline int gate(double hazard_prob, double threshold) {
  return hazard_prob > threshold ? 1 : 0;
}

// Shared memory for all environment instances; one slot per (env, agent).
class Blackboard {
 public:
  Blackboard(int num_instances, int n_agents, int d_msg);

  void write(int env_id, int agent_id, const BlackboardEntry& entry);

  // Scores every active entry of the other agents in env_id by cosine
  // similarity against the query, takes the top k (ties broken by ascending
  // agent id) and concatenates them in ranked order, zero-padded.
  MemoryContext read_topk(int env_id, int reader, const VectorXd& query, int k) const;

  void clear(int env_id);

  int num_instances() const { return static_cast<int>(slots_.size()); }
  int n_agents() const { return n_agents_; }
  int d_msg() const { return d_msg_; }

  std::uint64_t write_count() const { return writes_; }
  std::uint64_t read_count() const { return reads_; }

 private:
  int n_agents_;
  int d_msg_;
  std::vector<std::vector<BlackboardEntry>> slots_;  // [env][agent]
  std::vector<std::vector<std::uint8_t>> present_;   // written since last clear
  std::uint64_t writes_ = 0;
  mutable std::uint64_t reads_ = 0;
};

// Write-threshold controller state (EMA of the write rate plus the clipped
// threshold update).
struct ThresholdState {
  double tau = 0.10;
  double write_rate_ema = 0.05;  // rho_bar, initialized at the target rate
  double ema_decay = 0.99;       // beta
  double step_size = 0.05;       // eta
  double target_rate = 0.05;     // rho_star
  double tau_min = 0.05;
  double tau_max = 0.95;
  bool adaptive = true;
};

// rho_bar' = beta rho_bar + (1-beta) rho_t;
// tau' = clip(tau + eta (rho_bar' - rho_star), tau_min, tau_max).
// No-op when the controller is not adaptive.
ThresholdState update_threshold(ThresholdState state, double observed_rate);

}  // namespace co2po
