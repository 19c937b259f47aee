#pragma once

#include <optional>
#include <vector>

#include "co2po/common.hpp"

namespace co2po {

// One deterministic evaluation pass: per-episode returns/costs plus their
// means.
struct EvalCheckpoint {
  long long step = 0;
  double mean_return = 0.0;
  double mean_cost = 0.0;
  std::vector<double> episode_returns;
  std::vector<double> episode_costs;
  int violations = 0;  // episodes with cost strictly above the budget

  static EvalCheckpoint from_episodes(long long step, std::vector<double> returns,
                                      std::vector<double> costs, double budget);
};

struct MetricsReport {
  double r_final = 0.0;
  double c_final = 0.0;
  double c_peak = 0.0;
  double violation_rate = 0.0;
  std::optional<double> r_feas;
  std::optional<long long> time_to_feasible;
  double feasible_indicator = 0.0;  // J_F at the final checkpoint
};

// Episodic return and cost: per-step signals averaged over agents, summed
// over time. per_step_* holds one n_agents-vector per step.
std::pair<double, double> episodic_aggregate(const std::vector<VectorXd>& per_step_rewards,
                                             const std::vector<VectorXd>& per_step_costs);

// Best mean return among checkpoints with mean cost <= budget; empty when no
// checkpoint qualifies.
std::optional<double> feasible_return(const std::vector<EvalCheckpoint>& checkpoints,
                                      double budget);

double peak_cost(const std::vector<EvalCheckpoint>& checkpoints);

// Fraction of episodes whose cost strictly exceeds the budget.
double violation_rate(const std::vector<double>& episode_costs, double budget);

// Earliest checkpoint step with mean cost <= budget.
std::optional<long long> time_to_feasible(const std::vector<EvalCheckpoint>& checkpoints,
                                          double budget);

// J_F = J_R * 1[J_C <= d]
double feasible_indicator(double j_r, double j_c, double budget);

MetricsReport make_report(const std::vector<EvalCheckpoint>& checkpoints, double budget);

}  // namespace co2po
