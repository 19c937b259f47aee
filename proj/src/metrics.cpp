#include "co2po/metrics.hpp"

#include <algorithm>
#include <numeric>

namespace co2po {

EvalCheckpoint EvalCheckpoint::from_episodes(long long step, std::vector<double> returns,
                                             std::vector<double> costs, double budget) {
  require(!returns.empty() && returns.size() == costs.size(),
          "EvalCheckpoint: need matching non-empty episode lists");
  EvalCheckpoint cp;
  cp.step = step;
  cp.episode_returns = std::move(returns);
  cp.episode_costs = std::move(costs);
  const double n = static_cast<double>(cp.episode_returns.size());
  cp.mean_return =
      std::accumulate(cp.episode_returns.begin(), cp.episode_returns.end(), 0.0) / n;
  cp.mean_cost = std::accumulate(cp.episode_costs.begin(), cp.episode_costs.end(), 0.0) / n;
  for (double c : cp.episode_costs) {
    if (c > budget) ++cp.violations;
  }
  return cp;
}

std::pair<double, double> episodic_aggregate(const std::vector<VectorXd>& per_step_rewards,
                                             const std::vector<VectorXd>& per_step_costs) {
  require(per_step_rewards.size() == per_step_costs.size(),
          "episodic_aggregate: reward/cost length mismatch");
  require(!per_step_rewards.empty(), "episodic_aggregate: empty episode");
  const Eigen::Index n = per_step_rewards.front().size();
  double ret = 0.0, cost = 0.0;
  for (size_t t = 0; t < per_step_rewards.size(); ++t) {
    require(per_step_rewards[t].size() == n && per_step_costs[t].size() == n,
            "episodic_aggregate: ragged input");
    ret += per_step_rewards[t].mean();
    cost += per_step_costs[t].mean();
  }
  return {ret, cost};
}

std::optional<double> feasible_return(const std::vector<EvalCheckpoint>& checkpoints,
                                      double budget) {
  require(!checkpoints.empty(), "feasible_return: empty checkpoint list");
  std::optional<double> best;
  for (const auto& cp : checkpoints) {
    if (cp.mean_cost <= budget && (!best || cp.mean_return > *best)) {
      best = cp.mean_return;
    }
  }
  return best;
}

double peak_cost(const std::vector<EvalCheckpoint>& checkpoints) {
  require(!checkpoints.empty(), "peak_cost: empty checkpoint list");
  double peak = checkpoints.front().mean_cost;
  for (const auto& cp : checkpoints) peak = std::max(peak, cp.mean_cost);
  return peak;
}

double violation_rate(const std::vector<double>& episode_costs, double budget) {
  require(!episode_costs.empty(), "violation_rate: empty episode list");
  int over = 0;
  for (double c : episode_costs) {
    if (c > budget) ++over;
  }
  return static_cast<double>(over) / static_cast<double>(episode_costs.size());
}

std::optional<long long> time_to_feasible(const std::vector<EvalCheckpoint>& checkpoints,
                                          double budget) {
  require(!checkpoints.empty(), "time_to_feasible: empty checkpoint list");
  std::optional<long long> earliest;
  for (const auto& cp : checkpoints) {
    if (cp.mean_cost <= budget && (!earliest || cp.step < *earliest)) {
      earliest = cp.step;
    }
  }
  return earliest;
}

double feasible_indicator(double j_r, double j_c, double budget) {
  return j_c <= budget ? j_r : 0.0;
}

MetricsReport make_report(const std::vector<EvalCheckpoint>& checkpoints, double budget) {
  require(!checkpoints.empty(), "make_report: empty checkpoint list");
  MetricsReport report;
  report.r_final = checkpoints.back().mean_return;
  report.c_final = checkpoints.back().mean_cost;
  report.c_peak = peak_cost(checkpoints);
  std::vector<double> all_costs;
  for (const auto& cp : checkpoints) {
    all_costs.insert(all_costs.end(), cp.episode_costs.begin(), cp.episode_costs.end());
  }
  report.violation_rate = violation_rate(all_costs, budget);
  report.r_feas = feasible_return(checkpoints, budget);
  report.time_to_feasible = time_to_feasible(checkpoints, budget);
  report.feasible_indicator = feasible_indicator(report.r_final, report.c_final, budget);
  return report;
}

}  // namespace co2po
