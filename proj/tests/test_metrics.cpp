#include "co2po/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "doctest.h"

using namespace co2po;

namespace {

EvalCheckpoint cp_of(long long step, double r, double c) {
  EvalCheckpoint cp;
  cp.step = step;
  cp.mean_return = r;
  cp.mean_cost = c;
  cp.episode_returns = {r};
  cp.episode_costs = {c};
  return cp;
}

std::vector<EvalCheckpoint> random_checkpoints(RandomStream& rng) {
  const int count = 1 + rng.uniform_int(12);
  std::vector<EvalCheckpoint> cps;
  for (int i = 0; i < count; ++i) {
    cps.push_back(cp_of(16000LL * (i + 1), rng.uniform(-50.0, 150.0), rng.uniform(0.0, 60.0)));
  }
  return cps;
}

}  // namespace

TEST_CASE("episodic aggregate averages agents then sums steps") {
  // two agents, two steps: r = [[1,3],[2,4]] -> R = 2 + 3 = 5
  std::vector<VectorXd> rewards(2, VectorXd(2)), costs(2, VectorXd::Zero(2));
  rewards[0] << 1, 3;
  rewards[1] << 2, 4;
  const auto [ret, cost] = episodic_aggregate(rewards, costs);
  CHECK(ret == doctest::Approx(5.0).epsilon(1e-12));
  CHECK(cost == 0.0);

  // single agent degenerates to a plain sum
  std::vector<VectorXd> solo_r(3, VectorXd(1)), solo_c(3, VectorXd(1));
  for (int t = 0; t < 3; ++t) {
    solo_r[t](0) = t + 1.0;
    solo_c[t](0) = 0.5;
  }
  const auto [solo_ret, solo_cost] = episodic_aggregate(solo_r, solo_c);
  CHECK(solo_ret == doctest::Approx(6.0));
  CHECK(solo_cost == doctest::Approx(1.5));

  // ragged input is rejected
  std::vector<VectorXd> ragged_r = {VectorXd::Zero(2), VectorXd::Zero(3)};
  std::vector<VectorXd> ragged_c = {VectorXd::Zero(2), VectorXd::Zero(3)};
  CHECK_THROWS_AS(episodic_aggregate(ragged_r, ragged_c), std::invalid_argument);
}

TEST_CASE("episodic aggregate is linear in the rewards") {
  RandomStream rng(41);
  std::vector<VectorXd> rewards, costs;
  for (int t = 0; t < 7; ++t) {
    VectorXd r(3), c(3);
    for (int i = 0; i < 3; ++i) {
      r(i) = rng.uniform(-1.0, 1.0);
      c(i) = rng.uniform();
    }
    rewards.push_back(r);
    costs.push_back(c);
  }
  const double base = episodic_aggregate(rewards, costs).first;
  std::vector<VectorXd> scaled = rewards;
  for (auto& r : scaled) r *= 2.5;
  CHECK(episodic_aggregate(scaled, costs).first == doctest::Approx(2.5 * base).epsilon(1e-12));
}

TEST_CASE("feasible return takes the best checkpoint under the budget") {
  const std::vector<EvalCheckpoint> cps = {cp_of(1, 100, 30), cp_of(2, 80, 20), cp_of(3, 90, 24)};
  CHECK(feasible_return(cps, 25.0) == 90.0);

  const std::vector<EvalCheckpoint> all_ok = {cp_of(1, 10, 1), cp_of(2, 50, 2)};
  CHECK(feasible_return(all_ok, 25.0) == 50.0);

  const std::vector<EvalCheckpoint> none = {cp_of(1, 10, 30), cp_of(2, 50, 40)};
  CHECK_FALSE(feasible_return(none, 25.0).has_value());

  // the budget boundary is feasible
  const std::vector<EvalCheckpoint> edge = {cp_of(1, 7, 25)};
  CHECK(feasible_return(edge, 25.0) == 7.0);
}

TEST_CASE("peak cost, violation rate and time-to-feasible worked examples") {
  const std::vector<EvalCheckpoint> cps = {cp_of(1, 0, 2), cp_of(2, 0, 7), cp_of(3, 0, 5)};
  CHECK(peak_cost(cps) == 7.0);

  CHECK(violation_rate({10, 30, 26}, 25.0) == doctest::Approx(2.0 / 3.0));
  CHECK(violation_rate({10, 20}, 25.0) == 0.0);
  CHECK(violation_rate({25.0}, 25.0) == 0.0);  // strict exceedance

  const std::vector<EvalCheckpoint> track = {cp_of(16000, 0, 30), cp_of(32000, 0, 20)};
  CHECK(time_to_feasible(track, 25.0) == 32000);
  const std::vector<EvalCheckpoint> stuck = {cp_of(16000, 0, 30)};
  CHECK_FALSE(time_to_feasible(stuck, 25.0).has_value());
}

TEST_CASE("feasible indicator zeroes infeasible returns") {
  CHECK(feasible_indicator(5.0, 25.0, 25.0) == 5.0);  // boundary counts
  CHECK(feasible_indicator(5.0, 26.0, 25.0) == 0.0);
  CHECK(feasible_indicator(0.0, 1.0, 25.0) == 0.0);
}

TEST_CASE("metric formulas match enumeration oracles on random checkpoint sets") {
  RandomStream rng(4242);
  for (int trial = 0; trial < 200; ++trial) {
    const double budget = rng.uniform(5.0, 50.0);
    const std::vector<EvalCheckpoint> cps = random_checkpoints(rng);

    double best_feasible = -1e300;
    bool any_feasible = false;
    double peak = -1e300;
    long long earliest = -1;
    for (const auto& cp : cps) {
      peak = std::max(peak, cp.mean_cost);
      if (cp.mean_cost <= budget) {
        any_feasible = true;
        best_feasible = std::max(best_feasible, cp.mean_return);
        if (earliest < 0 || cp.step < earliest) earliest = cp.step;
      }
    }
    const auto feas = feasible_return(cps, budget);
    REQUIRE(feas.has_value() == any_feasible);
    if (any_feasible) REQUIRE(*feas == best_feasible);
    REQUIRE(peak_cost(cps) == peak);
    const auto ttf = time_to_feasible(cps, budget);
    REQUIRE(ttf.has_value() == any_feasible);
    if (any_feasible) REQUIRE(*ttf == earliest);

    // violation rate against a direct count
    std::vector<double> costs;
    for (int i = 0; i < 20; ++i) costs.push_back(rng.uniform(0.0, 60.0));
    int over = 0;
    for (double c : costs) {
      if (c > budget) ++over;
    }
    REQUIRE(violation_rate(costs, budget) == doctest::Approx(over / 20.0));
  }
}

TEST_CASE("feasible return properties under checkpoint removal and prefixing") {
  RandomStream rng(99);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<EvalCheckpoint> cps = random_checkpoints(rng);
    const double budget = 25.0;
    const auto full = feasible_return(cps, budget);
    if (full) {
      // removing the attaining checkpoint can only shrink or preserve
      auto attaining = std::find_if(cps.begin(), cps.end(), [&](const EvalCheckpoint& cp) {
        return cp.mean_cost <= budget && cp.mean_return == *full;
      });
      REQUIRE(attaining != cps.end());
      std::vector<EvalCheckpoint> without(cps);
      without.erase(without.begin() + (attaining - cps.begin()));
      if (!without.empty()) {
        const auto reduced = feasible_return(without, budget);
        if (reduced) REQUIRE(*reduced <= *full);
      }
    }
    // time-to-feasible never increases when later checkpoints arrive
    const auto early = time_to_feasible(cps, budget);
    std::vector<EvalCheckpoint> extended(cps);
    extended.push_back(cp_of(cps.back().step + 16000, 0.0, rng.uniform(0.0, 60.0)));
    const auto later = time_to_feasible(extended, budget);
    if (early) {
      REQUIRE(later.has_value());
      REQUIRE(*later <= *early);
    }
  }
}

TEST_CASE("checkpoint construction computes means and violations") {
  const EvalCheckpoint cp = EvalCheckpoint::from_episodes(100, {1.0, 3.0}, {10.0, 30.0}, 25.0);
  CHECK(cp.mean_return == 2.0);
  CHECK(cp.mean_cost == 20.0);
  CHECK(cp.violations == 1);
  CHECK_THROWS_AS(EvalCheckpoint::from_episodes(0, {}, {}, 25.0), std::invalid_argument);
}

TEST_CASE("report bundles the final-checkpoint indicator with history metrics") {
  const std::vector<EvalCheckpoint> cps = {
      EvalCheckpoint::from_episodes(16000, {10, 20}, {40, 50}, 25.0),
      EvalCheckpoint::from_episodes(32000, {30, 40}, {10, 20}, 25.0)};
  const MetricsReport report = make_report(cps, 25.0);
  CHECK(report.r_final == 35.0);
  CHECK(report.c_final == 15.0);
  CHECK(report.c_peak == 45.0);
  CHECK(report.violation_rate == doctest::Approx(0.5));
  CHECK(report.r_feas == 35.0);
  CHECK(report.time_to_feasible == 32000);
  CHECK(report.feasible_indicator == 35.0);
}
