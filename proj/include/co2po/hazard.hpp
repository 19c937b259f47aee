#pragma once

#include <vector>

#include "co2po/common.hpp"

namespace co2po {

struct HazardLabelConfig {
  double cost_threshold = 0.1;  // delta
  int lookahead = 8;            // H

  void validate() const {
    require(cost_threshold > 0.0, "HazardLabelConfig: cost_threshold must be > 0");
    require(lookahead >= 0, "HazardLabelConfig: lookahead must be >= 0");
  }
};

// 1 iff the cost strictly exceeds the threshold.
inline int instantaneous_hazard(double cost, double cost_threshold) {
  require(cost >= 0.0, "instantaneous_hazard: cost must be >= 0");
  return cost > cost_threshold ? 1 : 0;
}

// Window-max of z over [t, t+H], truncated at episode ends. episode_end[t] = 1
// marks t as the last step of its episode; the window never crosses it. A
// sequence that stops mid-episode truncates at its own end.
std::vector<int> lookahead_labels(const std::vector<int>& instant, int lookahead,
                                  const std::vector<int>& episode_end);

}  // namespace co2po
