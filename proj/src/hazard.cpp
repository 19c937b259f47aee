#include "co2po/hazard.hpp"

namespace co2po {

std::vector<int> lookahead_labels(const std::vector<int>& instant, int lookahead,
                                  const std::vector<int>& episode_end) {
  require(lookahead >= 0, "lookahead_labels: lookahead must be >= 0");
  require(instant.size() == episode_end.size(), "lookahead_labels: length mismatch");
  const int n = static_cast<int>(instant.size());
  std::vector<int> labels(n, 0);
  // scan backwards, resetting the carried window at episode ends
  int next_event = -1;  // most recent index with z = 1 in the current episode
  for (int t = n - 1; t >= 0; --t) {
    if (episode_end[t]) next_event = -1;
    if (instant[t]) next_event = t;
    labels[t] = (next_event >= 0 && next_event - t <= lookahead) ? 1 : 0;
  }
  return labels;
}

}  // namespace co2po
