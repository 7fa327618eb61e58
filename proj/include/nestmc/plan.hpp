#pragma once

#include <cstdint>
#include <vector>

namespace nestmc {

// Particle counts for one nested simulation: counts[i] samples (antithetic
// scheme: sample pairs) are drawn at recursion level i. depth_p is the number
// of switching levels and must equal counts.size().
struct NestingPlan {
  int depth_p = 0;
  std::vector<std::int64_t> counts;

  void validate() const;  // throws std::invalid_argument when inconsistent
};

// Plan with depth derived from the count list.
NestingPlan make_plan(std::vector<std::int64_t> counts);

}  // namespace nestmc
