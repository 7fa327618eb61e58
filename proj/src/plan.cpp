#include "nestmc/plan.hpp"

#include <stdexcept>
#include <utility>

namespace nestmc {

void NestingPlan::validate() const {
  if (depth_p < 1) {
    throw std::invalid_argument("NestingPlan: depth_p must be >= 1");
  }
  if (counts.size() != static_cast<std::size_t>(depth_p)) {
    throw std::invalid_argument("NestingPlan: counts length must equal depth_p");
  }
  for (const std::int64_t n : counts) {
    if (n < 1) {
      throw std::invalid_argument("NestingPlan: every count must be >= 1");
    }
  }
}

NestingPlan make_plan(std::vector<std::int64_t> counts) {
  NestingPlan plan;
  plan.depth_p = static_cast<int>(counts.size());
  plan.counts = std::move(counts);
  plan.validate();
  return plan;
}

}  // namespace nestmc
