#pragma once

#include <vector>

#include "nestmc/rng.hpp"

namespace nestmc {

// Switching-time law: gamma with rate lambda and shape u, restricted by the
// construction to lambda > 0 and u > 0. shape_u = 1 is the exponential law.
struct SwitchDensity {
  double lambda;
  double shape_u;

  explicit SwitchDensity(double lambda_rate, double shape = 1.0);
};

// Density lambda^u x^{u-1} e^{-lambda x} / Gamma(u), defined for x > 0 only;
// for shape_u < 1 the density is unbounded at the origin.
double pdf(const SwitchDensity& density, double x);

// Survival function 1 - gamma(u, lambda t)/Gamma(u); equals e^{-lambda t}
// for the exponential case. survival(0) = 1.
double survival(const SwitchDensity& density, double t);

// One increment tau > 0 distributed per pdf. Mean u/lambda.
double sample_increment(const SwitchDensity& density, RngStream& rng);

// Result of advancing a date sequence by one capped increment.
struct NextDate {
  double date;
  bool at_horizon;
};

// min(schedule_time + tau, horizon) with a flag for the cap. The recursion
// that owns the schedule must already have stopped at the horizon, so calling
// with schedule_time >= horizon is a logic error.
NextDate extend_schedule(double schedule_time, const SwitchDensity& density,
                         double horizon, RngStream& rng);

// Capped date sequence 0 = T_0 <= T_1 <= ... terminating with the first date
// equal to the horizon.
struct SwitchSchedule {
  std::vector<double> dates;
  double horizon = 0.0;
  // Sampled dates strictly below the horizon, not counting the fixed T_0 = 0;
  // for the exponential law this count is Poisson(lambda * horizon).
  int n_before_horizon = 0;
};

SwitchSchedule sample_schedule(const SwitchDensity& density, double horizon,
                               RngStream& rng);

}  // namespace nestmc
