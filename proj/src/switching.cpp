#include "nestmc/switching.hpp"

#include <cmath>
#include <stdexcept>

#include "nestmc/special_functions.hpp"

namespace nestmc {

SwitchDensity::SwitchDensity(double lambda_rate, double shape)
    : lambda(lambda_rate), shape_u(shape) {
  if (!(lambda > 0.0)) {
    throw std::domain_error("SwitchDensity: lambda must be > 0");
  }
  if (!(shape_u > 0.0)) {
    throw std::domain_error("SwitchDensity: shape_u must be > 0");
  }
}

double pdf(const SwitchDensity& density, double x) {
  if (!(x > 0.0)) {
    throw std::domain_error("pdf: x must be > 0");
  }
  const double u = density.shape_u;
  const double lam = density.lambda;
  if (u == 1.0) return lam * std::exp(-lam * x);
  return std::exp(u * std::log(lam) + (u - 1.0) * std::log(x) - lam * x -
                  log_gamma(u));
}

double survival(const SwitchDensity& density, double t) {
  if (!(t >= 0.0)) {
    throw std::domain_error("survival: t must be >= 0");
  }
  if (t == 0.0) return 1.0;
  if (density.shape_u == 1.0) return std::exp(-density.lambda * t);
  return gamma_q(density.shape_u, density.lambda * t);
}

double sample_increment(const SwitchDensity& density, RngStream& rng) {
  if (density.shape_u == 1.0) return rng.exponential(density.lambda);
  return rng.gamma(density.shape_u, density.lambda);
}

NextDate extend_schedule(double schedule_time, const SwitchDensity& density,
                         double horizon, RngStream& rng) {
  if (!(schedule_time < horizon)) {
    throw std::logic_error(
        "extend_schedule: schedule already at or past the horizon");
  }
  const double proposed = schedule_time + sample_increment(density, rng);
  if (proposed >= horizon) return {horizon, true};
  return {proposed, false};
}

SwitchSchedule sample_schedule(const SwitchDensity& density, double horizon,
                               RngStream& rng) {
  if (!(horizon > 0.0)) {
    throw std::domain_error("sample_schedule: horizon must be > 0");
  }
  SwitchSchedule schedule;
  schedule.horizon = horizon;
  schedule.dates.push_back(0.0);
  double t = 0.0;
  for (;;) {
    const NextDate next = extend_schedule(t, density, horizon, rng);
    schedule.dates.push_back(next.date);
    if (next.at_horizon) break;
    ++schedule.n_before_horizon;
    t = next.date;
  }
  return schedule;
}

}  // namespace nestmc
