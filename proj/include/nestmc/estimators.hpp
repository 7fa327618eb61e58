#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "nestmc/plan.hpp"
#include "nestmc/problems.hpp"
#include "nestmc/switching.hpp"

namespace nestmc {

// Elementary reweighting of one child sample: at the horizon the terminal
// value divided by the survival probability of the remaining time, before it
// the driver value divided by the density of the sampled increment.
// `s` is the parent date, `t` the child date (capped at `horizon`).
double weight_phi_hat(double s, double t, double horizon,
                      const SwitchDensity& density, double g_value,
                      double f_value);

// Control-variate variant for gradient estimation: the horizon branch
// carries g(child) - g(parent), which a differentiation weight with zero
// mean turns into a variance reduction; the driver branch is unchanged.
double weight_phi_cv(double s, double t, double horizon,
                     const SwitchDensity& density, double g_child,
                     double g_parent, double f_value);

// Per-decile second moments of the outer contributions, bucketed by the rank
// of the root increment tau (bucket 0 holds the smallest draws). For value
// runs the contribution is the scalar reweighted sample; for gradient runs
// its Euclidean norm.
struct EstimateDiagnostics {
  double max_abs_contribution = 0.0;
  std::array<double, 10> tau_decile_second_moment{};
  std::array<std::int64_t, 10> tau_decile_count{};
};

struct EstimateResult {
  double value = 0.0;
  double std_error = 0.0;
  // Filled by the gradient schemes (size 0 otherwise), with per-coordinate
  // standard errors of the outer average.
  Eigen::VectorXd gradient;
  Eigen::VectorXd gradient_std_error;
  std::int64_t n_outer = 0;
  double wall_time = 0.0;
  std::int64_t evaluations = 0;  // driver calls
  // Canary for the stopping rule: driver calls at nodes dated exactly at the
  // horizon. The recursion never produces them, so this stays 0.
  std::int64_t terminal_driver_evals = 0;
  std::vector<std::string> warnings;
  std::optional<EstimateDiagnostics> diagnostics;
};

struct EstimateOptions {
  // Empty means start at problem.sde.x0; estimates are always at t = 0.
  Eigen::VectorXd x_start;
  int workers = 0;  // 0 = all available; results are identical either way
  std::uint64_t stream = 0;  // sub-stream of the seed (used by replicate)
  bool diagnostics = false;
};

// Value estimator for drivers reading the value slot only: the outer average
// of reweighted child samples, recursing with plan.counts[i] children per
// node until depth_p, where the continuation is the terminal condition.
// Analyzed for the exponential law; other shapes run but append a warning.
// Throws std::invalid_argument for invalid plans, gradient-reading drivers,
// or a mismatched x_start.
EstimateResult estimate_value(const Problem& problem, const NestingPlan& plan,
                              const SwitchDensity& density, std::uint64_t seed,
                              const EstimateOptions& options = {});

// Differentiation-weight gradient scheme: every node estimates (value,
// gradient) from the same children; the gradient average weights the
// control-variate reweighted sample with sigma^{-T} W / dt. Root gradient
// uses the parent state x as the control variate. Requires the terminal
// gradient. Analyzed for shape_u < 1; shape_u = 1 runs with a warning,
// larger shapes throw (the density vanishes at 0, weights diverge).
EstimateResult estimate_gradient_scheme1(const Problem& problem,
                                         const NestingPlan& plan,
                                         const SwitchDensity& density,
                                         std::uint64_t seed,
                                         const EstimateOptions& options = {});

// Antithetic gradient scheme: each count is a number of +/- pairs sharing
// the increment and date; the gradient weights half the pair difference of
// plain reweighted samples, so no control variate is needed. A pair's two
// subtrees reuse the same switching increments and Gaussian draws, so a
// depth-i node evaluates 2^i state variants of one random tree.
EstimateResult estimate_gradient_scheme2(const Problem& problem,
                                         const NestingPlan& plan,
                                         const SwitchDensity& density,
                                         std::uint64_t seed,
                                         const EstimateOptions& options = {});

enum class EstimatorKind { value, gradient_scheme1, gradient_scheme2 };

struct EstimatorConfig {
  EstimatorKind kind = EstimatorKind::value;
  NestingPlan plan;
  SwitchDensity density{1.0};
  EstimateOptions options;
};

EstimateResult run_estimator(const Problem& problem,
                             const EstimatorConfig& config,
                             std::uint64_t seed);

// Independent macro-replications r = 0..n_reps-1, deterministic in (config,
// seed) and worker count: replication r runs on sub-stream options.stream+r.
// aggregate.value is the mean of the replication values; its std_error is
// the spread across replications for n_reps >= 2 (the single run's internal
// error otherwise), and [ci_low, ci_high] the 95 percent normal interval.
struct ReplicateResult {
  EstimateResult aggregate;
  std::vector<EstimateResult> reps;
  double ci_low = 0.0;
  double ci_high = 0.0;
};

ReplicateResult replicate(const Problem& problem, const EstimatorConfig& config,
                          int n_reps, std::uint64_t seed);

// Aggregation step of replicate() for callers that produce the replication
// results themselves (the experiment runner flushes each one to disk before
// aggregating). `reps` must be non-empty and come from identical configs.
ReplicateResult aggregate_replicates(std::vector<EstimateResult> reps);

}  // namespace nestmc
