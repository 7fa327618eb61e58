#pragma once

#include <cstdint>
#include <vector>

#include "nestmc/plan.hpp"
#include "nestmc/sde.hpp"
#include "nestmc/switching.hpp"

namespace nestmc {

// Per-problem constants feeding the a-priori error bounds. Every entry is a
// documented user input; nothing is inferred from driver callables.
struct BudgetInputs {
  double K = 0.0;        // driver Lipschitz constant in the value/gradient slot
  double K_hat = 0.0;    // time-regularity constant of the solution
  double theta = 1.0;    // time-regularity exponent, in (0, 1]
  double lambda = 0.0;   // switching rate
  double shape_u = 1.0;  // switching shape; the gradient bounds require < 1
  double horizon_T = 0.0;
  double sup_f2 = 0.0;   // bound on sup_t E[f(t, X_t, .)^2]
  double g2 = 0.0;       // bound on E[g(X_T)^2]
  double K_tilde = 0.0;  // terminal-condition space-Lipschitz constant
  double K_bar = 0.0;    // solution-gradient space-Lipschitz constant
  double K_under = 0.0;  // driver space-Lipschitz constant
  double f_hat4 = 0.0;   // bound on sup_t E[f^4]^{1/2}
};

// Squared bias of the depth-p truncated value estimator:
// K^{2p} e^{lambda T} lambda^{-p} T^{2 theta} K_hat^2 T^p / (p Gamma(p)).
double bias_term(const BudgetInputs& in, int p);

// Level-i variance constant
// 4T/(lambda (i+1)!) sup_f2 + 2 g2 (1/(i Gamma(i)) for i > 0, else 1).
double kappa(const BudgetInputs& in, int i);

// v(i) = K^{2i} T^i e^{lambda T} lambda^{-i} kappa_i.
double variance_coeff(const BudgetInputs& in, int i);

// Mean-squared-error bound of the value estimator under a plan:
// prod_{i=1..p}(1 + 8/N_{i-1}) b(p)
//   + sum_{i=0..p-1} v(i)/N_i prod_{j=1..i}(1 + 8/N_{j-1}).
double total_bound(const BudgetInputs& in, const NestingPlan& plan);

// Bound coefficients tabulated for depths 1..max_depth (bias_terms[p-1] is
// the depth-p squared bias; kappas[i] and var_coeffs[i] are the level-i
// constants).
struct ErrorBudget {
  BudgetInputs inputs;
  std::vector<double> bias_terms;
  std::vector<double> kappas;
  std::vector<double> var_coeffs;

  double bound(const NestingPlan& plan) const;
};

ErrorBudget make_error_budget(const BudgetInputs& inputs, int max_depth);

// Diffusion-dependent moment constants entering the gradient-estimator
// bounds, with phi = |sigma^{-T} G|^2 for a standard Gaussian G. c_sigma is
// exact (squared Frobenius norm of sigma^{-1}); the other three are Monte
// Carlo estimates reported with standard errors.
struct SigmaConstants {
  double c_sigma = 0.0;      // E[phi]
  double c_tilde = 0.0;      // E[phi^2]^{1/2}
  double c_bar = 0.0;        // E[(2 |mu|^2 T + 2 |sigma G|^2) phi]
  double bar_c_sigma = 0.0;  // E[4 phi |sigma G|^2]
  double c_tilde_se = 0.0;
  double c_bar_se = 0.0;
  double bar_c_sigma_se = 0.0;
};

SigmaConstants sigma_constants(const ConstantSde& sde, double horizon_T,
                               std::int64_t n_mc,
                               std::uint64_t seed = 0x53474d41u);

// Mean-squared-error bound of the gradient scheme whose inner stages weight
// a control-variate payoff by the differentiation weight (scheme 1). The
// bound is derived for shape_u < 1 only; shape_u >= 1 is a domain error.
// Term breakdown: bias = truncation term; f_moment = fourth-moment driver
// sum; terminal_diff = terminal Lipschitz-difference sum; terminal_var =
// outer-level terminal second-moment term.
struct Scheme1Bound {
  double bias = 0.0;
  double f_moment = 0.0;
  double terminal_diff = 0.0;
  double terminal_var = 0.0;

  double total() const { return bias + f_moment + terminal_diff + terminal_var; }
};

Scheme1Bound semilinear_breakdown_scheme1(const BudgetInputs& in,
                                          const SigmaConstants& sc,
                                          const NestingPlan& plan);

double semilinear_bound_scheme1(const BudgetInputs& in,
                                const SigmaConstants& sc,
                                const NestingPlan& plan);

// Same for the antithetic-pair gradient scheme (scheme 2): the per-level
// fourth-moment sums of scheme 1 are replaced by pair-difference terms
// driven by the space-Lipschitz constants, leaving a single outer-level
// fourth-moment contribution.
struct Scheme2Bound {
  double bias = 0.0;
  double pair_diff = 0.0;
  double terminal_diff = 0.0;
  double f_moment = 0.0;
  double terminal_var = 0.0;

  double total() const {
    return bias + pair_diff + terminal_diff + f_moment + terminal_var;
  }
};

Scheme2Bound semilinear_breakdown_scheme2(const BudgetInputs& in,
                                          const SigmaConstants& sc,
                                          const NestingPlan& plan);

double semilinear_bound_scheme2(const BudgetInputs& in,
                                const SigmaConstants& sc,
                                const NestingPlan& plan);

// Cost accounting for the simulation tree. A node is simulated whenever its
// parent's date lies before the horizon, so expected node counts shrink with
// the probability that partial date sums stay below the horizon.
// survival_weighted = false charges every potential node (pessimistic).
struct CostModel {
  bool survival_weighted = true;
  double unit_cost = 1.0;
};

// P(k-th switching date < horizon) for k = 0..depth; entry 0 is 1. The k-th
// date is a sum of k gamma increments, again gamma with shape k * shape_u.
std::vector<double> reach_probabilities(const SwitchDensity& density,
                                        double horizon, int depth);

// Expected number of simulated nodes under a plan.
double expected_tree_cost(const NestingPlan& plan, const SwitchDensity& density,
                          double horizon, const CostModel& cost = {});

// Expected number of driver evaluations: one per node whose own date falls
// before the horizon; the antithetic scheme simulates 2^i trajectories per
// level-i pair multi-index.
double expected_driver_evaluations(const NestingPlan& plan,
                                   const SwitchDensity& density, double horizon,
                                   bool antithetic_pairs = false);

// Smallest-cost plan whose total_bound meets target_accuracy, via a damped
// fixed-point solve of the continuous optimality conditions, upward integer
// rounding, and a feasibility polish. Targets at or below the depth-p bias
// floor b(p) are infeasible and throw a domain error naming that floor.
NestingPlan allocate_particles(const BudgetInputs& in, int depth_p,
                               double target_accuracy,
                               const CostModel& cost = {});

}  // namespace nestmc
