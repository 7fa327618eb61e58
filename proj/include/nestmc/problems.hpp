#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>

#include "nestmc/error_budget.hpp"
#include "nestmc/sde.hpp"

namespace nestmc {

// Right-hand-side non-linearity f(t, x, y, z), where y is the value slot and
// z the gradient slot; a problem's driver may read either or both. The
// Lipschitz fields document the constants the implementation actually
// satisfies on its admissible argument ranges (property-tested); they are
// metadata, not used by the estimators at run time.
struct Driver {
  std::function<double(double t, const Eigen::VectorXd& x, double y,
                       const Eigen::VectorXd& z)>
      evaluate;
  double lipschitz_u = 0.0;  // in the value slot
  double lipschitz_z = 0.0;  // in the gradient slot
  double lipschitz_x = 0.0;  // in the state, 0 when the driver ignores x
  bool uses_gradient = false;
};

// One benchmark PDE: dynamics, horizon, driver, terminal condition, optional
// analytic solution and reference value at (t = 0, x = sde.x0), and the
// documented constants feeding the error-budget module (fields without a
// documented value stay zero and are reported as unavailable, never used
// silently). Treat instances as immutable after construction; all closures
// are pure, so a Problem is safe to share across threads.
struct Problem {
  std::string name;
  int dim = 0;
  ConstantSde sde;
  double horizon_T = 0.0;
  Driver driver;
  std::function<double(const Eigen::VectorXd&)> terminal;
  // Empty unless the terminal condition has a usable gradient; always
  // present when driver.uses_gradient.
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> terminal_gradient;
  // Empty unless the PDE has a closed-form solution u(t, x).
  std::function<double(double t, const Eigen::VectorXd& x)> analytic_solution;
  std::optional<double> reference_value;
  BudgetInputs budget_constants;
};

// d-dimensional heat-type equation with the classical solution
// e^{a (T - t)} cos(sum x_i): drift (mu0/d) 1_d, diffusion (sigma0/sqrt(d)) I,
// start 0, terminal cos(sum x_i), and a driver whose value slot is clamped to
// [-e^{a(T-t)}, e^{a(T-t)}] so its Lipschitz constant 2 r e^{aT} is global.
Problem make_toy_cosine(int d, double a, double r, double mu0, double sigma0,
                        double T);

// Counterparty-adjustment problem: driver beta (y^+ - y), terminal
// sum_i (1 - 2 * 1{e^{x_i} > 1}) with the strict inequality (x_i = 0 counts
// as not exceeding), horizon T. The state is the log of a unit-spot asset:
// drift -(sigma0^2/2) 1_d, diffusion sigma0 I, start 0 = log 1. Values are
// reported on the per-unit scale (0.48x for d = 6).
Problem make_cva(int d, double beta = 0.03, double sigma0 = 0.2,
                 double T = 1.0);

// Defaultable-claim parameters. The default intensity is piecewise linear in
// the claim value: gamma_h below v_h, gamma_l above v_l, linear between.
// rate_R is the riskless rate entering the loss factor (1 - delta + rate_R);
// the source only pins that factor's product with gamma_h, so rate_R is
// surfaced here.
struct BsDefaultParams {
  double spot = 100.0;
  double mu0 = 0.02;
  double sigma0 = 0.2;
  double delta = 2.0 / 3.0;
  double v_h = 50.0;
  double v_l = 70.0;
  double gamma_h = 0.2;
  double gamma_l = 0.02;
  double rate_R = 0.02;
  double T = 1.0;
};

// Best-of (minimum) claim on d independent lognormal assets with default
// risk, in log coordinates: drift (mu0 - sigma0^2/2) 1_d, diffusion
// sigma0 I, start log(spot) 1_d, terminal min_i e^{x_i}. The driver is
// -(1 - delta + rate_R) * intensity(y) * y; the budget constant
// K = (1 - delta + rate_R) gamma_h is the envelope |f| <= K |y|, while
// driver.lipschitz_u is the larger true derivative bound of intensity(y) * y.
Problem make_bs_default(int d, const BsDefaultParams& params = {});

// Fluid-momentum-type equation with the logistic solution
// e^{t + m}/(1 + e^{t + m}), m = (1/d) sum x_i: zero drift, terminal the
// solution at t = T, driver (y - (2 + d)/(2d)) * d * sum z_i. Diffusion is
// sigma_scale * I with sigma_scale <= 0 meaning the documented scaling d.
// The driver is bilinear, so its Lipschitz metadata holds on the solution
// range y in [0, 1], sum z_i in [0, 1/4].
Problem make_burgers(int d, double T, double sigma_scale = 0.0);

// Control problem with quadratic-cost non-linearity truncated to
// -theta_coef * min(|z|^2, 1): zero drift, diffusion sqrt(2) I, start 0,
// terminal log((1 + |x|^2)/2). The truncation makes 2 theta_coef a global
// gradient-slot Lipschitz constant without affecting the solution.
Problem make_hjb(int d, double theta_coef, double T);

// Plain Monte Carlo estimate with its standard error.
struct ReferenceValue {
  double value = 0.0;
  double std_error = 0.0;
  std::int64_t n_samples = 0;
};

// Reference for the control problem via the exponential transform
// -(1/theta) log E[exp(-theta g(x0 + sqrt(2) W_T))] at x0 = 0, with the
// delta-method standard error se(mean)/(theta * mean). Deterministic given
// the seed.
ReferenceValue hjb_reference(int d, double theta_coef, double T,
                             std::int64_t n_mc, std::uint64_t seed);

// Plain Monte Carlo of E[g(X_T)] for the problem's dynamics and terminal
// condition, ignoring the driver (the f = 0 linear reference).
ReferenceValue linear_reference(const Problem& problem, std::int64_t n_mc,
                                std::uint64_t seed);

}  // namespace nestmc
