#include "nestmc/error_budget.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "nestmc/rng.hpp"
#include "nestmc/special_functions.hpp"

namespace nestmc {

namespace {

void check_positive(double x, const char* what) {
  if (!(x > 0.0)) {
    throw std::domain_error(std::string(what) + " must be > 0");
  }
}

// infl[i] = prod_{j=1}^{i} (1 + 8/N_{j-1}), i = 0..p.
std::vector<double> inflators(const std::vector<std::int64_t>& counts) {
  std::vector<double> infl(counts.size() + 1, 1.0);
  for (std::size_t j = 0; j < counts.size(); ++j) {
    infl[j + 1] = infl[j] * (1.0 + 8.0 / static_cast<double>(counts[j]));
  }
  return infl;
}

double bound_from_coeffs(double bias, const std::vector<double>& var,
                         const std::vector<std::int64_t>& counts) {
  const auto infl = inflators(counts);
  double bound = infl.back() * bias;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    bound += var[i] / static_cast<double>(counts[i]) * infl[i];
  }
  return bound;
}

struct Welford {
  double mean = 0.0;
  double m2 = 0.0;
  std::int64_t n = 0;

  void add(double x) {
    ++n;
    const double delta = x - mean;
    mean += delta / static_cast<double>(n);
    m2 += delta * (x - mean);
  }
  double std_error() const {
    return std::sqrt(m2 / static_cast<double>(n - 1) /
                     static_cast<double>(n));
  }
};

}  // namespace

double bias_term(const BudgetInputs& in, int p) {
  if (p < 1) {
    throw std::invalid_argument("bias_term: depth p must be >= 1");
  }
  check_positive(in.lambda, "bias_term: lambda");
  check_positive(in.horizon_T, "bias_term: horizon_T");
  const double T = in.horizon_T;
  return std::pow(in.K, 2 * p) * std::exp(in.lambda * T) /
         std::pow(in.lambda, p) * std::pow(T, 2.0 * in.theta) * in.K_hat *
         in.K_hat * std::pow(T, p) / (p * std::tgamma(static_cast<double>(p)));
}

double kappa(const BudgetInputs& in, int i) {
  if (i < 0) {
    throw std::invalid_argument("kappa: level i must be >= 0");
  }
  check_positive(in.lambda, "kappa: lambda");
  check_positive(in.horizon_T, "kappa: horizon_T");
  const double T = in.horizon_T;
  const double factorial_next = std::tgamma(static_cast<double>(i) + 2.0);
  double value = 4.0 * T / (in.lambda * factorial_next) * in.sup_f2;
  if (i > 0) {
    value += 2.0 * in.g2 /
             (static_cast<double>(i) * std::tgamma(static_cast<double>(i)));
  } else {
    value += 2.0 * in.g2;
  }
  return value;
}

double variance_coeff(const BudgetInputs& in, int i) {
  const double T = in.horizon_T;
  return std::pow(in.K * in.K * T / in.lambda, i) * std::exp(in.lambda * T) *
         kappa(in, i);
}

double total_bound(const BudgetInputs& in, const NestingPlan& plan) {
  plan.validate();
  std::vector<double> var(plan.counts.size());
  for (std::size_t i = 0; i < var.size(); ++i) {
    var[i] = variance_coeff(in, static_cast<int>(i));
  }
  return bound_from_coeffs(bias_term(in, plan.depth_p), var, plan.counts);
}

double ErrorBudget::bound(const NestingPlan& plan) const {
  return total_bound(inputs, plan);
}

ErrorBudget make_error_budget(const BudgetInputs& inputs, int max_depth) {
  if (max_depth < 1) {
    throw std::invalid_argument("make_error_budget: max_depth must be >= 1");
  }
  ErrorBudget budget;
  budget.inputs = inputs;
  budget.bias_terms.reserve(max_depth);
  budget.kappas.reserve(max_depth);
  budget.var_coeffs.reserve(max_depth);
  for (int p = 1; p <= max_depth; ++p) {
    budget.bias_terms.push_back(bias_term(inputs, p));
  }
  for (int i = 0; i < max_depth; ++i) {
    budget.kappas.push_back(kappa(inputs, i));
    budget.var_coeffs.push_back(variance_coeff(inputs, i));
  }
  return budget;
}

SigmaConstants sigma_constants(const ConstantSde& sde, double horizon_T,
                               std::int64_t n_mc, std::uint64_t seed) {
  if (!(horizon_T >= 0.0)) {
    throw std::domain_error("sigma_constants: horizon_T must be >= 0");
  }
  if (n_mc < 2) {
    throw std::invalid_argument("sigma_constants: n_mc must be >= 2");
  }
  SigmaConstants out;
  out.c_sigma = sde.sigma_inv_t.squaredNorm();

  const double drift2 = 2.0 * sde.mu.squaredNorm() * horizon_T;
  RngStream rng(seed);
  Eigen::VectorXd gauss(sde.dim);
  Eigen::VectorXd weighted(sde.dim);
  Eigen::VectorXd diffused(sde.dim);
  Welford phi_sq;
  Welford drift_phi;
  Welford cross;
  for (std::int64_t k = 0; k < n_mc; ++k) {
    for (int j = 0; j < sde.dim; ++j) {
      gauss[j] = rng.normal();
    }
    if (sde.diagonal) {
      weighted = sde.sigma_inv_diag.cwiseProduct(gauss);
      diffused = sde.sigma_diag.cwiseProduct(gauss);
    } else {
      weighted.noalias() = sde.sigma_inv_t * gauss;
      diffused.noalias() = sde.sigma * gauss;
    }
    const double phi = weighted.squaredNorm();
    const double diff2 = diffused.squaredNorm();
    phi_sq.add(phi * phi);
    drift_phi.add((drift2 + 2.0 * diff2) * phi);
    cross.add(4.0 * phi * diff2);
  }
  out.c_tilde = std::sqrt(phi_sq.mean);
  out.c_tilde_se =
      out.c_tilde > 0.0 ? phi_sq.std_error() / (2.0 * out.c_tilde) : 0.0;
  out.c_bar = drift_phi.mean;
  out.c_bar_se = drift_phi.std_error();
  out.bar_c_sigma = cross.mean;
  out.bar_c_sigma_se = cross.std_error();
  return out;
}

namespace {

struct SemiCommon {
  double gamma_u = 0.0;
  double exp_lt = 0.0;
  // Gamma(u) minus the lower incomplete gamma at lambda T, written through
  // the regularized upper tail so the two share one implementation.
  double gamma_tail = 0.0;
  std::vector<double> infl;
};

SemiCommon semi_common(const BudgetInputs& in, const NestingPlan& plan) {
  plan.validate();
  check_positive(in.lambda, "semilinear bound: lambda");
  check_positive(in.horizon_T, "semilinear bound: horizon_T");
  if (!(in.shape_u > 0.0 && in.shape_u < 1.0)) {
    throw std::domain_error(
        "semilinear bound: only derived for shape_u in (0, 1)");
  }
  SemiCommon common;
  common.gamma_u = std::tgamma(in.shape_u);
  common.exp_lt = std::exp(in.lambda * in.horizon_T);
  common.gamma_tail =
      common.gamma_u * gamma_q(in.shape_u, in.lambda * in.horizon_T);
  common.infl = inflators(plan.counts);
  return common;
}

double truncation_term(const BudgetInputs& in, const SigmaConstants& sc,
                       const SemiCommon& common, int p) {
  const double u = in.shape_u;
  const double T = in.horizon_T;
  return common.infl[p] * std::pow(common.gamma_u, p) * common.exp_lt /
         std::pow(in.lambda, p) *
         std::pow(T, (1.0 - u) * p + 1.0 + 2.0 * in.theta) /
         (std::pow(1.0 - u, p - 1) * (2.0 - u)) * std::pow(sc.c_sigma, p - 1) *
         in.K_hat * in.K_hat * std::pow(in.K, 2 * p);
}

}  // namespace

Scheme1Bound semilinear_breakdown_scheme1(const BudgetInputs& in,
                                          const SigmaConstants& sc,
                                          const NestingPlan& plan) {
  const SemiCommon common = semi_common(in, plan);
  const int p = plan.depth_p;
  const double u = in.shape_u;
  const double T = in.horizon_T;

  Scheme1Bound out;
  out.bias = truncation_term(in, sc, common, p);

  double f_sum = 0.0;
  for (int i = 0; i < p; ++i) {
    f_sum += std::pow(in.K, 2 * i) / static_cast<double>(plan.counts[i]) *
             common.infl[i] * std::pow(common.gamma_u, i + 1) * common.exp_lt /
             std::pow(in.lambda, i + 1) *
             std::pow(T, (1.0 - u) * (i + 1) + 1.0) /
             (std::pow(1.0 - u, i) * (2.0 - u)) * std::pow(sc.c_tilde, i);
  }
  out.f_moment = 4.0 * in.f_hat4 * f_sum;

  double g_sum = 0.0;
  for (int i = 1; i < p; ++i) {
    g_sum += std::pow(in.K, 2 * i) / static_cast<double>(plan.counts[i]) *
             common.infl[i] * std::pow(common.gamma_u, i + 1) * common.exp_lt /
             std::pow(in.lambda, i) * std::pow(T, (1.0 - u) * i + 1.0) /
             (std::pow(1.0 - u, i - 1) * (2.0 - u)) *
             std::pow(sc.c_sigma, i - 1);
  }
  out.terminal_diff =
      2.0 * sc.c_bar * in.K_tilde * in.K_tilde / common.gamma_tail * g_sum;

  out.terminal_var = 2.0 / static_cast<double>(plan.counts[0]) *
                     common.gamma_u / common.gamma_tail * in.g2;
  return out;
}

double semilinear_bound_scheme1(const BudgetInputs& in,
                                const SigmaConstants& sc,
                                const NestingPlan& plan) {
  return semilinear_breakdown_scheme1(in, sc, plan).total();
}

Scheme2Bound semilinear_breakdown_scheme2(const BudgetInputs& in,
                                          const SigmaConstants& sc,
                                          const NestingPlan& plan) {
  const SemiCommon common = semi_common(in, plan);
  const int p = plan.depth_p;
  const double u = in.shape_u;
  const double T = in.horizon_T;

  Scheme2Bound out;
  out.bias = truncation_term(in, sc, common, p);

  // Antithetic pair differences of the driver are controlled by the shared
  // Gaussian step: |f(+) - f(-)| <= 2 (K_under + K K_bar) |sigma W|.
  const double pair_lip = in.K_under + in.K * in.K_bar;
  double pair_sum = 0.0;
  for (int i = 1; i < p; ++i) {
    pair_sum += std::pow(in.K, 2 * i) / static_cast<double>(plan.counts[i]) *
                common.infl[i] * std::pow(sc.c_sigma, i - 1) *
                std::pow(common.gamma_u, i + 1) * common.exp_lt /
                std::pow(in.lambda, i + 1) *
                std::pow(T, (1.0 - u) * i + 3.0 - u) /
                (std::pow(2.0 - u, 2) * std::pow(1.0 - u, i - 1));
  }
  out.pair_diff = pair_lip * pair_lip * sc.bar_c_sigma * pair_sum;

  double g_sum = 0.0;
  for (int i = 1; i < p; ++i) {
    g_sum += std::pow(in.K, 2 * i) /
             (2.0 * static_cast<double>(plan.counts[i])) * common.infl[i] *
             std::pow(sc.c_sigma, i - 1) * std::pow(common.gamma_u, i + 1) *
             common.exp_lt / (std::pow(in.lambda, i) * common.gamma_tail) *
             std::pow(T, (1.0 - u) * i + 1.0) /
             ((2.0 - u) * std::pow(1.0 - u, i - 1));
  }
  out.terminal_diff = in.K_tilde * in.K_tilde * sc.bar_c_sigma * g_sum;

  out.f_moment = 4.0 / static_cast<double>(plan.counts[0]) * common.gamma_u /
                 in.lambda * common.exp_lt * std::pow(T, 2.0 - u) / (2.0 - u) *
                 in.f_hat4;

  out.terminal_var = 2.0 / static_cast<double>(plan.counts[0]) *
                     common.gamma_u / common.gamma_tail * in.g2;
  return out;
}

double semilinear_bound_scheme2(const BudgetInputs& in,
                                const SigmaConstants& sc,
                                const NestingPlan& plan) {
  return semilinear_breakdown_scheme2(in, sc, plan).total();
}

std::vector<double> reach_probabilities(const SwitchDensity& density,
                                        double horizon, int depth) {
  if (depth < 0) {
    throw std::invalid_argument("reach_probabilities: depth must be >= 0");
  }
  check_positive(horizon, "reach_probabilities: horizon");
  std::vector<double> reach(depth + 1, 1.0);
  for (int k = 1; k <= depth; ++k) {
    reach[k] =
        gamma_p(k * density.shape_u, density.lambda * horizon);
  }
  return reach;
}

double expected_tree_cost(const NestingPlan& plan, const SwitchDensity& density,
                          double horizon, const CostModel& cost) {
  plan.validate();
  const auto reach = reach_probabilities(density, horizon, plan.depth_p);
  double total = 0.0;
  double branch = 1.0;
  for (int i = 1; i <= plan.depth_p; ++i) {
    branch *= static_cast<double>(plan.counts[i - 1]);
    total += branch * (cost.survival_weighted ? reach[i - 1] : 1.0);
  }
  return cost.unit_cost * total;
}

double expected_driver_evaluations(const NestingPlan& plan,
                                   const SwitchDensity& density, double horizon,
                                   bool antithetic_pairs) {
  plan.validate();
  const auto reach = reach_probabilities(density, horizon, plan.depth_p);
  double total = 0.0;
  double branch = 1.0;
  for (int i = 1; i <= plan.depth_p; ++i) {
    branch *= static_cast<double>(plan.counts[i - 1]) *
              (antithetic_pairs ? 2.0 : 1.0);
    total += branch * reach[i];
  }
  return total;
}

NestingPlan allocate_particles(const BudgetInputs& in, int depth_p,
                               double target_accuracy, const CostModel& cost) {
  if (depth_p < 1) {
    throw std::invalid_argument("allocate_particles: depth must be >= 1");
  }
  const double bias = bias_term(in, depth_p);
  if (!(target_accuracy > bias)) {
    std::ostringstream msg;
    msg << "allocate_particles: target accuracy " << target_accuracy
        << " is infeasible at depth " << depth_p
        << "; the minimum achievable bound b(p) is " << bias;
    throw std::domain_error(msg.str());
  }

  const SwitchDensity density(in.lambda, in.shape_u);
  const auto reach = reach_probabilities(density, in.horizon_T, depth_p);
  std::vector<double> var(depth_p);
  for (int i = 0; i < depth_p; ++i) {
    var[i] = variance_coeff(in, i);
  }
  const double budget = target_accuracy - bias;

  // Continuous relaxation: minimize the expected node count subject to
  // sum_i v(i)/N_i = budget, ignoring the finite-N inflators. At the
  // optimum each N_k is proportional to v(k) over the expected node count
  // strictly below level k, which the damped fixed point solves.
  std::vector<double> relaxed(depth_p);
  for (int i = 0; i < depth_p; ++i) {
    relaxed[i] = std::max(var[i] * depth_p / budget, 1.0);
  }
  std::vector<double> level_cost(depth_p);
  std::vector<double> deeper(depth_p);
  for (int iter = 0; iter < 500; ++iter) {
    double branch = 1.0;
    for (int i = 1; i <= depth_p; ++i) {
      branch *= relaxed[i - 1];
      level_cost[i - 1] =
          branch * (cost.survival_weighted ? reach[i - 1] : 1.0);
    }
    double suffix = 0.0;
    for (int k = depth_p - 1; k >= 0; --k) {
      suffix += level_cost[k];
      deeper[k] = suffix;
    }
    double total_deeper = 0.0;
    for (int k = 0; k < depth_p; ++k) {
      total_deeper += deeper[k];
    }
    const double scale = total_deeper / budget;
    double shift = 0.0;
    for (int k = 0; k < depth_p; ++k) {
      const double next = std::max(scale * var[k] / deeper[k], 1.0);
      shift = std::max(shift, std::abs(std::log(next / relaxed[k])));
      relaxed[k] = std::sqrt(relaxed[k] * next);
    }
    if (shift < 1e-12) break;
  }

  std::vector<std::int64_t> counts(depth_p);
  for (int k = 0; k < depth_p; ++k) {
    if (!(relaxed[k] < 9.0e18)) {
      throw std::overflow_error(
          "allocate_particles: required particle count is not representable");
    }
    counts[k] = std::max<std::int64_t>(
        1, static_cast<std::int64_t>(std::ceil(relaxed[k])));
  }

  const auto bound_of = [&](const std::vector<std::int64_t>& c) {
    return bound_from_coeffs(bias, var, c);
  };
  const auto cost_of = [&](const std::vector<std::int64_t>& c) {
    double total = 0.0;
    double branch = 1.0;
    for (int i = 1; i <= depth_p; ++i) {
      branch *= static_cast<double>(c[i - 1]);
      total += branch * (cost.survival_weighted ? reach[i - 1] : 1.0);
    }
    return total;
  };

  // The relaxation ignored the (1 + 8/N) inflators, so the integer plan can
  // still miss the target; grow the count with the best bound reduction per
  // unit cost until it holds.
  for (int guard = 0; guard < 1000000; ++guard) {
    const double current = bound_of(counts);
    if (current <= target_accuracy) break;
    int best = -1;
    double best_rate = -1.0;
    std::int64_t best_value = 0;
    for (int k = 0; k < depth_p; ++k) {
      std::vector<std::int64_t> bumped = counts;
      bumped[k] += std::max<std::int64_t>(1, counts[k] / 64);
      const double gain = current - bound_of(bumped);
      const double extra = cost_of(bumped) - cost_of(counts);
      if (gain > 0.0 && gain / extra > best_rate) {
        best_rate = gain / extra;
        best = k;
        best_value = bumped[k];
      }
    }
    if (best < 0) {
      throw std::logic_error("allocate_particles: cannot improve the bound");
    }
    counts[best] = best_value;
  }

  // Trim every coordinate to its smallest feasible value; rounding up and
  // the growth step above both overshoot.
  bool changed = true;
  while (changed) {
    changed = false;
    for (int k = 0; k < depth_p; ++k) {
      std::int64_t lo = 1;
      std::int64_t hi = counts[k];
      std::vector<std::int64_t> probe = counts;
      while (lo < hi) {
        const std::int64_t mid = lo + (hi - lo) / 2;
        probe[k] = mid;
        if (bound_of(probe) <= target_accuracy) {
          hi = mid;
        } else {
          lo = mid + 1;
        }
      }
      if (lo != counts[k]) {
        counts[k] = lo;
        changed = true;
      }
    }
  }

  NestingPlan plan = make_plan(counts);
  if (!(total_bound(in, plan) <= target_accuracy)) {
    throw std::logic_error(
        "allocate_particles: post-verification failed to meet the target");
  }
  return plan;
}

}  // namespace nestmc
