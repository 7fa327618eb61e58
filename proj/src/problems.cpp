#include "nestmc/problems.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <utility>

#include "nestmc/rng.hpp"

namespace nestmc {

namespace {

void check_dim(int d) {
  if (d < 1) {
    throw std::invalid_argument("problem dimension must be at least 1");
  }
}

void check_positive(double value, const char* name) {
  if (!(value > 0.0)) {
    throw std::invalid_argument(std::string(name) + " must be positive");
  }
}

double logistic(double v) { return 1.0 / (1.0 + std::exp(-v)); }

struct WelfordMean {
  std::int64_t n = 0;
  double mean = 0.0;
  double m2 = 0.0;

  void add(double y) {
    ++n;
    const double delta = y - mean;
    mean += delta / static_cast<double>(n);
    m2 += delta * (y - mean);
  }

  double std_error() const {
    if (n < 2) return 0.0;
    return std::sqrt(m2 / static_cast<double>(n - 1) /
                     static_cast<double>(n));
  }
};

}  // namespace

Problem make_toy_cosine(int d, double a, double r, double mu0, double sigma0,
                        double T) {
  check_dim(d);
  check_positive(sigma0, "sigma0");
  check_positive(T, "T");
  if (r < 0.0) throw std::invalid_argument("r must be nonnegative");

  const double dd = static_cast<double>(d);
  ConstantSde sde(Eigen::VectorXd::Constant(d, mu0 / dd), sigma0 / std::sqrt(dd),
                  Eigen::VectorXd::Zero(d));

  // The value slot is clamped to the solution's envelope [-e^{a(T-t)},
  // e^{a(T-t)}], which leaves the equation unchanged (the solution never
  // leaves that range) and makes r clamp(y)^2 globally 2 r e^{aT} Lipschitz.
  Driver driver;
  driver.evaluate = [a, r, mu0, sigma0, T](double t, const Eigen::VectorXd& x,
                                           double y, const Eigen::VectorXd&) {
    const double s = x.sum();
    const double scale = std::exp(a * (T - t));
    const double clamped = std::clamp(y, -scale, scale);
    return std::cos(s) * (a + 0.5 * sigma0 * sigma0) * scale +
           std::sin(s) * mu0 * scale -
           r * std::cos(s) * std::cos(s) * scale * scale + r * clamped * clamped;
  };
  driver.lipschitz_u = 2.0 * r * std::exp(a * T);
  // Gradient in x has identical coordinates -sin(s) A scale + cos(s) mu0 scale
  // + r sin(2s) scale^2 with A = a + sigma0^2/2, so the Euclidean bound is
  // sqrt(d) (sqrt(A^2 + mu0^2) e^{aT} + r e^{2aT}).
  const double a_coef = a + 0.5 * sigma0 * sigma0;
  driver.lipschitz_x =
      std::sqrt(dd) * (std::sqrt(a_coef * a_coef + mu0 * mu0) * std::exp(a * T) +
                       r * std::exp(2.0 * a * T));

  BudgetInputs budget;
  budget.K = driver.lipschitz_u;
  budget.K_hat = 2.0 * a * std::exp(a * T);
  budget.theta = 1.0;
  budget.horizon_T = T;
  budget.sup_f2 = std::pow((a_coef + mu0) * std::exp(a * T), 2);
  budget.g2 = 1.0;
  budget.K_tilde = std::sqrt(dd);
  budget.K_bar = dd * std::exp(a * T);
  budget.K_under = driver.lipschitz_x;
  budget.f_hat4 = budget.sup_f2;

  Problem p{"toy-cosine",
            d,
            std::move(sde),
            T,
            std::move(driver),
            [](const Eigen::VectorXd& x) { return std::cos(x.sum()); },
            [](const Eigen::VectorXd& x) -> Eigen::VectorXd {
              return Eigen::VectorXd::Constant(x.size(), -std::sin(x.sum()));
            },
            [a, T](double t, const Eigen::VectorXd& x) {
              return std::exp(a * (T - t)) * std::cos(x.sum());
            },
            std::nullopt,
            budget};
  p.reference_value = std::exp(a * T);
  return p;
}

Problem make_cva(int d, double beta, double sigma0, double T) {
  check_dim(d);
  check_positive(sigma0, "sigma0");
  check_positive(T, "T");
  if (beta < 0.0) throw std::invalid_argument("beta must be nonnegative");

  const double dd = static_cast<double>(d);
  ConstantSde sde(Eigen::VectorXd::Constant(d, -0.5 * sigma0 * sigma0), sigma0,
                  Eigen::VectorXd::Zero(d));

  Driver driver;
  driver.evaluate = [beta](double, const Eigen::VectorXd&, double y,
                           const Eigen::VectorXd&) {
    return beta * (std::max(y, 0.0) - y);
  };
  driver.lipschitz_u = beta;

  // Per-asset sign at the horizon: E[1 - 2 * 1{X_T > 0}] = erf(h / sqrt(2))
  // with h = sigma0 sqrt(T) / 2, since X_T is N(-sigma0^2 T / 2, sigma0^2 T).
  // The second moment of the sum is largest at t = T, where the mean term
  // dominates the shrinking per-asset variance.
  const double edge = std::erf(0.5 * sigma0 * std::sqrt(T) / std::sqrt(2.0));

  BudgetInputs budget;
  budget.K = beta;
  budget.theta = 1.0;
  budget.horizon_T = T;
  budget.g2 = dd * (1.0 - edge * edge) + dd * dd * edge * edge;
  // |f| <= beta |u| and |u| <= d, so this is a crude but valid envelope.
  budget.sup_f2 = beta * beta * dd * dd;

  Problem p{"cva",
            d,
            std::move(sde),
            T,
            std::move(driver),
            [](const Eigen::VectorXd& x) {
              double total = 0.0;
              for (Eigen::Index i = 0; i < x.size(); ++i) {
                total += x[i] > 0.0 ? -1.0 : 1.0;
              }
              return total;
            },
            nullptr,
            nullptr,
            std::nullopt,
            budget};
  if (beta == 0.0) {
    p.reference_value = dd * edge;
  } else if (d == 6 && beta == 0.03 && sigma0 == 0.2 && T == 1.0) {
    // Midpoint of the documented two-sided bounds [0.4880, 0.4883] for the
    // standard six-asset configuration.
    p.reference_value = 0.48815;
  }
  return p;
}

Problem make_bs_default(int d, const BsDefaultParams& params) {
  check_dim(d);
  check_positive(params.spot, "spot");
  check_positive(params.sigma0, "sigma0");
  check_positive(params.T, "T");
  if (!(params.v_h < params.v_l)) {
    throw std::invalid_argument("v_h must be below v_l");
  }
  if (!(params.gamma_l < params.gamma_h)) {
    throw std::invalid_argument("gamma_l must be below gamma_h");
  }

  ConstantSde sde(
      Eigen::VectorXd::Constant(d, params.mu0 - 0.5 * params.sigma0 * params.sigma0),
      params.sigma0,
      Eigen::VectorXd::Constant(d, std::log(params.spot)));

  const double loss = 1.0 - params.delta + params.rate_R;
  const double slope =
      (params.gamma_h - params.gamma_l) / (params.v_h - params.v_l);

  Driver driver;
  driver.evaluate = [loss, slope, gh = params.gamma_h, gl = params.gamma_l,
                     vh = params.v_h](double, const Eigen::VectorXd&, double y,
                                      const Eigen::VectorXd&) {
    const double intensity = std::min(gh, std::max(gl, slope * (y - vh) + gh));
    return -loss * intensity * y;
  };
  // d/dy [intensity(y) y] is gamma_h below v_h, gamma_l above v_l, and
  // slope y + intensity(y) in between, extremal at the region endpoints.
  driver.lipschitz_u =
      loss * std::max({params.gamma_h, params.gamma_l,
                       std::abs(slope * params.v_h + params.gamma_h),
                       std::abs(slope * params.v_l + params.gamma_l)});

  BudgetInputs budget;
  // Envelope constant |f| <= K |y| (the intensity never exceeds gamma_h);
  // intentionally smaller than driver.lipschitz_u, which bounds the
  // derivative through the sloped region.
  budget.K = loss * params.gamma_h;
  budget.K_hat = 200.0;
  budget.theta = 1.0;
  budget.horizon_T = params.T;
  budget.sup_f2 = budget.K * budget.K * 1.0e4;
  budget.g2 = 100.0;

  Problem p{"bs-default",
            d,
            std::move(sde),
            params.T,
            std::move(driver),
            [](const Eigen::VectorXd& x) { return std::exp(x.minCoeff()); },
            [](const Eigen::VectorXd& x) -> Eigen::VectorXd {
              Eigen::Index at = 0;
              const double low = x.minCoeff(&at);
              Eigen::VectorXd grad = Eigen::VectorXd::Zero(x.size());
              grad[at] = std::exp(low);
              return grad;
            },
            nullptr,
            std::nullopt,
            budget};
  const BsDefaultParams defaults;
  if (d == 100 && params.spot == defaults.spot && params.mu0 == defaults.mu0 &&
      params.sigma0 == defaults.sigma0 && params.delta == defaults.delta &&
      params.v_h == defaults.v_h && params.v_l == defaults.v_l &&
      params.gamma_h == defaults.gamma_h && params.gamma_l == defaults.gamma_l &&
      params.rate_R == defaults.rate_R && params.T == defaults.T) {
    p.reference_value = 58.42;
  }
  return p;
}

Problem make_burgers(int d, double T, double sigma_scale) {
  check_dim(d);
  check_positive(T, "T");

  const double dd = static_cast<double>(d);
  const double scale = sigma_scale > 0.0 ? sigma_scale : dd;
  ConstantSde sde(Eigen::VectorXd::Zero(d), scale, Eigen::VectorXd::Zero(d));

  const double shift = (2.0 + dd) / (2.0 * dd);

  Driver driver;
  driver.evaluate = [shift, dd](double, const Eigen::VectorXd&, double y,
                                const Eigen::VectorXd& z) {
    return (y - shift) * dd * z.sum();
  };
  driver.uses_gradient = true;
  // Bilinear driver: constants hold on the solution's range, y in [0, 1] and
  // sum z_i = u(1 - u) in [0, 1/4].
  driver.lipschitz_u = 0.25 * dd;
  driver.lipschitz_z = shift * dd * std::sqrt(dd);

  BudgetInputs budget;
  budget.K = driver.lipschitz_z;
  budget.K_hat = 0.25;  // |u(t, x) - u(T, x)| <= sup |du/dt| |T - t| = |T - t|/4
  budget.theta = 1.0;
  budget.horizon_T = T;
  budget.sup_f2 = std::pow(shift * dd / 4.0, 2);
  budget.f_hat4 = budget.sup_f2;
  budget.g2 = 1.0;
  budget.K_tilde = 0.25 / std::sqrt(dd);
  // Entries of the solution Hessian are u(1-u)(1-2u)/d^2, so the gradient's
  // Lipschitz constant is d * sup |u(1-u)(1-2u)| / d^2 = 1/(6 sqrt(3) d).
  budget.K_bar = 1.0 / (6.0 * std::sqrt(3.0) * dd);

  Problem p{"burgers",
            d,
            std::move(sde),
            T,
            std::move(driver),
            [T, dd](const Eigen::VectorXd& x) {
              return logistic(T + x.sum() / dd);
            },
            [T, dd](const Eigen::VectorXd& x) -> Eigen::VectorXd {
              const double u = logistic(T + x.sum() / dd);
              return Eigen::VectorXd::Constant(x.size(), u * (1.0 - u) / dd);
            },
            [dd](double t, const Eigen::VectorXd& x) {
              return logistic(t + x.sum() / dd);
            },
            std::nullopt,
            budget};
  p.reference_value = p.analytic_solution(0.0, p.sde.x0);
  return p;
}

Problem make_hjb(int d, double theta_coef, double T) {
  check_dim(d);
  check_positive(theta_coef, "theta_coef");
  check_positive(T, "T");

  ConstantSde sde(Eigen::VectorXd::Zero(d), std::sqrt(2.0),
                  Eigen::VectorXd::Zero(d));

  Driver driver;
  driver.evaluate = [theta_coef](double, const Eigen::VectorXd&, double,
                                 const Eigen::VectorXd& z) {
    return -theta_coef * std::min(z.squaredNorm(), 1.0);
  };
  driver.uses_gradient = true;
  driver.lipschitz_z = 2.0 * theta_coef;

  BudgetInputs budget;
  budget.K = driver.lipschitz_z;
  budget.theta = 1.0;
  budget.horizon_T = T;
  budget.sup_f2 = theta_coef * theta_coef;  // |f| <= theta_coef by truncation
  budget.f_hat4 = theta_coef * theta_coef;
  budget.K_tilde = 1.0;  // sup 2|x|/(1 + |x|^2) over the terminal gradient

  Problem p{"hjb",
            d,
            std::move(sde),
            T,
            std::move(driver),
            [](const Eigen::VectorXd& x) {
              return std::log(0.5 * (1.0 + x.squaredNorm()));
            },
            [](const Eigen::VectorXd& x) -> Eigen::VectorXd {
              return 2.0 * x / (1.0 + x.squaredNorm());
            },
            nullptr,
            std::nullopt,
            budget};
  return p;
}

ReferenceValue hjb_reference(int d, double theta_coef, double T,
                             std::int64_t n_mc, std::uint64_t seed) {
  check_dim(d);
  check_positive(theta_coef, "theta_coef");
  check_positive(T, "T");
  if (n_mc < 2) throw std::invalid_argument("n_mc must be at least 2");

  RngStream rng(seed);
  const double scale = std::sqrt(2.0 * T);
  WelfordMean acc;
  for (std::int64_t n = 0; n < n_mc; ++n) {
    double norm_sq = 0.0;
    for (int i = 0; i < d; ++i) {
      const double v = scale * rng.normal();
      norm_sq += v * v;
    }
    acc.add(std::exp(-theta_coef * std::log(0.5 * (1.0 + norm_sq))));
  }

  ReferenceValue out;
  out.value = -std::log(acc.mean) / theta_coef;
  out.std_error = acc.std_error() / (theta_coef * acc.mean);
  out.n_samples = n_mc;
  return out;
}

ReferenceValue linear_reference(const Problem& problem, std::int64_t n_mc,
                                std::uint64_t seed) {
  if (n_mc < 2) throw std::invalid_argument("n_mc must be at least 2");
  if (!problem.terminal) {
    throw std::invalid_argument("problem has no terminal condition");
  }
  check_positive(problem.horizon_T, "problem.horizon_T");

  RngStream rng(seed);
  const PathNode start = make_node(0.0, problem.sde.x0);
  PathNode node = make_node(0.0, problem.sde.x0);
  Eigen::VectorXd gauss(problem.dim);
  WelfordMean acc;
  for (std::int64_t n = 0; n < n_mc; ++n) {
    for (int i = 0; i < problem.dim; ++i) gauss[i] = rng.normal();
    step_into(problem.sde, start, problem.horizon_T, gauss, node);
    acc.add(problem.terminal(node.state));
  }

  ReferenceValue out;
  out.value = acc.mean;
  out.std_error = acc.std_error();
  out.n_samples = n_mc;
  return out;
}

}  // namespace nestmc
