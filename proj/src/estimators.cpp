#include "nestmc/estimators.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <stdexcept>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "nestmc/sde.hpp"

namespace nestmc {

double weight_phi_hat(double s, double t, double horizon,
                      const SwitchDensity& density, double g_value,
                      double f_value) {
  if (t >= horizon) return g_value / survival(density, horizon - s);
  return f_value / pdf(density, t - s);
}

double weight_phi_cv(double s, double t, double horizon,
                     const SwitchDensity& density, double g_child,
                     double g_parent, double f_value) {
  if (t >= horizon) return (g_child - g_parent) / survival(density, horizon - s);
  return f_value / pdf(density, t - s);
}

namespace {

struct Counters {
  std::int64_t evals = 0;
  std::int64_t terminal_evals = 0;
};

// Welford running statistics over the outer contributions, mergeable across
// chunks without changing the result's dependence on sample order.
struct Accum {
  std::int64_t n = 0;
  double mean = 0.0;
  double m2 = 0.0;
  Eigen::VectorXd gmean;
  Eigen::VectorXd gm2;
  double max_sq = 0.0;

  void init_gradient(int dim) {
    gmean = Eigen::VectorXd::Zero(dim);
    gm2 = Eigen::VectorXd::Zero(dim);
  }

  void add(double x) {
    ++n;
    const double d1 = x - mean;
    mean += d1 / static_cast<double>(n);
    m2 += d1 * (x - mean);
  }

  void add(double x, const Eigen::VectorXd& gx) {
    add(x);
    const double inv_n = 1.0 / static_cast<double>(n);
    for (Eigen::Index c = 0; c < gx.size(); ++c) {
      const double d1 = gx[c] - gmean[c];
      gmean[c] += d1 * inv_n;
      gm2[c] += d1 * (gx[c] - gmean[c]);
    }
  }

  void merge(const Accum& b) {
    if (b.n == 0) return;
    if (n == 0) {
      *this = b;
      return;
    }
    const double na = static_cast<double>(n);
    const double nb = static_cast<double>(b.n);
    const double nn = na + nb;
    const double delta = b.mean - mean;
    mean += delta * (nb / nn);
    m2 += b.m2 + delta * delta * (na * nb / nn);
    for (Eigen::Index c = 0; c < gmean.size(); ++c) {
      const double dg = b.gmean[c] - gmean[c];
      gmean[c] += dg * (nb / nn);
      gm2[c] += b.gm2[c] + dg * dg * (na * nb / nn);
    }
    n += b.n;
    max_sq = std::max(max_sq, b.max_sq);
  }
};

struct Ctx {
  const Problem& problem;
  const ConstantSde& sde;
  const SwitchDensity& density;
  const NestingPlan& plan;
  double horizon;
  int dim;
  Eigen::VectorXd x_start;
  // Diagnostics buffers indexed by the outer sample, or empty when off.
  std::vector<double>* diag_tau = nullptr;
  std::vector<double>* diag_sq = nullptr;
};

double call_driver(const Ctx& ctx, Counters& counters, double t,
                   const Eigen::VectorXd& x, double y,
                   const Eigen::VectorXd& z) {
  ++counters.evals;
  if (t >= ctx.horizon) ++counters.terminal_evals;
  return ctx.problem.driver.evaluate(t, x, y, z);
}

// ---------------------------------------------------------------------------
// Value estimator: each node holds one state; its estimate is the average of
// reweighted child samples, with the terminal condition as the continuation
// at the deepest level and at capped dates.

struct ValueWs {
  std::vector<PathNode> node;           // per depth 1..p
  std::vector<Eigen::VectorXd> gauss;   // per depth 1..p
  Eigen::VectorXd zero_z;
  Counters counters;

  ValueWs(int dim, int depth) : zero_z(Eigen::VectorXd::Zero(dim)) {
    node.resize(depth + 1);
    gauss.resize(depth + 1);
    for (int i = 1; i <= depth; ++i) {
      node[i] = make_node(0.0, Eigen::VectorXd::Zero(dim));
      gauss[i] = Eigen::VectorXd::Zero(dim);
    }
  }
};

double value_subtree(const Ctx& ctx, int depth, const PathNode& node,
                     const RngStream& stream, ValueWs& ws);

// One reweighted child sample of `parent`; the child sits at `child_depth`.
double value_child_contribution(const Ctx& ctx, int child_depth,
                                const PathNode& parent, RngStream cs,
                                ValueWs& ws, double* tau_out) {
  const double tau = sample_increment(ctx.density, cs);
  if (tau_out != nullptr) *tau_out = tau;
  const bool at_horizon = parent.time + tau >= ctx.horizon;
  const double dt = at_horizon ? ctx.horizon - parent.time : tau;
  Eigen::VectorXd& gauss = ws.gauss[child_depth];
  for (int c = 0; c < ctx.dim; ++c) gauss[c] = cs.normal();
  PathNode& child = ws.node[child_depth];
  step_into(ctx.sde, parent, dt, gauss, child);
  if (at_horizon) {
    child.time = ctx.horizon;
    return ctx.problem.terminal(child.state) /
           survival(ctx.density, ctx.horizon - parent.time);
  }
  const double child_u = value_subtree(ctx, child_depth, child, cs, ws);
  const double f =
      call_driver(ctx, ws.counters, child.time, child.state, child_u, ws.zero_z);
  return f / pdf(ctx.density, tau);
}

double value_subtree(const Ctx& ctx, int depth, const PathNode& node,
                     const RngStream& stream, ValueWs& ws) {
  if (depth == ctx.plan.depth_p) return ctx.problem.terminal(node.state);
  const std::int64_t n_children = ctx.plan.counts[depth];
  double acc = 0.0;
  for (std::int64_t m = 0; m < n_children; ++m) {
    acc += value_child_contribution(ctx, depth + 1, node, stream.child(
                                        static_cast<std::uint64_t>(m)),
                                    ws, nullptr);
  }
  return acc / static_cast<double>(n_children);
}

// ---------------------------------------------------------------------------
// Gradient scheme 1: every node estimates value and gradient from the same
// children. The value average reweights plain samples; the gradient average
// weights the control-variate samples with sigma^{-T} W_dt / dt. Drivers
// reading the value slot are fed the co-estimated child value.

struct S1Ws {
  std::vector<PathNode> node;
  std::vector<Eigen::VectorXd> gauss;
  std::vector<Eigen::VectorXd> weight;
  std::vector<Eigen::VectorXd> child_du;    // subtree estimate per depth
  std::vector<Eigen::VectorXd> du_contrib;  // one child's contribution
  Counters counters;

  S1Ws(int dim, int depth) {
    node.resize(depth + 1);
    gauss.resize(depth + 1);
    weight.resize(depth + 1);
    child_du.resize(depth + 1);
    du_contrib.resize(depth + 1);
    for (int i = 1; i <= depth; ++i) {
      node[i] = make_node(0.0, Eigen::VectorXd::Zero(dim));
      gauss[i] = Eigen::VectorXd::Zero(dim);
      weight[i] = Eigen::VectorXd::Zero(dim);
      child_du[i] = Eigen::VectorXd::Zero(dim);
      du_contrib[i] = Eigen::VectorXd::Zero(dim);
    }
  }
};

void s1_subtree(const Ctx& ctx, int depth, const PathNode& node,
                const RngStream& stream, S1Ws& ws, double& u_out,
                Eigen::VectorXd& du_out);

// One child sample of `parent`: writes the reweighted value contribution and
// the weighted gradient contribution (into du_c, a per-depth buffer).
double s1_child_contribution(const Ctx& ctx, int child_depth,
                             const PathNode& parent, double parent_g,
                             RngStream cs, S1Ws& ws, Eigen::VectorXd& du_c,
                             double* tau_out) {
  const double tau = sample_increment(ctx.density, cs);
  if (tau_out != nullptr) *tau_out = tau;
  const bool at_horizon = parent.time + tau >= ctx.horizon;
  const double dt = at_horizon ? ctx.horizon - parent.time : tau;
  Eigen::VectorXd& gauss = ws.gauss[child_depth];
  for (int c = 0; c < ctx.dim; ++c) gauss[c] = cs.normal();
  PathNode& child = ws.node[child_depth];
  step_into(ctx.sde, parent, dt, gauss, child);
  Eigen::VectorXd& w = ws.weight[child_depth];
  malliavin_weight_into(ctx.sde, gauss, dt, w);
  if (at_horizon) {
    child.time = ctx.horizon;
    const double g_child = ctx.problem.terminal(child.state);
    const double fbar = survival(ctx.density, ctx.horizon - parent.time);
    du_c = w * ((g_child - parent_g) / fbar);
    return g_child / fbar;
  }
  double child_u;
  Eigen::VectorXd& child_du = ws.child_du[child_depth];
  if (child_depth == ctx.plan.depth_p) {
    child_u = ctx.problem.terminal(child.state);
    child_du = ctx.problem.terminal_gradient(child.state);
  } else {
    s1_subtree(ctx, child_depth, child, cs, ws, child_u, child_du);
  }
  const double f =
      call_driver(ctx, ws.counters, child.time, child.state, child_u, child_du);
  const double phi = f / pdf(ctx.density, tau);
  du_c = w * phi;
  return phi;
}

void s1_subtree(const Ctx& ctx, int depth, const PathNode& node,
                const RngStream& stream, S1Ws& ws, double& u_out,
                Eigen::VectorXd& du_out) {
  const std::int64_t n_children = ctx.plan.counts[depth];
  const double parent_g = ctx.problem.terminal(node.state);
  double u_acc = 0.0;
  du_out.setZero();
  Eigen::VectorXd& contrib = ws.du_contrib[depth + 1];
  for (std::int64_t m = 0; m < n_children; ++m) {
    u_acc += s1_child_contribution(ctx, depth + 1, node, parent_g,
                                   stream.child(static_cast<std::uint64_t>(m)),
                                   ws, contrib, nullptr);
    du_out += contrib;
  }
  u_out = u_acc / static_cast<double>(n_children);
  du_out /= static_cast<double>(n_children);
}

// ---------------------------------------------------------------------------
// Gradient scheme 2: a depth-i node evaluates 2^i sign variants of one shared
// random tree (one switching increment and Gaussian per child index; a minus
// variant flips only its own increment's sign). The gradient weights half the
// pair difference of plain reweighted samples.

struct S2Level {
  Eigen::MatrixXd states;  // dim x 2^depth, child states at this depth
  Eigen::VectorXd u;       // subtree value per state
  Eigen::MatrixXd du;      // subtree gradient per state
  Eigen::VectorXd u_acc;   // accumulators for the parent loop over children
  Eigen::MatrixXd du_acc;
  Eigen::VectorXd gauss;
  Eigen::VectorXd weight;
  Eigen::VectorXd diff;  // sigma sqrt(dt) gauss
  Eigen::VectorXd tmp;   // column copied out for std::function calls
};

struct S2Ws {
  std::vector<S2Level> level;  // index = depth, 1..p
  Counters counters;

  S2Ws(int dim, int depth) {
    level.resize(depth + 1);
    std::int64_t n = 1;
    for (int i = 1; i <= depth; ++i) {
      n *= 2;
      S2Level& l = level[i];
      l.states = Eigen::MatrixXd::Zero(dim, n);
      l.u = Eigen::VectorXd::Zero(n);
      l.du = Eigen::MatrixXd::Zero(dim, n);
      l.u_acc = Eigen::VectorXd::Zero(n / 2);
      l.du_acc = Eigen::MatrixXd::Zero(dim, n / 2);
      l.gauss = Eigen::VectorXd::Zero(dim);
      l.weight = Eigen::VectorXd::Zero(dim);
      l.diff = Eigen::VectorXd::Zero(dim);
      l.tmp = Eigen::VectorXd::Zero(dim);
    }
  }
};

// Estimates (value, gradient) for the n variant nodes at `depth` whose states
// are the columns of `states`, writing into u_out / du_out.
void s2_subtree(const Ctx& ctx, int depth, double date,
                const Eigen::MatrixXd& states, const RngStream& stream,
                S2Ws& ws, Eigen::VectorXd& u_out, Eigen::MatrixXd& du_out) {
  const Eigen::Index n_states = states.cols();
  if (depth == ctx.plan.depth_p) {
    Eigen::VectorXd& tmp = ws.level[depth].tmp;
    for (Eigen::Index q = 0; q < n_states; ++q) {
      tmp = states.col(q);
      u_out[q] = ctx.problem.terminal(tmp);
      du_out.col(q) = ctx.problem.terminal_gradient(tmp);
    }
    return;
  }
  S2Level& cl = ws.level[depth + 1];
  u_out.setZero();
  du_out.setZero();
  const std::int64_t n_children = ctx.plan.counts[depth];
  for (std::int64_t m = 0; m < n_children; ++m) {
    RngStream cs = stream.child(static_cast<std::uint64_t>(m));
    const double tau = sample_increment(ctx.density, cs);
    const bool at_horizon = date + tau >= ctx.horizon;
    const double dt = at_horizon ? ctx.horizon - date : tau;
    const double cdate = at_horizon ? ctx.horizon : date + tau;
    for (int c = 0; c < ctx.dim; ++c) cl.gauss[c] = cs.normal();
    malliavin_weight_into(ctx.sde, cl.gauss, dt, cl.weight);
    const double sq = std::sqrt(dt);
    if (ctx.sde.diagonal) {
      cl.diff = (ctx.sde.sigma_diag.array() * cl.gauss.array()).matrix() * sq;
    } else {
      cl.diff.noalias() = ctx.sde.sigma * (cl.gauss * sq);
    }
    for (Eigen::Index q = 0; q < n_states; ++q) {
      cl.states.col(2 * q) = states.col(q) + ctx.sde.mu * dt + cl.diff;
      cl.states.col(2 * q + 1) = states.col(q) + ctx.sde.mu * dt - cl.diff;
    }
    if (at_horizon) {
      const double fbar = survival(ctx.density, ctx.horizon - date);
      for (Eigen::Index q = 0; q < n_states; ++q) {
        cl.tmp = cl.states.col(2 * q);
        const double gp = ctx.problem.terminal(cl.tmp);
        cl.tmp = cl.states.col(2 * q + 1);
        const double gm = ctx.problem.terminal(cl.tmp);
        u_out[q] += (gp + gm) / (2.0 * fbar);
        du_out.col(q) += cl.weight * ((gp - gm) / (2.0 * fbar));
      }
    } else {
      s2_subtree(ctx, depth + 1, cdate, cl.states, cs, ws, cl.u, cl.du);
      const double rho = pdf(ctx.density, tau);
      for (Eigen::Index q = 0; q < n_states; ++q) {
        cl.tmp = cl.states.col(2 * q);
        const double fp = call_driver(ctx, ws.counters, cdate, cl.tmp,
                                      cl.u[2 * q], cl.du.col(2 * q));
        cl.tmp = cl.states.col(2 * q + 1);
        const double fm = call_driver(ctx, ws.counters, cdate, cl.tmp,
                                      cl.u[2 * q + 1], cl.du.col(2 * q + 1));
        u_out[q] += (fp + fm) / (2.0 * rho);
        du_out.col(q) += cl.weight * ((fp - fm) / (2.0 * rho));
      }
    }
  }
  u_out /= static_cast<double>(n_children);
  du_out /= static_cast<double>(n_children);
}

// ---------------------------------------------------------------------------
// Outer loop: fixed chunking of the root samples with per-chunk statistics
// merged in chunk order, so the result is a deterministic function of (seed,
// stream) for any worker count.

struct OuterSetup {
  std::int64_t n_outer;
  int n_chunks;
  int n_workers;
};

OuterSetup outer_setup(const Ctx& ctx, const EstimateOptions& options) {
  OuterSetup s;
  s.n_outer = ctx.plan.counts[0];
  s.n_chunks = static_cast<int>(std::min<std::int64_t>(s.n_outer, 4096));
#ifdef _OPENMP
  s.n_workers = options.workers > 0 ? options.workers : omp_get_max_threads();
#else
  s.n_workers = 1;
#endif
  return s;
}

// Body: called per outer sample j with a per-thread workspace; returns the
// value contribution and fills grad (may be ignored) and tau.
template <class Ws, class Body>
void run_outer(const Ctx& ctx, const OuterSetup& setup, std::uint64_t seed,
               std::uint64_t stream, bool with_gradient, const Body& body,
               Accum& total, Counters& counters) {
  std::vector<Accum> chunk_stats(setup.n_chunks);
  std::vector<Counters> chunk_counters(setup.n_chunks);
  const RngStream root(seed, stream);
  const std::int64_t n = setup.n_outer;
  const int n_chunks = setup.n_chunks;
#ifdef _OPENMP
#pragma omp parallel num_threads(setup.n_workers)
#endif
  {
    Ws ws(ctx.dim, ctx.plan.depth_p);
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(with_gradient ? ctx.dim : 0);
#ifdef _OPENMP
#pragma omp for schedule(dynamic, 1)
#endif
    for (int c = 0; c < n_chunks; ++c) {
      Accum& acc = chunk_stats[c];
      if (with_gradient) acc.init_gradient(ctx.dim);
      const std::int64_t begin = n * c / n_chunks;
      const std::int64_t end = n * (c + 1) / n_chunks;
      for (std::int64_t j = begin; j < end; ++j) {
        double tau = 0.0;
        const double v =
            body(root.child(static_cast<std::uint64_t>(j)), ws, grad, tau);
        const double sq = with_gradient ? grad.squaredNorm() : v * v;
        if (ctx.diag_tau != nullptr) {
          (*ctx.diag_tau)[static_cast<std::size_t>(j)] = tau;
          (*ctx.diag_sq)[static_cast<std::size_t>(j)] = sq;
        }
        acc.max_sq = std::max(acc.max_sq, sq);
        if (with_gradient) {
          acc.add(v, grad);
        } else {
          acc.add(v);
        }
      }
      chunk_counters[c] = ws.counters;
      ws.counters = Counters{};
    }
  }
  if (with_gradient) total.init_gradient(ctx.dim);
  for (int c = 0; c < setup.n_chunks; ++c) {
    total.merge(chunk_stats[c]);
    counters.evals += chunk_counters[c].evals;
    counters.terminal_evals += chunk_counters[c].terminal_evals;
  }
}

EstimateDiagnostics finish_diagnostics(const std::vector<double>& tau,
                                       const std::vector<double>& sq,
                                       double max_sq) {
  EstimateDiagnostics diag;
  diag.max_abs_contribution = std::sqrt(max_sq);
  const std::size_t n = tau.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (tau[a] != tau[b]) return tau[a] < tau[b];
    return a < b;
  });
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t bucket = std::min<std::size_t>(9, r * 10 / n);
    diag.tau_decile_second_moment[bucket] += sq[order[r]];
    ++diag.tau_decile_count[bucket];
  }
  for (int b = 0; b < 10; ++b) {
    if (diag.tau_decile_count[b] > 0) {
      diag.tau_decile_second_moment[b] /=
          static_cast<double>(diag.tau_decile_count[b]);
    }
  }
  return diag;
}

Ctx make_ctx(const Problem& problem, const NestingPlan& plan,
             const SwitchDensity& density, const EstimateOptions& options) {
  plan.validate();
  if (options.x_start.size() != 0 && options.x_start.size() != problem.dim) {
    throw std::invalid_argument(
        "estimator start point does not match the problem dimension");
  }
  Ctx ctx{problem, problem.sde, density, plan, problem.horizon_T, problem.dim,
          options.x_start.size() != 0 ? options.x_start : problem.sde.x0};
  return ctx;
}

EstimateResult finalize(const Ctx& ctx, const Accum& total,
                        const Counters& counters, bool with_gradient,
                        double wall_time,
                        std::vector<std::string> warnings) {
  EstimateResult r;
  r.value = total.mean;
  r.n_outer = total.n;
  if (total.n > 1) {
    const double nn = static_cast<double>(total.n);
    r.std_error = std::sqrt(total.m2 / (nn - 1.0) / nn);
  }
  if (with_gradient) {
    r.gradient = total.gmean;
    r.gradient_std_error = Eigen::VectorXd::Zero(ctx.dim);
    if (total.n > 1) {
      const double nn = static_cast<double>(total.n);
      r.gradient_std_error =
          (total.gm2 / ((nn - 1.0) * nn)).cwiseSqrt();
    }
  }
  r.evaluations = counters.evals;
  r.terminal_driver_evals = counters.terminal_evals;
  r.wall_time = wall_time;
  r.warnings = std::move(warnings);
  return r;
}

class WallClock {
 public:
  WallClock() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                         start_)
        .count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

}  // namespace

EstimateResult estimate_value(const Problem& problem, const NestingPlan& plan,
                              const SwitchDensity& density, std::uint64_t seed,
                              const EstimateOptions& options) {
  if (problem.driver.uses_gradient) {
    throw std::invalid_argument(
        "value estimator cannot supply the gradient slot this driver reads");
  }
  Ctx ctx = make_ctx(problem, plan, density, options);
  std::vector<std::string> warnings;
  if (density.shape_u != 1.0) {
    warnings.push_back(
        "switching shape differs from the exponential law; the value "
        "estimator's error analysis does not cover it");
  }
  std::vector<double> diag_tau, diag_sq;
  OuterSetup setup = outer_setup(ctx, options);
  if (options.diagnostics) {
    diag_tau.resize(static_cast<std::size_t>(setup.n_outer));
    diag_sq.resize(static_cast<std::size_t>(setup.n_outer));
    ctx.diag_tau = &diag_tau;
    ctx.diag_sq = &diag_sq;
  }
  WallClock clock;
  Accum total;
  Counters counters;
  const PathNode root_node = make_node(0.0, ctx.x_start);
  run_outer<ValueWs>(
      ctx, setup, seed, options.stream, false,
      [&](RngStream cs, ValueWs& ws, Eigen::VectorXd&, double& tau) {
        return value_child_contribution(ctx, 1, root_node, cs, ws, &tau);
      },
      total, counters);
  EstimateResult r =
      finalize(ctx, total, counters, false, clock.seconds(), std::move(warnings));
  if (options.diagnostics) {
    r.diagnostics = finish_diagnostics(diag_tau, diag_sq, total.max_sq);
  }
  return r;
}

namespace {

std::vector<std::string> gradient_preconditions(const Problem& problem,
                                                const SwitchDensity& density) {
  if (!problem.terminal_gradient) {
    throw std::invalid_argument(
        "gradient estimation needs the problem's terminal gradient");
  }
  if (density.shape_u > 1.0) {
    throw std::invalid_argument(
        "switching shape above one vanishes at the origin, so the "
        "differentiation weights have unbounded variance");
  }
  std::vector<std::string> warnings;
  if (density.shape_u == 1.0) {
    warnings.push_back(
        "exponential switching is outside the finite-variance analysis of "
        "the gradient schemes; prefer shape_u < 1");
  }
  return warnings;
}

}  // namespace

EstimateResult estimate_gradient_scheme1(const Problem& problem,
                                         const NestingPlan& plan,
                                         const SwitchDensity& density,
                                         std::uint64_t seed,
                                         const EstimateOptions& options) {
  std::vector<std::string> warnings = gradient_preconditions(problem, density);
  Ctx ctx = make_ctx(problem, plan, density, options);
  std::vector<double> diag_tau, diag_sq;
  OuterSetup setup = outer_setup(ctx, options);
  if (options.diagnostics) {
    diag_tau.resize(static_cast<std::size_t>(setup.n_outer));
    diag_sq.resize(static_cast<std::size_t>(setup.n_outer));
    ctx.diag_tau = &diag_tau;
    ctx.diag_sq = &diag_sq;
  }
  WallClock clock;
  Accum total;
  Counters counters;
  const PathNode root_node = make_node(0.0, ctx.x_start);
  const double root_g = problem.terminal(ctx.x_start);
  run_outer<S1Ws>(
      ctx, setup, seed, options.stream, true,
      [&](RngStream cs, S1Ws& ws, Eigen::VectorXd& grad, double& tau) {
        return s1_child_contribution(ctx, 1, root_node, root_g, cs, ws, grad,
                                     &tau);
      },
      total, counters);
  EstimateResult r =
      finalize(ctx, total, counters, true, clock.seconds(), std::move(warnings));
  if (options.diagnostics) {
    r.diagnostics = finish_diagnostics(diag_tau, diag_sq, total.max_sq);
  }
  return r;
}

EstimateResult estimate_gradient_scheme2(const Problem& problem,
                                         const NestingPlan& plan,
                                         const SwitchDensity& density,
                                         std::uint64_t seed,
                                         const EstimateOptions& options) {
  std::vector<std::string> warnings = gradient_preconditions(problem, density);
  Ctx ctx = make_ctx(problem, plan, density, options);
  std::vector<double> diag_tau, diag_sq;
  OuterSetup setup = outer_setup(ctx, options);
  if (options.diagnostics) {
    diag_tau.resize(static_cast<std::size_t>(setup.n_outer));
    diag_sq.resize(static_cast<std::size_t>(setup.n_outer));
    ctx.diag_tau = &diag_tau;
    ctx.diag_sq = &diag_sq;
  }
  WallClock clock;
  Accum total;
  Counters counters;
  run_outer<S2Ws>(
      ctx, setup, seed, options.stream, true,
      [&](RngStream cs, S2Ws& ws, Eigen::VectorXd& grad, double& tau_out) {
        const double tau = sample_increment(ctx.density, cs);
        tau_out = tau;
        const bool at_horizon = tau >= ctx.horizon;
        const double dt = at_horizon ? ctx.horizon : tau;
        const double cdate = at_horizon ? ctx.horizon : tau;
        S2Level& cl = ws.level[1];
        for (int c = 0; c < ctx.dim; ++c) cl.gauss[c] = cs.normal();
        malliavin_weight_into(ctx.sde, cl.gauss, dt, cl.weight);
        const double sq = std::sqrt(dt);
        if (ctx.sde.diagonal) {
          cl.diff =
              (ctx.sde.sigma_diag.array() * cl.gauss.array()).matrix() * sq;
        } else {
          cl.diff.noalias() = ctx.sde.sigma * (cl.gauss * sq);
        }
        cl.states.col(0) = ctx.x_start + ctx.sde.mu * dt + cl.diff;
        cl.states.col(1) = ctx.x_start + ctx.sde.mu * dt - cl.diff;
        double vp, vm;
        if (at_horizon) {
          const double fbar = survival(ctx.density, ctx.horizon);
          cl.tmp = cl.states.col(0);
          vp = ctx.problem.terminal(cl.tmp) / fbar;
          cl.tmp = cl.states.col(1);
          vm = ctx.problem.terminal(cl.tmp) / fbar;
        } else {
          s2_subtree(ctx, 1, cdate, cl.states, cs, ws, cl.u, cl.du);
          const double rho = pdf(ctx.density, tau);
          cl.tmp = cl.states.col(0);
          vp = call_driver(ctx, ws.counters, cdate, cl.tmp, cl.u[0],
                           cl.du.col(0)) /
               rho;
          cl.tmp = cl.states.col(1);
          vm = call_driver(ctx, ws.counters, cdate, cl.tmp, cl.u[1],
                           cl.du.col(1)) /
               rho;
        }
        grad = cl.weight * (0.5 * (vp - vm));
        return 0.5 * (vp + vm);
      },
      total, counters);
  EstimateResult r =
      finalize(ctx, total, counters, true, clock.seconds(), std::move(warnings));
  if (options.diagnostics) {
    r.diagnostics = finish_diagnostics(diag_tau, diag_sq, total.max_sq);
  }
  return r;
}

EstimateResult run_estimator(const Problem& problem,
                             const EstimatorConfig& config,
                             std::uint64_t seed) {
  switch (config.kind) {
    case EstimatorKind::value:
      return estimate_value(problem, config.plan, config.density, seed,
                            config.options);
    case EstimatorKind::gradient_scheme1:
      return estimate_gradient_scheme1(problem, config.plan, config.density,
                                       seed, config.options);
    case EstimatorKind::gradient_scheme2:
      return estimate_gradient_scheme2(problem, config.plan, config.density,
                                       seed, config.options);
  }
  throw std::invalid_argument("unknown estimator kind");
}

ReplicateResult replicate(const Problem& problem, const EstimatorConfig& config,
                          int n_reps, std::uint64_t seed) {
  if (n_reps < 1) {
    throw std::invalid_argument("replicate needs at least one replication");
  }
  std::vector<EstimateResult> reps;
  reps.reserve(static_cast<std::size_t>(n_reps));
  for (int r = 0; r < n_reps; ++r) {
    EstimatorConfig rep = config;
    rep.options.stream = config.options.stream + static_cast<std::uint64_t>(r);
    reps.push_back(run_estimator(problem, rep, seed));
  }
  return aggregate_replicates(std::move(reps));
}

ReplicateResult aggregate_replicates(std::vector<EstimateResult> reps) {
  if (reps.empty()) {
    throw std::invalid_argument("aggregate_replicates needs at least one result");
  }
  const int n_reps = static_cast<int>(reps.size());
  ReplicateResult out;
  out.reps = std::move(reps);
  EstimateResult& agg = out.aggregate;
  const bool with_gradient = out.reps.front().gradient.size() > 0;
  double mean = 0.0;
  for (const EstimateResult& r : out.reps) mean += r.value;
  mean /= static_cast<double>(n_reps);
  agg.value = mean;
  if (n_reps > 1) {
    double ss = 0.0;
    for (const EstimateResult& r : out.reps) {
      ss += (r.value - mean) * (r.value - mean);
    }
    agg.std_error = std::sqrt(ss / (n_reps - 1.0) / n_reps);
  } else {
    agg.std_error = out.reps.front().std_error;
  }
  if (with_gradient) {
    const Eigen::Index dim = out.reps.front().gradient.size();
    agg.gradient = Eigen::VectorXd::Zero(dim);
    for (const EstimateResult& r : out.reps) agg.gradient += r.gradient;
    agg.gradient /= static_cast<double>(n_reps);
    agg.gradient_std_error = Eigen::VectorXd::Zero(dim);
    if (n_reps > 1) {
      for (const EstimateResult& r : out.reps) {
        agg.gradient_std_error.array() +=
            (r.gradient - agg.gradient).array().square();
      }
      agg.gradient_std_error =
          (agg.gradient_std_error / ((n_reps - 1.0) * n_reps)).cwiseSqrt();
    } else {
      agg.gradient_std_error = out.reps.front().gradient_std_error;
    }
  }
  for (const EstimateResult& r : out.reps) {
    agg.n_outer += r.n_outer;
    agg.evaluations += r.evaluations;
    agg.terminal_driver_evals += r.terminal_driver_evals;
    agg.wall_time += r.wall_time;
  }
  agg.warnings = out.reps.front().warnings;
  out.ci_low = agg.value - 1.959963984540054 * agg.std_error;
  out.ci_high = agg.value + 1.959963984540054 * agg.std_error;
  return out;
}

}  // namespace nestmc
