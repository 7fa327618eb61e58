#pragma once

#include <Eigen/Dense>
#include <utility>

namespace nestmc {

// Constant-coefficient diffusion dX = mu dt + sigma dW with exact Gaussian
// stepping. sigma must be invertible; its transpose-inverse is factorized
// once here so that per-sample differentiation weights cost one product.
// Immutable after construction and safe to share across threads.
struct ConstantSde {
  int dim = 0;
  Eigen::VectorXd mu;
  Eigen::MatrixXd sigma;
  Eigen::MatrixXd sigma_inv_t;
  Eigen::VectorXd x0;

  // Fast path when sigma has no off-diagonal entries (every benchmark case):
  // steps and weights are O(d) instead of O(d^2).
  bool diagonal = false;
  Eigen::VectorXd sigma_diag;
  Eigen::VectorXd sigma_inv_diag;

  ConstantSde(Eigen::VectorXd drift, Eigen::MatrixXd diffusion,
              Eigen::VectorXd start);
  // Isotropic convenience: diffusion = scale * identity.
  ConstantSde(Eigen::VectorXd drift, double diffusion_scale,
              Eigen::VectorXd start);
};

// State of one path at one switching date. Keeps only the Gaussian increment
// and length of the last step (enough for the differentiation weight), never
// the path history, so memory per recursion branch stays O(d * depth).
struct PathNode {
  double time = 0.0;
  Eigen::VectorXd state;
  Eigen::VectorXd gauss_increment;
  double dt_last = 0.0;
};

// Node with no step taken yet (dt_last = 0) at the given date and state.
PathNode make_node(double time, Eigen::VectorXd state);

// Exact transition over dt: state' = state + mu dt + sigma sqrt(dt) gauss.
PathNode step(const ConstantSde& sde, const PathNode& from, double dt,
              const Eigen::VectorXd& gauss);

// Allocation-free variant for hot loops; `into` may be reused across calls.
void step_into(const ConstantSde& sde, const PathNode& from, double dt,
               const Eigen::VectorXd& gauss, PathNode& into);

// The +gauss / -gauss pair from the same parent; both children share time
// and dt, so pairwise differences cancel every odd noise term.
std::pair<PathNode, PathNode> antithetic_step(const ConstantSde& sde,
                                              const PathNode& from, double dt,
                                              const Eigen::VectorXd& gauss);

void antithetic_step_into(const ConstantSde& sde, const PathNode& from,
                          double dt, const Eigen::VectorXd& gauss,
                          PathNode& plus, PathNode& minus);

// Differentiation weight sigma^{-T} W_dt / dt = sigma^{-T} gauss / sqrt(dt):
// E[weight * g(X_{t+dt})] equals the state-gradient of E[g(X_{t+dt})].
Eigen::VectorXd malliavin_weight(const ConstantSde& sde,
                                 const Eigen::VectorXd& gauss, double dt);

void malliavin_weight_into(const ConstantSde& sde,
                           const Eigen::VectorXd& gauss, double dt,
                           Eigen::VectorXd& into);

// One-dimensional log-price coordinates for a lognormal asset: drift
// mu0 - sigma0^2/2, diffusion sigma0, start log(spot). Exponentiating the
// simulated state recovers the asset price.
ConstantSde log_asset_transform(double spot, double mu0, double sigma0);

}  // namespace nestmc
