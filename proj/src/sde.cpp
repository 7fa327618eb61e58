#include "nestmc/sde.hpp"

#include <cmath>
#include <stdexcept>

namespace nestmc {

namespace {

void finish_construction(ConstantSde& sde) {
  sde.dim = static_cast<int>(sde.x0.size());
  if (sde.dim <= 0) {
    throw std::domain_error("ConstantSde: dimension must be positive");
  }
  if (sde.mu.size() != sde.dim ||
      sde.sigma.rows() != sde.dim || sde.sigma.cols() != sde.dim) {
    throw std::domain_error("ConstantSde: mu/sigma/x0 dimensions disagree");
  }
  if (!sde.mu.allFinite() || !sde.sigma.allFinite() || !sde.x0.allFinite()) {
    throw std::domain_error("ConstantSde: coefficients must be finite");
  }

  sde.diagonal = sde.sigma.isDiagonal(0.0);
  if (sde.diagonal) {
    sde.sigma_diag = sde.sigma.diagonal();
    const double amax = sde.sigma_diag.cwiseAbs().maxCoeff();
    const double amin = sde.sigma_diag.cwiseAbs().minCoeff();
    if (!(amin > 0.0) || amax / amin > 1e12) {
      throw std::domain_error("ConstantSde: sigma singular or near-singular");
    }
    sde.sigma_inv_diag = sde.sigma_diag.cwiseInverse();
    sde.sigma_inv_t =
        Eigen::MatrixXd(sde.sigma_inv_diag.asDiagonal());
    return;
  }

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(
      sde.sigma, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  const double smin = sv(sde.dim - 1);
  if (!(smin > 0.0) || sv(0) / smin > 1e12) {
    throw std::domain_error("ConstantSde: sigma singular or near-singular");
  }
  // sigma^{-1} = V S^{-1} U^T, so sigma^{-T} = U S^{-1} V^T.
  sde.sigma_inv_t = svd.matrixU() * sv.cwiseInverse().asDiagonal() *
                    svd.matrixV().transpose();
}

}  // namespace

ConstantSde::ConstantSde(Eigen::VectorXd drift, Eigen::MatrixXd diffusion,
                         Eigen::VectorXd start)
    : mu(std::move(drift)), sigma(std::move(diffusion)), x0(std::move(start)) {
  finish_construction(*this);
}

ConstantSde::ConstantSde(Eigen::VectorXd drift, double diffusion_scale,
                         Eigen::VectorXd start)
    : mu(std::move(drift)), x0(std::move(start)) {
  sigma = diffusion_scale * Eigen::MatrixXd::Identity(x0.size(), x0.size());
  finish_construction(*this);
}

PathNode make_node(double time, Eigen::VectorXd state) {
  PathNode node;
  node.time = time;
  node.state = std::move(state);
  node.gauss_increment = Eigen::VectorXd::Zero(node.state.size());
  node.dt_last = 0.0;
  return node;
}

void step_into(const ConstantSde& sde, const PathNode& from, double dt,
               const Eigen::VectorXd& gauss, PathNode& into) {
  const double root_dt = std::sqrt(dt);
  into.time = from.time + dt;
  into.dt_last = dt;
  into.gauss_increment = gauss;
  if (sde.diagonal) {
    into.state = from.state + dt * sde.mu +
                 root_dt * sde.sigma_diag.cwiseProduct(gauss);
  } else {
    into.state = from.state + dt * sde.mu + root_dt * (sde.sigma * gauss);
  }
}

PathNode step(const ConstantSde& sde, const PathNode& from, double dt,
              const Eigen::VectorXd& gauss) {
  if (!(dt > 0.0)) throw std::domain_error("step: dt must be > 0");
  PathNode into;
  step_into(sde, from, dt, gauss, into);
  return into;
}

void antithetic_step_into(const ConstantSde& sde, const PathNode& from,
                          double dt, const Eigen::VectorXd& gauss,
                          PathNode& plus, PathNode& minus) {
  step_into(sde, from, dt, gauss, plus);
  minus.time = plus.time;
  minus.dt_last = dt;
  minus.gauss_increment = -gauss;
  if (sde.diagonal) {
    minus.state = from.state + dt * sde.mu -
                  std::sqrt(dt) * sde.sigma_diag.cwiseProduct(gauss);
  } else {
    minus.state = from.state + dt * sde.mu - std::sqrt(dt) * (sde.sigma * gauss);
  }
}

std::pair<PathNode, PathNode> antithetic_step(const ConstantSde& sde,
                                              const PathNode& from, double dt,
                                              const Eigen::VectorXd& gauss) {
  if (!(dt > 0.0)) throw std::domain_error("antithetic_step: dt must be > 0");
  std::pair<PathNode, PathNode> out;
  antithetic_step_into(sde, from, dt, gauss, out.first, out.second);
  return out;
}

void malliavin_weight_into(const ConstantSde& sde,
                           const Eigen::VectorXd& gauss, double dt,
                           Eigen::VectorXd& into) {
  const double inv_root_dt = 1.0 / std::sqrt(dt);
  if (sde.diagonal) {
    into = inv_root_dt * sde.sigma_inv_diag.cwiseProduct(gauss);
  } else {
    into.noalias() = inv_root_dt * (sde.sigma_inv_t * gauss);
  }
}

Eigen::VectorXd malliavin_weight(const ConstantSde& sde,
                                 const Eigen::VectorXd& gauss, double dt) {
  if (!(dt > 0.0)) throw std::domain_error("malliavin_weight: dt must be > 0");
  Eigen::VectorXd into(sde.dim);
  malliavin_weight_into(sde, gauss, dt, into);
  return into;
}

ConstantSde log_asset_transform(double spot, double mu0, double sigma0) {
  if (!(spot > 0.0)) {
    throw std::domain_error("log_asset_transform: spot must be > 0");
  }
  Eigen::VectorXd drift(1), start(1);
  drift << mu0 - 0.5 * sigma0 * sigma0;
  start << std::log(spot);
  return ConstantSde(drift, sigma0, start);
}

}  // namespace nestmc
