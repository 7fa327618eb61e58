#include "doctest.h"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "nestmc/rng.hpp"
#include "nestmc/sde.hpp"
#include "nestmc/switching.hpp"

using Eigen::MatrixXd;
using Eigen::VectorXd;
using nestmc::antithetic_step;
using nestmc::ConstantSde;
using nestmc::log_asset_transform;
using nestmc::make_node;
using nestmc::malliavin_weight;
using nestmc::PathNode;
using nestmc::RngStream;
using nestmc::step;

namespace {

VectorXd draw_gauss(RngStream& rng, int d) {
  VectorXd g(d);
  for (int i = 0; i < d; ++i) g(i) = rng.normal();
  return g;
}

}  // namespace

TEST_CASE("construction validates sigma and precomputes its transpose-inverse") {
  MatrixXd sigma(2, 2);
  sigma << 1.0, 0.5, -0.3, 2.0;
  const ConstantSde sde(VectorXd::Zero(2), sigma, VectorXd::Zero(2));
  const MatrixXd prod = sde.sigma_inv_t * sde.sigma.transpose();
  CHECK((prod - MatrixXd::Identity(2, 2)).cwiseAbs().maxCoeff() < 1e-10);
  CHECK_FALSE(sde.diagonal);

  const ConstantSde iso(VectorXd::Zero(3), 2.0, VectorXd::Zero(3));
  CHECK(iso.diagonal);
  CHECK((iso.sigma_inv_t * iso.sigma.transpose() - MatrixXd::Identity(3, 3))
            .cwiseAbs()
            .maxCoeff() < 1e-10);

  MatrixXd singular = MatrixXd::Ones(2, 2);
  CHECK_THROWS_AS(ConstantSde(VectorXd::Zero(2), singular, VectorXd::Zero(2)),
                  std::domain_error);
  CHECK_THROWS_AS(ConstantSde(VectorXd::Zero(2), 0.0, VectorXd::Zero(2)),
                  std::domain_error);
  CHECK_THROWS_AS(ConstantSde(VectorXd::Zero(3), sigma, VectorXd::Zero(3)),
                  std::domain_error);
}

TEST_CASE("step closed forms") {
  const ConstantSde zero_drift(VectorXd::Zero(2), 1.0, VectorXd::Zero(2));
  const PathNode origin = make_node(0.0, VectorXd::Zero(2));
  const PathNode same = step(zero_drift, origin, 1.0, VectorXd::Zero(2));
  CHECK(same.state.cwiseAbs().maxCoeff() == 0.0);
  CHECK(same.time == 1.0);
  CHECK(same.dt_last == 1.0);

  VectorXd mu(1), g(1);
  mu << 0.2;
  g << 2.0;
  const ConstantSde line(mu, 1.0, VectorXd::Zero(1));
  const PathNode moved = step(line, make_node(0.0, VectorXd::Zero(1)), 0.25, g);
  CHECK(moved.state(0) == doctest::Approx(1.05).epsilon(1e-15));
  CHECK(moved.gauss_increment(0) == 2.0);
  CHECK(moved.dt_last == 0.25);

  CHECK_THROWS_AS(step(line, moved, 0.0, g), std::domain_error);
}

TEST_CASE("step covariance matches sigma sigma^T dt") {
  MatrixXd sigma(2, 2);
  sigma << 1.0, 0.5, -0.3, 2.0;
  VectorXd mu(2);
  mu << 0.4, -0.1;
  const double dt = 0.7;
  const ConstantSde sde(mu, sigma, VectorXd::Zero(2));
  const PathNode from = make_node(0.0, VectorXd::Zero(2));

  RngStream rng(101);
  const int n = 1000000;
  Eigen::Vector2d mean = Eigen::Vector2d::Zero();
  Eigen::Matrix2d second = Eigen::Matrix2d::Zero();
  PathNode node;
  for (int i = 0; i < n; ++i) {
    nestmc::step_into(sde, from, dt, draw_gauss(rng, 2), node);
    mean += node.state;
    second += node.state * node.state.transpose();
  }
  mean /= n;
  const Eigen::Matrix2d cov = second / n - mean * mean.transpose();
  const Eigen::Matrix2d target = dt * (sigma * sigma.transpose());
  for (int r = 0; r < 2; ++r) {
    CHECK(mean(r) == doctest::Approx(mu(r) * dt).epsilon(0.02));
    for (int c = 0; c < 2; ++c) {
      const double band =
          3.0 * std::sqrt((target(r, r) * target(c, c) + target(r, c) * target(r, c)) / n);
      CHECK(std::fabs(cov(r, c) - target(r, c)) < band);
    }
  }
}

TEST_CASE("antithetic pair is symmetric about the drifted parent") {
  MatrixXd sigma(2, 2);
  sigma << 1.0, 0.5, -0.3, 2.0;
  VectorXd mu(2), x(2), g(2);
  mu << 0.4, -0.1;
  x << 1.0, -2.0;
  g << 0.7, -1.3;
  const ConstantSde sde(mu, sigma, VectorXd::Zero(2));
  const double dt = 0.31;

  const auto [plus, minus] = antithetic_step(sde, make_node(0.2, x), dt, g);
  CHECK(plus.time == minus.time);
  CHECK(plus.dt_last == minus.dt_last);
  CHECK((plus.gauss_increment + minus.gauss_increment).cwiseAbs().maxCoeff() == 0.0);

  const VectorXd drifted = x + dt * mu;
  const VectorXd spread = std::sqrt(dt) * (sigma * g);
  CHECK((plus.state - (drifted + spread)).cwiseAbs().maxCoeff() < 1e-14);
  CHECK((minus.state - (drifted - spread)).cwiseAbs().maxCoeff() < 1e-14);
  CHECK((0.5 * (plus.state + minus.state) - drifted).cwiseAbs().maxCoeff() < 1e-14);

  // Odd polynomial of the noise cancels pairwise up to rounding.
  RngStream rng(55);
  double acc = 0.0;
  for (int i = 0; i < 100000; ++i) {
    const auto [p, m] = antithetic_step(sde, make_node(0.0, x), dt, draw_gauss(rng, 2));
    const VectorXd hp = p.state - drifted;
    const VectorXd hm = m.state - drifted;
    acc += hp(0) * hp(0) * hp(0) + hp(1) + hm(0) * hm(0) * hm(0) + hm(1);
  }
  CHECK(std::fabs(acc / 100000.0) < 1e-10);
}

TEST_CASE("antithetic children keep the marginal one-step law") {
  // Two-sample KS between minus-children and independent plain steps.
  VectorXd mu(1), x(1);
  mu << 0.3;
  x << 0.0;
  const ConstantSde sde(mu, 1.4, x);
  const double dt = 0.6;
  RngStream rng(66);
  const int n = 200000;
  std::vector<double> anti(n), plain(n);
  for (int i = 0; i < n; ++i) {
    const auto pair = antithetic_step(sde, make_node(0.0, x), dt, draw_gauss(rng, 1));
    anti[i] = pair.second.state(0);
    plain[i] = step(sde, make_node(0.0, x), dt, draw_gauss(rng, 1)).state(0);
  }
  std::sort(anti.begin(), anti.end());
  std::sort(plain.begin(), plain.end());
  double ks = 0.0;
  std::size_t i = 0, j = 0;
  while (i < anti.size() && j < plain.size()) {
    if (anti[i] <= plain[j]) {
      ++i;
    } else {
      ++j;
    }
    ks = std::max(ks, std::fabs(static_cast<double>(i) / n - static_cast<double>(j) / n));
  }
  // 1% critical value c(0.01) * sqrt((n+m)/(n m)), c from scipy.special.kolmogi(0.01)
  CHECK(ks < 1.627623612 * std::sqrt(2.0 / n));
}

TEST_CASE("malliavin weight closed forms") {
  VectorXd g1(1);
  g1 << 1.0;
  const ConstantSde unit(VectorXd::Zero(1), 1.0, VectorXd::Zero(1));
  CHECK(malliavin_weight(unit, g1, 1.0)(0) == doctest::Approx(1.0).epsilon(1e-15));

  const ConstantSde twice(VectorXd::Zero(1), 2.0, VectorXd::Zero(1));
  CHECK(malliavin_weight(twice, g1, 0.25)(0) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK_THROWS_AS(malliavin_weight(twice, g1, 0.0), std::domain_error);
}

TEST_CASE("malliavin weight reproduces the finite-difference gradient") {
  // E[w g(X_dt)] vs central differences of E[g(X_dt)] under matched noise.
  const int d = 3;
  MatrixXd sigma(d, d);
  sigma << 1.0, 0.3, 0.0, 0.0, 1.2, 0.4, 0.2, 0.0, 0.8;
  VectorXd mu(d), x(d);
  mu << 0.1, -0.2, 0.05;
  x << 0.3, -0.1, 0.2;
  const ConstantSde sde(mu, sigma, x);
  const double dt = 0.5;
  auto g_fn = [](const VectorXd& v) { return std::cos(v.sum()); };

  const int n = 2000000;
  const double h = 1e-3;
  RngStream rng(77);
  VectorXd weighted = VectorXd::Zero(d);
  VectorXd fd = VectorXd::Zero(d);
  PathNode node;
  const PathNode from = make_node(0.0, x);
  for (int i = 0; i < n; ++i) {
    const VectorXd g = draw_gauss(rng, d);
    nestmc::step_into(sde, from, dt, g, node);
    weighted += g_fn(node.state) * malliavin_weight(sde, g, dt);
    for (int k = 0; k < d; ++k) {
      // same gauss for +h and -h: the MC noise cancels in the difference
      fd(k) += (g_fn(node.state + h * VectorXd::Unit(d, k)) -
                g_fn(node.state - h * VectorXd::Unit(d, k))) /
               (2.0 * h);
    }
  }
  weighted /= n;
  fd /= n;
  CHECK((weighted - fd).norm() / fd.norm() < 1e-2);
}

TEST_CASE("multi-date stepping keeps the exact terminal law") {
  // Chop [0, T] with random switching dates; X_T statistics must match the
  // one-shot Gaussian law exactly (first two moments, 3-sigma bands).
  VectorXd mu(2), x(2);
  mu << 0.25, -0.5;
  x << 1.0, 2.0;
  MatrixXd sigma(2, 2);
  sigma << 0.9, 0.2, -0.1, 1.1;
  const ConstantSde sde(mu, sigma, x);
  const double T = 1.0;
  const nestmc::SwitchDensity density(2.0);

  RngStream rng(88);
  const int n = 400000;
  Eigen::Vector2d mean = Eigen::Vector2d::Zero();
  Eigen::Matrix2d second = Eigen::Matrix2d::Zero();
  PathNode node, next;
  for (int i = 0; i < n; ++i) {
    node = make_node(0.0, x);
    bool at_horizon = false;
    while (!at_horizon) {
      const auto nd = nestmc::extend_schedule(node.time, density, T, rng);
      nestmc::step_into(sde, node, nd.date - node.time, draw_gauss(rng, 2), next);
      std::swap(node, next);
      at_horizon = nd.at_horizon;
    }
    mean += node.state;
    second += node.state * node.state.transpose();
  }
  mean /= n;
  const Eigen::Matrix2d cov = second / n - mean * mean.transpose();
  const Eigen::Matrix2d target = T * (sigma * sigma.transpose());
  const Eigen::Vector2d target_mean = x + T * mu;
  for (int r = 0; r < 2; ++r) {
    CHECK(std::fabs(mean(r) - target_mean(r)) <
          3.0 * std::sqrt(target(r, r) / n));
    for (int c = 0; c < 2; ++c) {
      const double band =
          3.0 * std::sqrt((target(r, r) * target(c, c) + target(r, c) * target(r, c)) / n);
      CHECK(std::fabs(cov(r, c) - target(r, c)) < band);
    }
  }
}

TEST_CASE("log-asset coordinates") {
  const ConstantSde bs = log_asset_transform(100.0, 0.02, 0.2);
  CHECK(bs.mu(0) == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(bs.x0(0) == doctest::Approx(std::log(100.0)).epsilon(1e-15));
  CHECK(bs.sigma_diag(0) == 0.2);

  const ConstantSde unit_spot = log_asset_transform(1.0, 0.0, 0.2);
  CHECK(unit_spot.x0(0) == 0.0);
  CHECK(unit_spot.mu(0) == doctest::Approx(-0.02).epsilon(1e-14));

  CHECK_THROWS_AS(log_asset_transform(0.0, 0.0, 0.2), std::domain_error);
  CHECK_THROWS_AS(log_asset_transform(-5.0, 0.0, 0.2), std::domain_error);

  // E[S_T] = spot e^{mu0 T} by exponentiating simulated logs.
  const double spot = 100.0, mu0 = 0.02, sigma0 = 0.2, T = 1.0;
  const ConstantSde sde = log_asset_transform(spot, mu0, sigma0);
  RngStream rng(99);
  const int n = 1000000;
  double sum = 0.0;
  PathNode node;
  const PathNode from = make_node(0.0, sde.x0);
  for (int i = 0; i < n; ++i) {
    nestmc::step_into(sde, from, T, draw_gauss(rng, 1), node);
    sum += std::exp(node.state(0));
  }
  const double target = spot * std::exp(mu0 * T);
  const double sd = target * std::sqrt(std::exp(sigma0 * sigma0 * T) - 1.0);
  CHECK(std::fabs(sum / n - target) < 3.0 * sd / std::sqrt(static_cast<double>(n)));
}
