#pragma once

#include "hsid/inference.hpp"
#include "hsid/model.hpp"

#include <cmath>
#include <vector>

namespace hsid::testing {

inline Mat random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng, double scale = 1.0) {
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = scale * rng.normal();
  }
  return m;
}

inline Vec random_vector(Eigen::Index n, Rng& rng, double scale = 1.0) {
  return random_matrix(n, 1, rng, scale).col(0);
}

/// SPD matrix with eigenvalues roughly in [lo, lo + scale^2 * d].
inline Mat random_spd(int d, Rng& rng, double lo = 0.1, double scale = 0.5) {
  const Mat g = random_matrix(d, d, rng, scale);
  return g * g.transpose() + lo * Mat::Identity(d, d);
}

inline TransitionModel random_transition(LinkKind kind, int K, int dx, int du, Rng& rng, bool per_pair = false) {
  TransitionModel tm;
  switch (kind) {
    case LinkKind::Stationary: tm = TransitionModel::stationary(K, dx, du); break;
    case LinkKind::Linear: tm = TransitionModel::linear(K, dx, du, per_pair); break;
    case LinkKind::Polynomial: tm = TransitionModel::polynomial(K, dx, du, 2, per_pair); break;
    case LinkKind::Perceptron: tm = TransitionModel::perceptron(K, dx, du, 4); break;
  }
  tm.bias = random_matrix(K, K, rng);
  tm.params = random_vector(tm.params.size(), rng, 0.5);
  tm.standardizer.mean = random_vector(dx + du, rng, 0.1);
  tm.standardizer.std = Vec::Constant(dx + du, 1.5);
  return tm;
}

/// Random valid model with stable-ish dynamics.
inline HybridModel random_model(Rng& rng, int K, int dx, int du, LoopMode mode = LoopMode::OpenLoop,
                                LinkKind kind = LinkKind::Linear, int lag = 0, int poly_degree = 1) {
  HybridModel m = make_model(K, dx, du, mode, random_transition(kind, K, dx, du, rng), lag, poly_degree);
  Vec pi(K);
  for (int k = 0; k < K; ++k) pi[k] = 0.2 + rng.uniform(0.0, 1.0);
  m.init.pi = pi / pi.sum();
  for (int k = 0; k < K; ++k) {
    m.init.mu[k] = random_vector(dx, rng);
    m.init.omega_cov[k] = random_spd(dx, rng);
    auto& d = m.dynamics[k];
    d.A = random_matrix(dx, dx, rng, 0.3) + 0.5 * Mat::Identity(dx, dx);
    d.B = random_matrix(dx, du, rng, 0.5);
    d.c = random_vector(dx, rng, 0.5);
    d.lam_cov = random_spd(dx, rng);
    if (mode == LoopMode::ClosedLoop) {
      auto& c = m.controllers[k];
      c.gain = random_matrix(du, m.controller_feature_dim(), rng, 0.5);
      c.offset = random_vector(du, rng, 0.5);
      c.sigma_cov = random_spd(du, rng);
    }
  }
  m.validate();
  return m;
}

/// Sample from a model; open-loop models get standard-normal exogenous inputs.
inline Trajectory random_trajectory(const HybridModel& m, Eigen::Index T, Rng& rng) {
  SampleOptions o;
  if (m.mode == LoopMode::OpenLoop) o.exogenous_us = random_matrix(m.du, T, rng);
  return sample_trajectory(m, T, rng, o).traj;
}

inline double max_abs_diff(const Mat& a, const Mat& b) { return (a - b).cwiseAbs().maxCoeff(); }

/// Regime permutation minimizing the summed max-abs distance between A matrices.
inline std::vector<int> best_permutation(const HybridModel& fit, const HybridModel& truth) {
  std::vector<int> perm(truth.K);
  for (int k = 0; k < truth.K; ++k) perm[k] = k;
  std::vector<int> best = perm;
  double best_cost = INFINITY;
  do {
    double cost = 0.0;
    for (int k = 0; k < truth.K; ++k) cost += max_abs_diff(fit.dynamics[perm[k]].A, truth.dynamics[k].A);
    if (cost < best_cost) {
      best_cost = cost;
      best = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

}  // namespace hsid::testing
