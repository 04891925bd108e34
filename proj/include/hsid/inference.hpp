#pragma once

#include "hsid/model.hpp"

#include <span>
#include <vector>

namespace hsid {

/// Smoothed posterior of one trajectory.
struct Posterior {
  Mat gamma;             // T x K, row t = p(z_t | whole trajectory)
  std::vector<Mat> xi;   // T-1 slices, xi[t](j, i) = p(z_t = j, z_{t+1} = i | trajectory)
  double loglik = 0.0;   // log p(trajectory)
};

struct ForwardResult {
  Mat alpha;       // T x K, row t = p(z_t | steps 0..t)
  Vec log_norms;   // per-step log normalizers; their sum is the log-likelihood
  double loglik = 0.0;
};

/// Scaled forward recursion.
///
/// `evidence` is T x K log local evidence, `trans[t]` the column-stochastic
/// matrix for z_t -> z_{t+1}, `pi` the initial regime distribution.
/// Throws std::runtime_error if some step has zero total evidence mass.
ForwardResult forward_pass(const Mat& evidence, std::span<const Mat> trans, const Vec& pi);

/// Scaled backward messages consistent with forward_pass's normalizers;
/// the last row is all ones.
Mat backward_pass(const Mat& evidence, std::span<const Mat> trans, const Vec& log_norms);

/// Forward-backward from precomputed evidence and transition matrices.
Posterior smooth(const Mat& evidence, std::span<const Mat> trans, const Vec& pi);
Posterior smooth(const HybridModel& model, const Trajectory& traj);

/// Exact posterior by enumerating all K^T regime paths (K^T <= 1e6).
Posterior brute_force_posterior(const Mat& evidence, std::span<const Mat> trans, const Vec& pi);
Posterior brute_force_posterior(const HybridModel& model, const Trajectory& traj);

struct EStepResult {
  std::vector<Posterior> posteriors;
  double total_loglik = 0.0;
};

EStepResult estep(const HybridModel& model, const Dataset& data);

/// Most probable regime path; a debugging aid, not used for learning.
std::vector<int> viterbi(const Mat& evidence, std::span<const Mat> trans, const Vec& pi);

}  // namespace hsid
