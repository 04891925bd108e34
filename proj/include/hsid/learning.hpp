#pragma once

#include "hsid/inference.hpp"
#include "hsid/model.hpp"

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace hsid {

struct FitConfig {
  int K = 2;
  LoopMode mode = LoopMode::OpenLoop;
  LinkKind transition_kind = LinkKind::Stationary;
  int transition_degree = 2;   // Polynomial links
  int hidden_units = 16;       // Perceptron links
  bool per_pair = false;       // separate weights per (i, j) for Linear/Polynomial links
  int lag = 0;
  int poly_degree = 1;
  bool zero_offset = false;    // force controller offsets to zero
  int max_iters = 200;
  double rel_tol = 1e-6;
  int restarts = 5;
  std::uint64_t seed = 0;
  double covariance_floor = kDefaultCovarianceFloor;
  double ridge = 1e-8;
  int glm_steps = 100;         // L-BFGS iterations per transition M-step
  int kmeans_iters = 50;

  void validate() const;
  /// Transition model of the configured kind with zero weights.
  TransitionModel make_transition(int dx, int du) const;
};

struct FitHistory {
  std::vector<double> loglik;   // observed-data log-likelihood per E-step
  std::vector<double> q_value;  // expected complete-data log-likelihood at the same E-step
  std::vector<double> seconds;  // wall time since the start of the run

  std::size_t iterations() const { return loglik.size(); }
  /// CSV with header iter,loglik,q_value,seconds. Without `with_time` the
  /// seconds column is written as 0 so that output is reproducible.
  void write_csv(std::ostream& os, bool with_time) const;
};

struct FitResult {
  HybridModel model;
  FitHistory history;                 // history of the selected restart
  int best_restart = 0;
  std::vector<FitHistory> restart_histories;
  std::vector<std::string> restart_errors;  // empty string for restarts that finished
  std::vector<std::string> warnings;
};

/// k-means on standardized [x_{t-1}; x_t - x_{t-1}] vectors gives hard
/// responsibilities, from which one M-step yields the initial Gaussian
/// parameters. The transition starts sticky (self logit +2).
HybridModel initialize(const Dataset& data, const FitConfig& config, Rng& rng);

/// Hard k-means labels per step of every trajectory (the initializer's
/// clustering), exposed for tests.
std::vector<std::vector<int>> initial_labels(const Dataset& data, const FitConfig& config, Rng& rng);

/// Weighted Gaussian MLE of the initial regime distribution and states.
/// A regime with total weight below 1e-12 keeps its previous mu/Omega.
InitialModel mstep_initial(std::span<const Posterior> posteriors, const Dataset& data, double floor,
                           const InitialModel& previous, std::vector<std::string>* warnings = nullptr);

/// Per-regime weighted least squares [x_{t-1}; u_{t-1}; 1] -> x_t with
/// weights gamma_t(k), plus the weighted residual covariance.
std::vector<RegimeDynamics> mstep_dynamics(std::span<const Posterior> posteriors, const Dataset& data,
                                           double floor, std::span<const RegimeDynamics> previous,
                                           std::vector<std::string>* warnings = nullptr,
                                           double ridge = 1e-8);

/// Per-regime weighted least squares phi(x_t, u_{t-lag..t-1}) -> u_t.
std::vector<RegimeController> mstep_controller(std::span<const Posterior> posteriors,
                                               const Dataset& data, int lag, int poly_degree,
                                               double floor, std::span<const RegimeController> previous,
                                               std::vector<std::string>* warnings = nullptr,
                                               double ridge = 1e-8, bool zero_offset = false);

/// Generalized M-step for the transition link. Stationary links use the
/// closed-form normalized counts; other kinds take up to glm_steps L-BFGS
/// iterations. Never returns a model with a worse
/// xi-weighted objective than `tm_hat`.
TransitionModel mstep_transitions(std::span<const Posterior> posteriors, const Dataset& data,
                                  const TransitionModel& tm_hat, const FitConfig& config);

/// xi-weighted transition log-likelihood sum_n sum_t sum_ij xi ln psi (the
/// transition part of Q).
double transition_q(std::span<const Posterior> posteriors, const Dataset& data,
                    const TransitionModel& tm);

/// One EM run from `start` until the relative log-likelihood improvement
/// drops below rel_tol or max_iters E-steps have been taken.
FitResult fit_em_from(const Dataset& data, const FitConfig& config, HybridModel start);

/// `restarts` independent EM runs seeded seed .. seed+restarts-1; returns
/// the run with the highest final log-likelihood.
FitResult fit_em(const Dataset& data, const FitConfig& config);

/// Dataset log-likelihood under a model.
double dataset_loglik(const HybridModel& model, const Dataset& data);

}  // namespace hsid
