#pragma once

#include "hsid/linalg.hpp"
#include "hsid/transition.hpp"

#include <optional>
#include <string>
#include <vector>

namespace hsid {

/// Observed state/control time series. Column t of `xs` is x_t, column t of
/// `us` is u_t. A system without inputs has `us` with zero rows.
struct Trajectory {
  Mat xs;  // dx x T
  Mat us;  // du x T
  double dt = 1.0;
  std::string id;

  Eigen::Index length() const { return xs.cols(); }
  int dx() const { return static_cast<int>(xs.rows()); }
  int du() const { return static_cast<int>(us.rows()); }
  /// Throws std::invalid_argument unless T >= 2, |us| == |xs|, dt > 0 and all entries are finite.
  void validate() const;
};

struct Dataset {
  std::vector<Trajectory> trajectories;
  int dx = 0;
  int du = 0;

  /// Builds and validates a dataset; dimensions are taken from the first trajectory.
  static Dataset from(std::vector<Trajectory> trajectories);
  void validate() const;
  std::size_t size() const { return trajectories.size(); }
  /// Total number of recorded steps.
  Eigen::Index steps() const;
};

enum class LoopMode { OpenLoop, ClosedLoop };

std::string to_string(LoopMode mode);

struct InitialModel {
  Vec pi;
  std::vector<Vec> mu;
  std::vector<Mat> omega_cov;
};

/// x' = A x + B u + c + N(0, lam_cov)
struct RegimeDynamics {
  Mat A;
  Mat B;
  Vec c;
  Mat lam_cov;
};

/// u = gain * phi(x, past u) + offset + N(0, sigma_cov)
struct RegimeController {
  Mat gain;
  Vec offset;
  Mat sigma_cov;
};

/// Full parameter set of an (r)AR-HMM. Regimes are 0-based.
struct HybridModel {
  int K = 1;
  int dx = 0;
  int du = 0;
  LoopMode mode = LoopMode::OpenLoop;
  int lag = 0;          // past controls in the controller features
  int poly_degree = 1;  // state monomial degree in the controller features
  InitialModel init;
  std::vector<RegimeDynamics> dynamics;
  std::vector<RegimeController> controllers;  // empty in OpenLoop mode
  TransitionModel transition;

  int controller_feature_dim() const;
  /// Checks shapes, simplex and covariance invariants; throws std::invalid_argument.
  void validate(double covariance_floor = 0.0) const;
  void check_trajectory(const Trajectory& traj) const;
};

/// Model with K regimes and neutral parameters: uniform pi, zero means,
/// identity covariances, A = I, B = 0, c = 0, zero controllers.
HybridModel make_model(int K, int dx, int du, LoopMode mode, TransitionModel transition,
                       int lag = 0, int poly_degree = 1);

struct InitialDraw {
  int z = 0;
  Vec x;
  Vec u;
};

/// z1 ~ Cat(pi), x1 ~ N(mu_z1, Omega_z1), and in closed loop
/// u1 = gain phi(x1, 0-padded past) + offset + N(0, Sigma). OpenLoop takes u1
/// from `exogenous_u` and throws when it is absent.
InitialDraw sample_initial(const HybridModel& model, Rng& rng,
                           const std::optional<Vec>& exogenous_u = std::nullopt,
                           std::optional<int> fixed_regime = std::nullopt);

/// Mean of the regime dynamics: A x + B u + c.
Vec predict_state(const HybridModel& model, int z, const Vec& x, const Vec& u);

/// A_z x + B_z u + c_z + N(0, Lambda_z).
Vec step_dynamics(const HybridModel& model, int z, const Vec& x, const Vec& u, Rng& rng);

/// Noise-free variant of step_dynamics.
Vec step_dynamics_mean(const HybridModel& model, int z, const Vec& x, const Vec& u);

/// Mean control of regime z given the feature vector.
Vec controller_mean(const HybridModel& model, int z, const Vec& phi);

struct SampleOptions {
  std::optional<Mat> exogenous_us;   // du x T, required in OpenLoop when du > 0
  std::optional<int> initial_regime;
  bool noiseless = false;            // drop all Gaussian noise (regimes still sampled)
};

struct SampledPath {
  Trajectory traj;
  std::vector<int> regimes;
};

SampledPath sample_trajectory(const HybridModel& model, Eigen::Index T, Rng& rng,
                              const SampleOptions& options = {});

/// T x K matrix; entry (t, k) is log p(x_t | x_{t-1}, u_{t-1}, z_t = k)
/// (log N(x_1; mu_k, Omega_k) at the first step) plus, in ClosedLoop mode,
/// log p(u_t | x_t, z_t = k).
Mat log_local_evidence(const HybridModel& model, const Trajectory& traj);

/// Same as log_local_evidence but without the control factor regardless of mode.
Mat log_dynamics_evidence(const HybridModel& model, const Trajectory& traj);

/// The (T-1) transition matrices of a trajectory; entry t governs z_t -> z_{t+1}
/// and is evaluated at (x_t, u_t).
std::vector<Mat> transition_matrices(const HybridModel& model, const Trajectory& traj);

/// Exact (bitwise value) equality of every parameter and shape field.
bool identical(const HybridModel& a, const HybridModel& b);
bool identical(const Trajectory& a, const Trajectory& b);

/// Relabels regimes: new regime r is old regime perm[r].
HybridModel permute_regimes(const HybridModel& model, const std::vector<int>& perm);

}  // namespace hsid
