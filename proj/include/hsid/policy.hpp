#pragma once

#include "hsid/envs.hpp"
#include "hsid/learning.hpp"

#include <iosfwd>
#include <vector>

namespace hsid {

enum class ActMode { Mean, Argmax, Sample };
std::string to_string(ActMode mode);
ActMode parse_act_mode(const std::string& name);

/// Fits a closed-loop model to demonstrations. Throws std::invalid_argument
/// unless config.mode is ClosedLoop.
HybridModel distill(const Dataset& demos, const FitConfig& config);

struct Action {
  Vec u;
  int regime = 0;  // regime that produced u (argmax of the belief in Mean mode)
};

/// Control from a regime belief. Mean: belief-weighted average of the regime
/// means; Argmax: mean of the most probable regime; Sample: regime drawn from
/// the belief plus controller noise. `past_us` holds u_{t-lag} .. u_{t-1}.
/// The result is not clipped.
Action act(const HybridModel& model, const Vec& belief, const Vec& x, std::span<const Vec> past_us, ActMode mode,
           Rng& rng);

struct SuccessCriterion {
  double tail_fraction = 0.2;   // final part of the rollout that is checked
  double angle_tol = 0.2;       // rad, closed bound on the wrapped angle error from upright
  double velocity_tol = 1.0;    // rad/s, closed bound
  double cart_limit = 2.4;      // m, open bound on |x| (cart-pole only)
};

/// True iff every step of the final tail stays inside the criterion.
bool success_criterion(const Trajectory& traj, const EnvConfig& env, const SuccessCriterion& criterion = {});

struct RolloutResult {
  Trajectory traj;
  Mat beliefs;               // T x K filtered beliefs used for control
  std::vector<int> regimes;  // regime used for control per step
  bool success = false;
  SuccessCriterion criterion;

  /// t,b_1..b_K,regime with 1-based regime labels.
  void write_belief_csv(std::ostream& os) const;
};

/// Runs the model as a controller on the simulator from `state0`. The belief
/// is filtered online from the transition link at (x_{t-1}, u_{t-1}) and the
/// dynamics evidence of x_t; the control likelihood is not used.
RolloutResult rollout(const EnvConfig& env, const HybridModel& model, const Vec& state0, Eigen::Index T,
                      ActMode mode, Rng& rng, const SuccessCriterion& criterion = {});

/// Rollout from a hanging start drawn from `rng`.
RolloutResult rollout(const EnvConfig& env, const HybridModel& model, Eigen::Index T, ActMode mode, Rng& rng,
                      const SuccessCriterion& criterion = {});

}  // namespace hsid
