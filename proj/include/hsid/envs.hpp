#pragma once

#include "hsid/model.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace hsid {

enum class EnvKind { BouncingBall, Pendulum, CartPole };
enum class ObsKind { Joint, Trig };

std::string to_string(EnvKind kind);
std::string to_string(ObsKind kind);
EnvKind parse_env_kind(const std::string& name);
ObsKind parse_obs_kind(const std::string& name);

/// Simulator configuration. Angles use the upright-zero convention: theta = 0
/// is the inverted (upright) position and theta = pi hangs down.
struct EnvConfig {
  EnvKind env = EnvKind::Pendulum;
  ObsKind obs = ObsKind::Joint;
  double dt = 0.01;
  int horizon = 250;  // steps per trajectory
  double gravity = 9.81;

  // Bouncing ball
  double restitution = 0.8;

  // Pendulum
  double mass = 1.0;
  double length = 1.0;
  double damping = 0.1;
  double torque_limit = 2.5;

  // Cart-pole (pole_length is the distance from pivot to the pole's center of mass)
  double cart_mass = 1.0;
  double pole_mass = 0.1;
  double pole_length = 0.5;
  double force_limit = 5.0;

  std::uint64_t seed = 0;

  /// Defaults of the data protocol: ball 20 Hz x 600 steps, pendulum and
  /// cart-pole 100 Hz x 250 steps.
  static EnvConfig defaults(EnvKind env, ObsKind obs = ObsKind::Joint);
  void validate() const;

  int state_dim() const;
  int obs_dim() const;
  /// 0 for the ball, 1 otherwise.
  int control_dim() const;
  /// Actuation limit (0 for the ball).
  double limit() const;
};

/// Wraps an angle to [-pi, pi).
double wrap_angle(double a);

/// Observation of an internal state. Ball: (h, v). Pendulum Joint:
/// (theta, theta_dot), Trig: (cos, sin, theta_dot). Cart-pole Joint:
/// (x, theta, x_dot, theta_dot), Trig: (x, cos, sin, x_dot, theta_dot).
Vec observe(const EnvConfig& config, const Vec& state);

/// Pole/pendulum angle recovered from an observation (wrapped).
double observed_angle(const EnvConfig& config, const Vec& obs);
/// Pole/pendulum angular velocity from an observation.
double observed_angular_velocity(const EnvConfig& config, const Vec& obs);

/// Clips a control to the actuation limits.
Vec clip_control(const EnvConfig& config, const Vec& u);

/// One simulator step of length dt from `state` under control `u` (clipped).
/// Pendulum and cart-pole use one RK4 step; the ball uses exact free flight
/// with a restitution reset when the step ends below the floor.
Vec env_step(const EnvConfig& config, const Vec& state, const Vec& u);

/// Maps the internal state and step index to a control.
using Controller = std::function<Vec(const Vec& state, Eigen::Index t)>;

/// Rolls the simulator for T recorded steps from `state0`. Column t of the
/// result holds observe(s_t) and the clipped control applied at s_t.
/// Throws std::runtime_error on a non-finite state, naming the step.
Trajectory simulate(const EnvConfig& config, const Vec& state0, const Controller& policy,
                    Eigen::Index T);
/// Same with recorded controls (du x T).
Trajectory simulate_inputs(const EnvConfig& config, const Vec& state0, const Mat& us);

enum class StartKind { Explore, Hanging };

/// Initial internal state. Explore: ball h ~ U[2, 10], v ~ U[-3, 3];
/// pendulum theta ~ U[-pi, pi), theta_dot ~ U[-2, 2]; cart-pole x ~ U[-0.5, 0.5],
/// theta ~ U[-pi, pi), velocities ~ U[-1, 1]. Hanging: theta = pi + U[-0.1, 0.1],
/// other coordinates within +-0.05 of rest.
Vec sample_start(const EnvConfig& config, StartKind kind, Rng& rng);

/// Zero-mean uniform random controls within the limits, each held for
/// `hold` steps. The action sequence depends only on the seed.
class ExplorePolicy {
 public:
  ExplorePolicy(const EnvConfig& config, std::uint64_t seed, int hold = 1);
  Vec operator()(const Vec& state, Eigen::Index t);

 private:
  EnvConfig config_;
  Rng rng_;
  int hold_;
  Vec current_;
  Eigen::Index next_draw_ = 0;
};

/// Scripted swing-up expert: energy pumping far from upright, a discrete LQR
/// stabilizer once the wrapped angle error is below 0.35 rad and the angular
/// speed below `catch_speed`.
///
/// Pendulum pump: u = clamp(pump_gain * s * theta_dot) with s = +1 below the
/// upright energy and -1 above it, i.e. saturated negative damping that turns
/// into braking on overshoot. Each branch is linear in the state, so the
/// expert is itself piecewise affine. Cart-pole pump: force along
/// theta_dot * cos(theta) scaled by the energy deficit, with cart centering.
class SwingUpExpert {
 public:
  explicit SwingUpExpert(const EnvConfig& config);
  /// Control for an internal (joint-space) state.
  Vec operator()(const Vec& state) const;
  const Mat& gain() const { return gain_; }
  double catch_angle = 0.35;
  double catch_speed = 3.0;
  double pump_gain = 10.0;

 private:
  EnvConfig config_;
  Mat gain_;  // 1 x state_dim, u = -gain * (state - upright)
};

/// Convenience wrapper that builds a SwingUpExpert per call.
Vec expert_swingup(const EnvConfig& config, const Vec& state);

/// Data protocol output: train/test datasets and split membership (indices
/// into `train`).
struct Protocol {
  Dataset train;
  Dataset test;
  std::vector<std::vector<int>> splits;
};

struct ProtocolOptions {
  int n_train = 25;
  int n_test = 5;
  int n_splits = 24;
  int split_size = 10;
  int hold = 1;
  bool expert = false;  // expert demonstrations from hanging starts instead of exploration
  double expert_noise = 0.0;  // std of Gaussian noise added to the expert's action before clipping
};

/// Generates the datasets from config.seed: trajectories in order train then
/// test, then the splits (each a uniform draw of split_size distinct indices).
Protocol generate_protocol(const EnvConfig& config, const ProtocolOptions& options);

}  // namespace hsid
