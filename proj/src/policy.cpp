#include "hsid/policy.hpp"

#include "hsid/features.hpp"
#include "hsid/io.hpp"

#include <cmath>
#include <deque>
#include <ostream>
#include <stdexcept>

namespace hsid {

std::string to_string(ActMode mode) {
  switch (mode) {
    case ActMode::Mean: return "mean";
    case ActMode::Argmax: return "argmax";
    case ActMode::Sample: return "sample";
  }
  return "?";
}

ActMode parse_act_mode(const std::string& name) {
  if (name == "mean") return ActMode::Mean;
  if (name == "argmax") return ActMode::Argmax;
  if (name == "sample") return ActMode::Sample;
  throw std::invalid_argument("unknown action mode '" + name + "' (expected mean, argmax or sample)");
}

HybridModel distill(const Dataset& demos, const FitConfig& config) {
  if (config.mode != LoopMode::ClosedLoop) throw std::invalid_argument("distill: config.mode must be ClosedLoop");
  return fit_em(demos, config).model;
}

Action act(const HybridModel& model, const Vec& belief, const Vec& x, std::span<const Vec> past_us, ActMode mode,
           Rng& rng) {
  if (model.mode != LoopMode::ClosedLoop) throw std::invalid_argument("act: model has no controllers (open loop)");
  if (belief.size() != model.K) throw std::invalid_argument("act: belief must have K entries");
  const Vec phi = controller_features(x, past_us, model.lag, model.poly_degree);
  Action a;
  Eigen::Index best = 0;
  belief.maxCoeff(&best);
  switch (mode) {
    case ActMode::Mean:
      a.regime = static_cast<int>(best);
      a.u = Vec::Zero(model.du);
      for (int k = 0; k < model.K; ++k) {
        if (belief[k] > 0.0) a.u += belief[k] * controller_mean(model, k, phi);
      }
      return a;
    case ActMode::Argmax:
      a.regime = static_cast<int>(best);
      a.u = controller_mean(model, a.regime, phi);
      return a;
    case ActMode::Sample: {
      a.regime = rng.categorical(belief);
      const auto& c = model.controllers[static_cast<std::size_t>(a.regime)];
      a.u = rng.gaussian(controller_mean(model, a.regime, phi), c.sigma_cov.llt().matrixL());
      return a;
    }
  }
  throw std::logic_error("act: unknown mode");
}

bool success_criterion(const Trajectory& traj, const EnvConfig& env, const SuccessCriterion& c) {
  if (env.env == EnvKind::BouncingBall) throw std::invalid_argument("success_criterion: the ball has no task");
  const auto T = traj.length();
  const auto tail = std::max<Eigen::Index>(1, static_cast<Eigen::Index>(std::llround(c.tail_fraction * T)));
  for (Eigen::Index t = T - tail; t < T; ++t) {
    const Vec o = traj.xs.col(t);
    if (std::abs(observed_angle(env, o)) > c.angle_tol) return false;
    if (std::abs(observed_angular_velocity(env, o)) > c.velocity_tol) return false;
    if (env.env == EnvKind::CartPole && !(std::abs(o[0]) < c.cart_limit)) return false;
  }
  return true;
}

void RolloutResult::write_belief_csv(std::ostream& os) const {
  os << 't';
  for (Eigen::Index k = 0; k < beliefs.cols(); ++k) os << ",b_" << (k + 1);
  os << ",regime\n";
  for (Eigen::Index t = 0; t < beliefs.rows(); ++t) {
    os << t;
    for (Eigen::Index k = 0; k < beliefs.cols(); ++k) os << ',' << format_double(beliefs(t, k));
    os << ',' << regimes[static_cast<std::size_t>(t)] + 1 << '\n';
  }
}

RolloutResult rollout(const EnvConfig& env, const HybridModel& model, const Vec& state0, Eigen::Index T,
                      ActMode mode, Rng& rng, const SuccessCriterion& criterion) {
  env.validate();
  model.validate();
  if (model.mode != LoopMode::ClosedLoop) throw std::invalid_argument("rollout: model must be closed loop");
  if (model.dx != env.obs_dim() || model.du != env.control_dim()) {
    throw std::invalid_argument("rollout: model dimensions (" + std::to_string(model.dx) + ", " +
                                std::to_string(model.du) + ") do not match the environment (" +
                                std::to_string(env.obs_dim()) + ", " + std::to_string(env.control_dim()) + ")");
  }
  if (T < 2) throw std::invalid_argument("rollout: need at least 2 steps");
  const int K = model.K;
  std::vector<GaussianLogDensity> dyn_density;
  for (const auto& d : model.dynamics) dyn_density.emplace_back(d.lam_cov);
  std::vector<GaussianLogDensity> init_density;
  for (const auto& m : model.init.omega_cov) init_density.emplace_back(m);

  RolloutResult res;
  res.criterion = criterion;
  res.traj.dt = env.dt;
  res.traj.xs.resize(model.dx, T);
  res.traj.us.resize(model.du, T);
  res.beliefs.resize(T, K);
  res.regimes.resize(static_cast<std::size_t>(T));

  std::deque<Vec> past(static_cast<std::size_t>(model.lag), Vec::Zero(model.du));
  Vec state = state0;
  Vec b(K);
  Vec logw(K);
  Vec x_prev;
  Vec u_prev;
  for (Eigen::Index t = 0; t < T; ++t) {
    if (!state.allFinite()) throw std::runtime_error("rollout: non-finite state at step " + std::to_string(t));
    const Vec x = observe(env, state);
    Vec prior;
    if (t == 0) {
      prior = model.init.pi;
      for (int k = 0; k < K; ++k) logw[k] = init_density[k](x - model.init.mu[k]);
    } else {
      prior = transition_matrix(model.transition, x_prev, u_prev) * b;
      for (int k = 0; k < K; ++k) logw[k] = dyn_density[k](x - predict_state(model, k, x_prev, u_prev));
    }
    const double hi = logw.maxCoeff();
    Vec post = prior;
    if (std::isfinite(hi)) post = prior.cwiseProduct((logw.array() - hi).exp().matrix());
    const double s = post.sum();
    // An observation no regime can explain leaves the predicted belief in place.
    b = (s > 0.0 && std::isfinite(s)) ? Vec(post / s) : Vec(prior / prior.sum());

    const std::vector<Vec> past_vec(past.begin(), past.end());
    const Action a = act(model, b, x, past_vec, mode, rng);
    const Vec u = clip_control(env, a.u);
    res.traj.xs.col(t) = x;
    res.traj.us.col(t) = u;
    res.beliefs.row(t) = b.transpose();
    res.regimes[static_cast<std::size_t>(t)] = a.regime;
    if (model.lag > 0) {
      past.pop_front();
      past.push_back(u);
    }
    x_prev = x;
    u_prev = u;
    if (t + 1 < T) state = env_step(env, state, u);
  }
  res.success = success_criterion(res.traj, env, criterion);
  return res;
}

RolloutResult rollout(const EnvConfig& env, const HybridModel& model, Eigen::Index T, ActMode mode, Rng& rng,
                      const SuccessCriterion& criterion) {
  const Vec s0 = sample_start(env, StartKind::Hanging, rng);
  return rollout(env, model, s0, T, mode, rng, criterion);
}

}  // namespace hsid
