#include "hsid/envs.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace hsid {
namespace {

using std::numbers::pi;

Vec pendulum_deriv(const EnvConfig& c, const Vec& s, double u) {
  const double inertia = c.mass * c.length * c.length;
  Vec d(2);
  d[0] = s[1];
  d[1] = (c.mass * c.gravity * c.length * std::sin(s[0]) - c.damping * s[1] + u) / inertia;
  return d;
}

// State (x, theta, x_dot, theta_dot); theta = 0 upright.
Vec cartpole_deriv(const EnvConfig& c, const Vec& s, double f) {
  const double total = c.cart_mass + c.pole_mass;
  const double st = std::sin(s[1]);
  const double ct = std::cos(s[1]);
  const double tmp = (f + c.pole_mass * c.pole_length * s[3] * s[3] * st) / total;
  const double theta_acc = (c.gravity * st - ct * tmp) /
                           (c.pole_length * (4.0 / 3.0 - c.pole_mass * ct * ct / total));
  const double x_acc = tmp - c.pole_mass * c.pole_length * theta_acc * ct / total;
  Vec d(4);
  d << s[2], s[3], x_acc, theta_acc;
  return d;
}

template <class F>
Vec rk4(const Vec& s, double dt, F&& deriv) {
  const Vec k1 = deriv(s);
  const Vec k2 = deriv(s + 0.5 * dt * k1);
  const Vec k3 = deriv(s + 0.5 * dt * k2);
  const Vec k4 = deriv(s + dt * k3);
  return s + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

// Upright-centred error with the angle wrapped.
Vec upright_error(const EnvConfig& c, const Vec& s) {
  Vec e = s;
  if (c.env == EnvKind::Pendulum) e[0] = wrap_angle(s[0]);
  if (c.env == EnvKind::CartPole) e[1] = wrap_angle(s[1]);
  return e;
}

// Discrete LQR gain of the linearization of env_step at the upright rest state.
Mat upright_lqr_gain(const EnvConfig& c) {
  const int n = c.state_dim();
  const Vec s0 = Vec::Zero(n);
  const Vec u0 = Vec::Zero(1);
  const double eps = 1e-6;
  Mat A(n, n);
  Mat B(n, 1);
  for (int i = 0; i < n; ++i) {
    Vec sp = s0, sm = s0;
    sp[i] += eps;
    sm[i] -= eps;
    A.col(i) = (env_step(c, sp, u0) - env_step(c, sm, u0)) / (2 * eps);
  }
  B.col(0) = (env_step(c, s0, Vec::Constant(1, eps)) - env_step(c, s0, Vec::Constant(1, -eps))) / (2 * eps);

  Mat Q = Mat::Identity(n, n);
  if (c.env == EnvKind::Pendulum) Q.diagonal() << 10.0, 1.0;
  if (c.env == EnvKind::CartPole) Q.diagonal() << 1.0, 20.0, 1.0, 1.0;
  const Mat R = Mat::Identity(1, 1);
  Mat P = Q;
  for (int it = 0; it < 100000; ++it) {
    const Mat BtP = B.transpose() * P;
    const Mat gain = (R + BtP * B).ldlt().solve(BtP * A);
    const Mat next = Q + A.transpose() * P * (A - B * gain);
    const double change = (next - P).cwiseAbs().maxCoeff();
    P = 0.5 * (next + next.transpose());
    if (change < 1e-10 * (1.0 + P.cwiseAbs().maxCoeff())) break;
  }
  const Mat BtP = B.transpose() * P;
  return (R + BtP * B).ldlt().solve(BtP * A);
}

void check_state(const EnvConfig& c, const Vec& s, const char* what) {
  if (s.size() != c.state_dim()) {
    throw std::invalid_argument(std::string(what) + ": state has dimension " + std::to_string(s.size()) +
                                ", expected " + std::to_string(c.state_dim()));
  }
}

}  // namespace

std::string to_string(EnvKind kind) {
  switch (kind) {
    case EnvKind::BouncingBall: return "ball";
    case EnvKind::Pendulum: return "pendulum";
    case EnvKind::CartPole: return "cartpole";
  }
  return "?";
}

std::string to_string(ObsKind kind) { return kind == ObsKind::Joint ? "joint" : "trig"; }

EnvKind parse_env_kind(const std::string& name) {
  if (name == "ball" || name == "bouncing-ball") return EnvKind::BouncingBall;
  if (name == "pendulum") return EnvKind::Pendulum;
  if (name == "cartpole" || name == "cart-pole") return EnvKind::CartPole;
  throw std::invalid_argument("unknown environment '" + name + "' (expected ball, pendulum or cartpole)");
}

ObsKind parse_obs_kind(const std::string& name) {
  if (name == "joint") return ObsKind::Joint;
  if (name == "trig") return ObsKind::Trig;
  throw std::invalid_argument("unknown observation space '" + name + "' (expected joint or trig)");
}

EnvConfig EnvConfig::defaults(EnvKind env, ObsKind obs) {
  EnvConfig c;
  c.env = env;
  c.obs = obs;
  if (env == EnvKind::BouncingBall) {
    c.dt = 0.05;
    c.horizon = 600;
  } else {
    c.dt = 0.01;
    c.horizon = 250;
  }
  return c;
}

void EnvConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw std::invalid_argument("env config: " + what);
  };
  require(dt > 0.0 && std::isfinite(dt), "dt must be positive");
  require(horizon >= 2, "horizon must be at least 2 steps");
  require(gravity > 0.0, "gravity must be positive");
  require(restitution > 0.0 && restitution <= 1.0, "restitution must lie in (0, 1]");
  require(mass > 0.0 && length > 0.0, "pendulum mass and length must be positive");
  require(damping >= 0.0, "damping must be nonnegative");
  require(torque_limit > 0.0, "torque limit must be positive");
  require(cart_mass > 0.0 && pole_mass > 0.0 && pole_length > 0.0, "cart-pole masses and length must be positive");
  require(force_limit > 0.0, "force limit must be positive");
}

int EnvConfig::state_dim() const {
  switch (env) {
    case EnvKind::BouncingBall: return 2;
    case EnvKind::Pendulum: return 2;
    case EnvKind::CartPole: return 4;
  }
  return 0;
}

int EnvConfig::obs_dim() const {
  const int extra = (obs == ObsKind::Trig && env != EnvKind::BouncingBall) ? 1 : 0;
  return state_dim() + extra;
}

int EnvConfig::control_dim() const { return env == EnvKind::BouncingBall ? 0 : 1; }

double EnvConfig::limit() const {
  switch (env) {
    case EnvKind::BouncingBall: return 0.0;
    case EnvKind::Pendulum: return torque_limit;
    case EnvKind::CartPole: return force_limit;
  }
  return 0.0;
}

double wrap_angle(double a) {
  if (a >= -pi && a < pi) return a;
  double w = std::fmod(a + pi, 2.0 * pi);
  if (w < 0.0) w += 2.0 * pi;
  w -= pi;
  // fmod rounding can land exactly on +pi
  return w >= pi ? w - 2.0 * pi : w;
}

Vec observe(const EnvConfig& c, const Vec& s) {
  check_state(c, s, "observe");
  if (c.env == EnvKind::BouncingBall) return s;
  const int ia = c.env == EnvKind::Pendulum ? 0 : 1;
  if (c.obs == ObsKind::Joint) {
    Vec o = s;
    o[ia] = wrap_angle(s[ia]);
    return o;
  }
  Vec o(s.size() + 1);
  if (c.env == EnvKind::Pendulum) {
    o << std::cos(s[0]), std::sin(s[0]), s[1];
  } else {
    o << s[0], std::cos(s[1]), std::sin(s[1]), s[2], s[3];
  }
  return o;
}

double observed_angle(const EnvConfig& c, const Vec& o) {
  if (c.env == EnvKind::BouncingBall) throw std::invalid_argument("observed_angle: the ball has no angle");
  const int ia = c.env == EnvKind::Pendulum ? 0 : 1;
  if (c.obs == ObsKind::Joint) return wrap_angle(o[ia]);
  return wrap_angle(std::atan2(o[ia + 1], o[ia]));
}

double observed_angular_velocity(const EnvConfig& c, const Vec& o) {
  if (c.env == EnvKind::BouncingBall) throw std::invalid_argument("observed_angular_velocity: the ball has no angle");
  return o[o.size() - 1];
}

Vec clip_control(const EnvConfig& c, const Vec& u) {
  if (u.size() != c.control_dim()) {
    throw std::invalid_argument("control has dimension " + std::to_string(u.size()) + ", expected " +
                                std::to_string(c.control_dim()));
  }
  const double lim = c.limit();
  return u.cwiseMax(-lim).cwiseMin(lim);
}

Vec env_step(const EnvConfig& c, const Vec& s, const Vec& u_raw) {
  check_state(c, s, "env_step");
  const Vec u = clip_control(c, u_raw);
  switch (c.env) {
    case EnvKind::BouncingBall: {
      const double g = c.gravity;
      const double dt = c.dt;
      Vec next(2);
      next[0] = s[0] + s[1] * dt - 0.5 * g * dt * dt;
      next[1] = s[1] - g * dt;
      if (next[0] < 0.0) {
        next[0] = -c.restitution * next[0];
        next[1] = -c.restitution * next[1];
      }
      return next;
    }
    case EnvKind::Pendulum:
      return rk4(s, c.dt, [&](const Vec& y) { return pendulum_deriv(c, y, u[0]); });
    case EnvKind::CartPole:
      return rk4(s, c.dt, [&](const Vec& y) { return cartpole_deriv(c, y, u[0]); });
  }
  throw std::logic_error("env_step: unknown environment");
}

Trajectory simulate(const EnvConfig& c, const Vec& state0, const Controller& policy, Eigen::Index T) {
  c.validate();
  check_state(c, state0, "simulate");
  if (T < 2) throw std::invalid_argument("simulate: need at least 2 steps");
  Trajectory traj;
  traj.dt = c.dt;
  traj.xs.resize(c.obs_dim(), T);
  traj.us.resize(c.control_dim(), T);
  Vec s = state0;
  for (Eigen::Index t = 0; t < T; ++t) {
    if (!s.allFinite()) throw std::runtime_error("simulate: non-finite state at step " + std::to_string(t));
    traj.xs.col(t) = observe(c, s);
    Vec u = policy ? policy(s, t) : Vec::Zero(c.control_dim());
    if (!u.allFinite()) throw std::runtime_error("simulate: non-finite control at step " + std::to_string(t));
    u = clip_control(c, u);
    traj.us.col(t) = u;
    if (t + 1 < T) s = env_step(c, s, u);
  }
  return traj;
}

Trajectory simulate_inputs(const EnvConfig& c, const Vec& state0, const Mat& us) {
  if (us.rows() != c.control_dim()) throw std::invalid_argument("simulate_inputs: control dimension mismatch");
  return simulate(c, state0, [&](const Vec&, Eigen::Index t) { return Vec(us.col(t)); }, us.cols());
}

Vec sample_start(const EnvConfig& c, StartKind kind, Rng& rng) {
  Vec s(c.state_dim());
  switch (c.env) {
    case EnvKind::BouncingBall: {
      const double h = rng.uniform(2.0, 10.0);
      const double v = rng.uniform(-3.0, 3.0);
      s << h, v;
      return s;
    }
    case EnvKind::Pendulum:
      if (kind == StartKind::Explore) {
        const double th = rng.uniform(-pi, pi);
        const double w = rng.uniform(-2.0, 2.0);
        s << th, w;
      } else {
        const double th = pi + rng.uniform(-0.1, 0.1);
        const double w = rng.uniform(-0.05, 0.05);
        s << th, w;
      }
      return s;
    case EnvKind::CartPole:
      if (kind == StartKind::Explore) {
        const double x = rng.uniform(-0.5, 0.5);
        const double th = rng.uniform(-pi, pi);
        const double xd = rng.uniform(-1.0, 1.0);
        const double thd = rng.uniform(-1.0, 1.0);
        s << x, th, xd, thd;
      } else {
        const double x = rng.uniform(-0.05, 0.05);
        const double th = pi + rng.uniform(-0.1, 0.1);
        const double xd = rng.uniform(-0.05, 0.05);
        const double thd = rng.uniform(-0.05, 0.05);
        s << x, th, xd, thd;
      }
      return s;
  }
  throw std::logic_error("sample_start: unknown environment");
}

ExplorePolicy::ExplorePolicy(const EnvConfig& config, std::uint64_t seed, int hold)
    : config_(config), rng_(seed), hold_(hold), current_(Vec::Zero(config.control_dim())) {
  if (hold < 1) throw std::invalid_argument("explore policy: hold must be >= 1");
}

Vec ExplorePolicy::operator()(const Vec&, Eigen::Index t) {
  // Draws happen on block boundaries in step order, independent of the state.
  while (next_draw_ <= t) {
    for (Eigen::Index i = 0; i < current_.size(); ++i) {
      current_[i] = rng_.uniform(-config_.limit(), config_.limit());
    }
    next_draw_ += hold_;
  }
  return current_;
}

SwingUpExpert::SwingUpExpert(const EnvConfig& config) : config_(config) {
  config.validate();
  if (config.env == EnvKind::BouncingBall) {
    throw std::invalid_argument("swing-up expert: the ball has no actuation");
  }
  gain_ = upright_lqr_gain(config);
}

Vec SwingUpExpert::operator()(const Vec& s) const {
  check_state(config_, s, "swing-up expert");
  const EnvConfig& c = config_;
  const Vec e = upright_error(c, s);
  const int ia = c.env == EnvKind::Pendulum ? 0 : 1;
  const int iw = c.env == EnvKind::Pendulum ? 1 : 3;
  if (std::abs(e[ia]) < catch_angle && std::abs(e[iw]) < catch_speed) {
    return clip_control(c, -gain_ * e);
  }
  const double th = s[ia];
  const double w = s[iw];
  Vec u(1);
  if (c.env == EnvKind::Pendulum) {
    const double energy = 0.5 * c.mass * c.length * c.length * w * w +
                          c.mass * c.gravity * c.length * (std::cos(th) - 1.0);
    // Negative damping below the upright energy, positive damping above it.
    const double sign = energy < 0.0 ? 1.0 : -1.0;
    u[0] = std::clamp(pump_gain * sign * w, -c.torque_limit, c.torque_limit);
  } else {
    const double ml = c.pole_mass * c.pole_length;
    const double energy = (2.0 / 3.0) * ml * c.pole_length * w * w + ml * c.gravity * (std::cos(th) - 1.0);
    const double pump = w * std::cos(th);
    double f = std::abs(pump) < 1e-6 ? c.force_limit : 40.0 * energy * pump;
    f -= 1.0 * s[0] + 1.0 * s[2];
    u[0] = f;
  }
  return clip_control(c, u);
}

Vec expert_swingup(const EnvConfig& config, const Vec& state) { return SwingUpExpert(config)(state); }

Protocol generate_protocol(const EnvConfig& config, const ProtocolOptions& o) {
  config.validate();
  if (o.n_train < 1 || o.n_test < 0 || o.n_splits < 0) throw std::invalid_argument("protocol: bad counts");
  if (!(o.expert_noise >= 0.0)) throw std::invalid_argument("protocol: expert noise must be nonnegative");
  if (o.n_splits > 0 && (o.split_size < 1 || o.split_size > o.n_train)) {
    throw std::invalid_argument("protocol: split size must lie in [1, n_train]");
  }
  if (o.expert && config.env == EnvKind::BouncingBall) {
    throw std::invalid_argument("protocol: expert demonstrations need an actuated system");
  }
  Rng rng(config.seed);
  std::optional<SwingUpExpert> expert;
  if (o.expert) expert.emplace(config);

  auto make = [&](const std::string& id) {
    const Vec s0 = sample_start(config, o.expert ? StartKind::Hanging : StartKind::Explore, rng);
    Trajectory tr;
    if (o.expert) {
      tr = simulate(
          config, s0,
          [&](const Vec& s, Eigen::Index) {
            Vec u = (*expert)(s);
            if (o.expert_noise > 0.0) {
              for (Eigen::Index i = 0; i < u.size(); ++i) u[i] += o.expert_noise * rng.normal();
            }
            return u;
          },
          config.horizon);
    } else if (config.control_dim() == 0) {
      tr = simulate(config, s0, nullptr, config.horizon);
    } else {
      ExplorePolicy explore(config, rng.engine()(), o.hold);
      tr = simulate(config, s0, std::ref(explore), config.horizon);
    }
    tr.id = id;
    return tr;
  };

  auto label = [](const char* prefix, int i) {
    std::string n = std::to_string(i);
    return std::string(prefix) + std::string(n.size() < 3 ? 3 - n.size() : 0, '0') + n;
  };

  std::vector<Trajectory> train;
  std::vector<Trajectory> test;
  for (int i = 0; i < o.n_train; ++i) train.push_back(make(label("train-", i)));
  for (int i = 0; i < o.n_test; ++i) test.push_back(make(label("test-", i)));

  Protocol p;
  p.train = Dataset::from(std::move(train));
  if (!test.empty()) p.test = Dataset::from(std::move(test));
  for (int s = 0; s < o.n_splits; ++s) {
    std::vector<int> idx(static_cast<std::size_t>(o.n_train));
    for (int i = 0; i < o.n_train; ++i) idx[static_cast<std::size_t>(i)] = i;
    // Partial Fisher-Yates: the first split_size entries are a uniform subset.
    for (int i = 0; i < o.split_size; ++i) {
      const auto j = static_cast<std::size_t>(i) + rng.uniform_index(static_cast<std::size_t>(o.n_train - i));
      std::swap(idx[static_cast<std::size_t>(i)], idx[j]);
    }
    idx.resize(static_cast<std::size_t>(o.split_size));
    std::sort(idx.begin(), idx.end());
    p.splits.push_back(std::move(idx));
  }
  return p;
}

}  // namespace hsid
