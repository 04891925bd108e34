#include "hsid/envs.hpp"
#include "hsid/policy.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>

using namespace hsid;

namespace {

Vec vec(std::initializer_list<double> v) {
  Vec out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

double pendulum_energy(const EnvConfig& c, const Vec& s) {
  return 0.5 * c.mass * c.length * c.length * s[1] * s[1] + c.mass * c.gravity * c.length * std::cos(s[0]);
}

}  // namespace

TEST_CASE("angle wrapping and observations") {
  const double pi = std::numbers::pi;
  CHECK(wrap_angle(pi + 0.1) == doctest::Approx(-pi + 0.1).epsilon(1e-15));
  CHECK(wrap_angle(-1.5 * pi) == doctest::Approx(0.5 * pi).epsilon(1e-15));
  CHECK(wrap_angle(pi) == doctest::Approx(-pi));

  EnvConfig trig = EnvConfig::defaults(EnvKind::Pendulum, ObsKind::Trig);
  const Vec o0 = observe(trig, vec({0.0, 0.3}));
  CHECK(o0[0] == 1.0);
  CHECK(o0[1] == 0.0);
  CHECK(o0[2] == 0.3);
  const Vec o1 = observe(trig, vec({-1.5 * pi, 0.0}));
  CHECK(std::abs(o1[0]) < 1e-15);
  CHECK(o1[1] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(observed_angle(trig, o1) == doctest::Approx(0.5 * pi).epsilon(1e-15));

  EnvConfig joint = EnvConfig::defaults(EnvKind::Pendulum, ObsKind::Joint);
  CHECK(observe(joint, vec({pi + 0.1, 0.0}))[0] == doctest::Approx(-pi + 0.1).epsilon(1e-15));

  EnvConfig cp = EnvConfig::defaults(EnvKind::CartPole, ObsKind::Trig);
  Vec s = vec({0.3, 2.0, -0.1, 0.4});
  const Vec oc = observe(cp, s);
  CHECK(oc.size() == 5);
  CHECK(std::abs(oc[1] * oc[1] + oc[2] * oc[2] - 1.0) < 1e-12);
  CHECK(observed_angular_velocity(cp, oc) == 0.4);
}

TEST_CASE("protocol dimensions and defaults") {
  const EnvConfig ball = EnvConfig::defaults(EnvKind::BouncingBall);
  CHECK(ball.dt == 0.05);
  CHECK(ball.horizon == 600);
  CHECK(ball.obs_dim() == 2);
  CHECK(ball.control_dim() == 0);
  const EnvConfig pend = EnvConfig::defaults(EnvKind::Pendulum, ObsKind::Trig);
  CHECK(pend.horizon == 250);
  CHECK(pend.obs_dim() == 3);
  CHECK(EnvConfig::defaults(EnvKind::CartPole, ObsKind::Joint).obs_dim() == 4);
  CHECK(parse_env_kind("cartpole") == EnvKind::CartPole);
  CHECK_THROWS_AS(parse_env_kind("acrobot"), std::invalid_argument);
}

TEST_CASE("equilibria stay put") {
  EnvConfig p = EnvConfig::defaults(EnvKind::Pendulum);
  p.damping = 0.0;
  Vec s = vec({std::numbers::pi, 0.0});
  for (int t = 0; t < 500; ++t) s = env_step(p, s, Vec::Zero(1));
  CHECK(std::abs(s[0] - std::numbers::pi) < 1e-12);
  CHECK(std::abs(s[1]) < 1e-12);

  EnvConfig cp = EnvConfig::defaults(EnvKind::CartPole);
  Vec c = Vec::Zero(4);
  for (int t = 0; t < 500; ++t) c = env_step(cp, c, Vec::Zero(1));
  CHECK(c.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("controls are clipped to the actuation limits") {
  EnvConfig p = EnvConfig::defaults(EnvKind::Pendulum);
  CHECK(clip_control(p, vec({9.0}))[0] == 2.5);
  CHECK(clip_control(p, vec({-9.0}))[0] == -2.5);
  const Vec s = vec({1.0, 0.0});
  CHECK(identical(env_step(p, s, vec({100.0})), env_step(p, s, vec({2.5}))));
}

TEST_CASE("RK4 conserves pendulum energy") {
  EnvConfig p = EnvConfig::defaults(EnvKind::Pendulum);
  p.damping = 0.0;
  Vec s = vec({2.0, 1.0});
  const double e0 = pendulum_energy(p, s);
  for (int t = 0; t < 250; ++t) s = env_step(p, s, Vec::Zero(1));
  CHECK(std::abs(pendulum_energy(p, s) - e0) / std::abs(e0) < 1e-4);
}

TEST_CASE("bouncing ball") {
  EnvConfig b = EnvConfig::defaults(EnvKind::BouncingBall);
  Rng rng(0);
  Trajectory tr = simulate(b, sample_start(b, StartKind::Explore, rng), nullptr, b.horizon);
  CHECK(tr.length() == 600);
  CHECK(tr.du() == 0);
  CHECK(tr.xs.row(0).minCoeff() >= 0.0);
  int impacts = 0;
  for (Eigen::Index t = 1; t < tr.length(); ++t) {
    const double pre = tr.xs(1, t - 1), post = tr.xs(1, t);
    if (pre < -1.0 && post > 0.0) {
      ++impacts;
      // Post-impact speed over pre-impact speed, both taken at recorded steps.
      CHECK(std::abs(std::abs(post / pre) - b.restitution) <= 2.0 * b.gravity * b.dt);
    }
  }
  CHECK(impacts >= 3);

  SUBCASE("first impact time of a drop from 1 m") {
    // Free fall hits the floor at sqrt(2/g) = 0.4515 s, between recorded steps 9 and 10.
    Trajectory drop = simulate(b, vec({1.0, 0.0}), nullptr, 12);
    int first = -1;
    for (Eigen::Index t = 1; t < drop.length() && first < 0; ++t) {
      if (drop.xs(1, t) > 0.0) first = static_cast<int>(t);
    }
    CHECK(first == 10);
  }
}

TEST_CASE("exploration policy") {
  EnvConfig p = EnvConfig::defaults(EnvKind::Pendulum);
  ExplorePolicy a(p, 5, 5), b(p, 5, 5);
  const Vec s = Vec::Zero(2);
  Vec first;
  for (Eigen::Index t = 0; t < 50; ++t) {
    const Vec ua = a(s, t), ub = b(s, t);
    CHECK(identical(ua, ub));
    CHECK(std::abs(ua[0]) <= 2.5);
    if (t % 5 == 0) first = ua;
    CHECK(identical(ua, first));
  }
}

TEST_CASE("simulation is deterministic") {
  const EnvConfig c = EnvConfig::defaults(EnvKind::CartPole, ObsKind::Trig);
  ProtocolOptions o;
  o.n_train = 3;
  o.n_test = 1;
  o.n_splits = 4;
  o.split_size = 2;
  const Protocol a = generate_protocol(c, o), b = generate_protocol(c, o);
  for (std::size_t i = 0; i < 3; ++i) CHECK(identical(a.train.trajectories[i], b.train.trajectories[i]));
  CHECK(a.splits == b.splits);
  for (const auto& s : a.splits) {
    CHECK(s.size() == 2);
    CHECK(s[0] != s[1]);
  }
  CHECK(a.train.trajectories[0].id == "train-000");
  CHECK(a.test.trajectories[0].id == "test-000");
}

TEST_CASE("non-finite states are reported with their step") {
  EnvConfig p = EnvConfig::defaults(EnvKind::Pendulum);
  CHECK_THROWS_AS(simulate(p, vec({NAN, 0.0}), nullptr, 5), std::runtime_error);
}

TEST_CASE("swing-up expert") {
  for (EnvKind kind : {EnvKind::Pendulum, EnvKind::CartPole}) {
    CAPTURE(to_string(kind));
    const EnvConfig c = EnvConfig::defaults(kind);
    SwingUpExpert ex(c);
    CHECK(std::abs(ex(Vec::Zero(c.state_dim()))[0]) < 1e-6);

    Rng rng(1);
    int ok = 0;
    for (int e = 0; e < 100; ++e) {
      const Vec s0 = sample_start(c, StartKind::Hanging, rng);
      const Trajectory tr = simulate(c, s0, [&](const Vec& s, Eigen::Index) { return ex(s); }, 1000);
      CHECK(tr.us.cwiseAbs().maxCoeff() <= c.limit());
      ok += success_criterion(tr, c);
    }
    CHECK(ok >= 95);
  }
}
